//! The rule language: wff patterns, rule templates with typed variables,
//! ground rule instances, rule-class hierarchy, and the `.rkb` parser.

mod parser;
pub mod sexpr;

pub use parser::{parse_kb, ParseError};

use std::collections::BTreeMap;
use std::fmt;

use crate::calculus::{Confidence, TnormFamily};

// --- errors ---------------------------------------------------------------

/// Failures when operating on an already-parsed knowledge base.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ModelError {
    #[error("unbound template variable `{var}` in rule `{template}`")]
    UnboundVariable { template: String, var: String },
    #[error("object `{object}` has type `{actual}`, rule `{template}` needs `{expected}` for `{var}`")]
    TypeMismatch {
        template: String,
        var: String,
        expected: String,
        actual: String,
        object: String,
    },
    #[error("unknown object `{0}`")]
    UnknownObject(String),
    #[error("unknown rule class `{0}`")]
    UnknownClass(String),
}

// --- names and terms ------------------------------------------------------

/// A path in the rule-class hierarchy; the empty path is the root `/`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct ClassPath(pub Vec<String>);

impl ClassPath {
    pub fn root() -> ClassPath {
        ClassPath(Vec::new())
    }

    pub fn parse(text: &str) -> ClassPath {
        if text == "/" {
            return ClassPath::root();
        }
        ClassPath(text.split('/').map(str::to_string).collect())
    }

    pub fn is_root(&self) -> bool {
        self.0.is_empty()
    }

    /// True when `self` equals `ancestor` or lies below it.
    pub fn is_within(&self, ancestor: &ClassPath) -> bool {
        self.0.len() >= ancestor.0.len() && self.0[..ancestor.0.len()] == ancestor.0[..]
    }

    /// Every proper prefix, shortest first (root excluded).
    pub fn ancestors(&self) -> impl Iterator<Item = ClassPath> + '_ {
        (1..self.0.len()).map(|n| ClassPath(self.0[..n].to_vec()))
    }
}

impl fmt::Display for ClassPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_empty() {
            f.write_str("/")
        } else {
            f.write_str(&self.0.join("/"))
        }
    }
}

/// An argument position in a pattern: a template variable or a literal symbol.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub enum Term {
    Var(String),
    Sym(String),
}

impl Term {
    fn ground(
        &self,
        template: &str,
        bindings: &BTreeMap<String, String>,
    ) -> Result<String, ModelError> {
        match self {
            Term::Sym(s) => Ok(s.clone()),
            Term::Var(v) => bindings.get(v).cloned().ok_or(ModelError::UnboundVariable {
                template: template.to_string(),
                var: v.clone(),
            }),
        }
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Term::Var(v) | Term::Sym(v) => f.write_str(v),
        }
    }
}

// --- patterns -------------------------------------------------------------

/// A wff pattern: one value assignment to one variable, possibly about an
/// object-typed term.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct WffPattern {
    pub variable: String,
    pub object: Option<Term>,
    pub value: String,
}

impl WffPattern {
    pub fn ground(
        &self,
        template: &str,
        bindings: &BTreeMap<String, String>,
    ) -> Result<GroundWff, ModelError> {
        Ok(GroundWff {
            variable: self.variable.clone(),
            object: match &self.object {
                Some(t) => Some(t.ground(template, bindings)?),
                None => None,
            },
            value: self.value.clone(),
        })
    }
}

impl fmt::Display for WffPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.object {
            Some(o) => write!(f, "({} {} {})", self.variable, o, self.value),
            None => write!(f, "({} {})", self.variable, self.value),
        }
    }
}

/// A fully ground wff: the propositional unit the engine assigns an
/// uncertainty interval to.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct GroundWff {
    pub variable: String,
    pub object: Option<String>,
    pub value: String,
}

impl fmt::Display for GroundWff {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.object {
            Some(o) => write!(f, "({} {} {})", self.variable, o, self.value),
            None => write!(f, "({} {})", self.variable, self.value),
        }
    }
}

/// A host-predicate invocation.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct PredicateCall {
    pub name: String,
    pub args: Vec<Term>,
}

impl PredicateCall {
    pub fn ground(
        &self,
        template: &str,
        bindings: &BTreeMap<String, String>,
    ) -> Result<GroundCall, ModelError> {
        Ok(GroundCall {
            name: self.name.clone(),
            args: self
                .args
                .iter()
                .map(|t| t.ground(template, bindings))
                .collect::<Result<_, _>>()?,
        })
    }
}

impl fmt::Display for PredicateCall {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}", self.name)?;
        for a in &self.args {
            write!(f, " {a}")?;
        }
        f.write_str(")")
    }
}

/// A ground host-predicate invocation.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct GroundCall {
    pub name: String,
    pub args: Vec<String>,
}

impl fmt::Display for GroundCall {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}", self.name)?;
        for a in &self.args {
            write!(f, " {a}")?;
        }
        f.write_str(")")
    }
}

/// Which interval component a threshold test reads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Measure {
    Lb,
    Ub,
    Ignorance,
}

impl Measure {
    pub fn name(self) -> &'static str {
        match self {
            Measure::Lb => "lb",
            Measure::Ub => "ub",
            Measure::Ignorance => "ignorance",
        }
    }
}

impl std::fmt::Display for Measure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Comparison operator of a threshold test.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Cmp {
    Ge,
    Gt,
    Le,
    Lt,
}

impl Cmp {
    pub fn name(self) -> &'static str {
        match self {
            Cmp::Ge => ">=",
            Cmp::Gt => ">",
            Cmp::Le => "<=",
            Cmp::Lt => "<",
        }
    }

    pub fn holds(self, lhs: f64, rhs: f64) -> bool {
        match self {
            Cmp::Ge => lhs >= rhs,
            Cmp::Gt => lhs > rhs,
            Cmp::Le => lhs <= rhs,
            Cmp::Lt => lhs < rhs,
        }
    }
}

impl std::fmt::Display for Cmp {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// A monotonic premise of a rule template.
#[derive(Debug, Clone, PartialEq)]
pub enum Premise {
    /// A wff pattern, optionally negated.
    Wff { pattern: WffPattern, negated: bool },
    /// A host-predicate call contributing its confidence result.
    Call(PredicateCall),
    /// A crisp threshold test on a wff's current interval.
    Test {
        measure: Measure,
        pattern: WffPattern,
        cmp: Cmp,
        threshold: f64,
    },
}

/// A non-monotonic antecedent: holds iff the wff's LB is still below `alpha`.
#[derive(Debug, Clone, PartialEq)]
pub struct NmPremise {
    pub pattern: WffPattern,
    pub alpha: Confidence,
}

// --- declarations ---------------------------------------------------------

/// A declared variable (the subject of wffs).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VariableDecl {
    pub name: String,
    /// Object type the variable ranges over; `None` for propositional.
    pub object_type: Option<String>,
    /// Member of the distinguished input set: takes evidence from outside.
    pub is_input: bool,
    /// Aggregation family for combining multiple supports of this variable's
    /// wffs; `None` falls back to the engine's resolution order.
    pub agg: Option<TnormFamily>,
}

/// A declared host predicate (procedural attachment), identified by name and
/// arity; its body is registered by the embedding program.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PredicateDecl {
    pub name: String,
    pub arity: usize,
}

/// One typed template variable of a rule.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TemplateVar {
    pub name: String,
    pub object_type: String,
}

/// A Horn-clause rule with uncertainty qualifiers, prior to instantiation.
#[derive(Debug, Clone, PartialEq)]
pub struct RuleTemplate {
    pub name: String,
    pub class: ClassPath,
    pub vars: Vec<TemplateVar>,
    /// Conjunction of predicate calls gating the rule's applicability.
    pub context: Vec<PredicateCall>,
    pub premises: Vec<Premise>,
    pub nm_premises: Vec<NmPremise>,
    pub sufficiency: Confidence,
    pub necessity: Confidence,
    pub tnorm: TnormFamily,
    pub conclusion: WffPattern,
}

// --- ground instances -----------------------------------------------------

/// A ground monotonic premise.
#[derive(Debug, Clone, PartialEq)]
pub enum GroundPremise {
    Wff { wff: GroundWff, negated: bool },
    Call(GroundCall),
    Test {
        measure: Measure,
        wff: GroundWff,
        cmp: Cmp,
        threshold: f64,
    },
}

/// A fully ground (propositional) justification produced from a template.
#[derive(Debug, Clone, PartialEq)]
pub struct RuleInstance {
    /// `template@obj1+obj2` in template-variable order; bare template name
    /// when the template has no variables.
    pub id: String,
    pub template: String,
    pub bindings: BTreeMap<String, String>,
    pub context: Vec<GroundCall>,
    pub premises: Vec<GroundPremise>,
    pub nm_premises: Vec<(GroundWff, Confidence)>,
    pub conclusion: GroundWff,
}

/// Ground a template against object bindings.
///
/// Idempotent: the same (template, bindings) pair always produces the same
/// instance id and content.
pub fn instantiate(
    template: &RuleTemplate,
    bindings: &BTreeMap<String, String>,
    object_types: &BTreeMap<String, String>,
) -> Result<RuleInstance, ModelError> {
    for tv in &template.vars {
        let object = bindings
            .get(&tv.name)
            .ok_or_else(|| ModelError::UnboundVariable {
                template: template.name.clone(),
                var: tv.name.clone(),
            })?;
        let actual = object_types
            .get(object)
            .ok_or_else(|| ModelError::UnknownObject(object.clone()))?;
        if *actual != tv.object_type {
            return Err(ModelError::TypeMismatch {
                template: template.name.clone(),
                var: tv.name.clone(),
                expected: tv.object_type.clone(),
                actual: actual.clone(),
                object: object.clone(),
            });
        }
    }

    let id = if template.vars.is_empty() {
        template.name.clone()
    } else {
        let objs: Vec<&str> = template
            .vars
            .iter()
            .map(|tv| bindings[&tv.name].as_str())
            .collect();
        format!("{}@{}", template.name, objs.join("+"))
    };

    let name = &template.name;
    let premises = template
        .premises
        .iter()
        .map(|p| {
            Ok(match p {
                Premise::Wff { pattern, negated } => GroundPremise::Wff {
                    wff: pattern.ground(name, bindings)?,
                    negated: *negated,
                },
                Premise::Call(call) => GroundPremise::Call(call.ground(name, bindings)?),
                Premise::Test {
                    measure,
                    pattern,
                    cmp,
                    threshold,
                } => GroundPremise::Test {
                    measure: *measure,
                    wff: pattern.ground(name, bindings)?,
                    cmp: *cmp,
                    threshold: *threshold,
                },
            })
        })
        .collect::<Result<Vec<_>, ModelError>>()?;

    Ok(RuleInstance {
        id,
        template: name.clone(),
        bindings: template
            .vars
            .iter()
            .map(|tv| (tv.name.clone(), bindings[&tv.name].clone()))
            .collect(),
        context: template
            .context
            .iter()
            .map(|c| c.ground(name, bindings))
            .collect::<Result<_, _>>()?,
        premises,
        nm_premises: template
            .nm_premises
            .iter()
            .map(|nm| Ok((nm.pattern.ground(name, bindings)?, nm.alpha)))
            .collect::<Result<Vec<_>, ModelError>>()?,
        conclusion: template.conclusion.ground(name, bindings)?,
    })
}

// --- knowledge base -------------------------------------------------------

/// A parsed, validated rule base. Immutable after construction.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct KnowledgeBase {
    pub object_types: Vec<String>,
    pub variables: BTreeMap<String, VariableDecl>,
    pub predicates: BTreeMap<String, PredicateDecl>,
    /// Every declared class path, ancestors included.
    pub classes: Vec<ClassPath>,
    pub templates: BTreeMap<String, RuleTemplate>,
}

impl KnowledgeBase {
    /// Template names whose class lies at or below any of the given paths.
    /// An empty filter selects every template.
    pub fn scope_rules(&self, class_filter: &[ClassPath]) -> Result<Vec<String>, ModelError> {
        for path in class_filter {
            if !path.is_root() && !self.classes.contains(path) {
                return Err(ModelError::UnknownClass(path.to_string()));
            }
        }
        Ok(self
            .templates
            .values()
            .filter(|t| {
                class_filter.is_empty()
                    || class_filter.iter().any(|p| t.class.is_within(p))
            })
            .map(|t| t.name.clone())
            .collect())
    }

    /// Canonical source form: declarations sorted within kind, rules sorted
    /// by name, fixed keyword order and whitespace.
    pub fn pretty_print(&self) -> String {
        parser::pretty_print(self)
    }

    /// Hex SHA-256 of the canonical source form; identifies KB content
    /// independently of incidental formatting.
    pub fn content_hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let digest = Sha256::digest(self.pretty_print().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}
