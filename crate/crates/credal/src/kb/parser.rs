//! `.rkb` source parser and canonical pretty-printer.
//!
//! A KB file is a sequence of declarations — `(object-type …)`,
//! `(variable …)`, `(predicate …)`, `(rule-class …)` — and `(rule …)` forms.
//! Declarations may appear in any order relative to the rules that use them.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use crate::calculus::{Confidence, TnormFamily};
use crate::kb::sexpr::{self, Sexpr, Span};
use crate::kb::{
    ClassPath, Cmp, KnowledgeBase, Measure, NmPremise, PredicateCall, PredicateDecl, Premise,
    RuleTemplate, TemplateVar, Term, VariableDecl, WffPattern,
};

/// A positioned KB parse failure.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{line}:{col}: {message}")]
pub struct ParseError {
    pub line: u32,
    pub col: u32,
    pub message: String,
}

fn err<T>(span: Span, message: impl Into<String>) -> Result<T, ParseError> {
    Err(ParseError {
        line: span.line,
        col: span.col,
        message: message.into(),
    })
}

/// Heads with fixed meaning inside rule bodies; not usable as declared names.
const RESERVED: [&str; 5] = ["not", "or", "lb", "ub", "ignorance"];

/// Parse `.rkb` source text into a validated knowledge base.
pub fn parse_kb(source: &str) -> Result<KnowledgeBase, ParseError> {
    let data = sexpr::parse_all(source).map_err(|e| ParseError {
        line: e.span.line,
        col: e.span.col,
        message: e.message,
    })?;

    let mut kb = KnowledgeBase::default();
    let mut explicit_classes: BTreeSet<ClassPath> = BTreeSet::new();
    let mut all_classes: BTreeSet<ClassPath> = BTreeSet::new();
    let mut rule_forms: Vec<&[Sexpr]> = Vec::new();

    // First pass: declarations, so use sites may precede them textually.
    for datum in &data {
        let span = datum.span();
        let items = match datum.list() {
            Some(items) if !items.is_empty() => items,
            _ => return err(span, "expected a non-empty declaration list"),
        };
        let head = match items[0].atom() {
            Some(h) => h,
            None => return err(items[0].span(), "declaration head must be a symbol"),
        };
        match head {
            "object-type" => {
                let name = name_arg(items, "object-type")?;
                if kb.object_types.contains(&name.to_string()) {
                    return err(items[1].span(), format!("duplicate object-type `{name}`"));
                }
                kb.object_types.push(name.to_string());
            }
            "variable" => {
                let decl = parse_variable_decl(items)?;
                if kb.variables.contains_key(&decl.name) {
                    return err(items[1].span(), format!("duplicate variable `{}`", decl.name));
                }
                kb.variables.insert(decl.name.clone(), decl);
            }
            "predicate" => {
                let decl = parse_predicate_decl(items)?;
                if kb.predicates.contains_key(&decl.name) {
                    return err(
                        items[1].span(),
                        format!("duplicate predicate `{}`", decl.name),
                    );
                }
                kb.predicates.insert(decl.name.clone(), decl);
            }
            "rule-class" => {
                let name = name_arg(items, "rule-class")?;
                let path = ClassPath::parse(name);
                if path.is_root() {
                    return err(items[1].span(), "cannot declare the root rule class");
                }
                if !explicit_classes.insert(path.clone()) {
                    return err(items[1].span(), format!("duplicate rule-class `{name}`"));
                }
                all_classes.extend(path.ancestors());
                all_classes.insert(path);
            }
            "rule" => rule_forms.push(items),
            other => return err(items[0].span(), format!("unknown declaration `{other}`")),
        }
    }
    kb.classes = all_classes.into_iter().collect();

    // Cross-kind name collisions would make premise heads ambiguous.
    for name in kb.variables.keys() {
        if kb.predicates.contains_key(name) {
            return err(
                Span { line: 1, col: 1 },
                format!("`{name}` is declared as both variable and predicate"),
            );
        }
    }
    for v in kb.variables.values() {
        if let Some(ty) = &v.object_type {
            if !kb.object_types.contains(ty) {
                return err(
                    Span { line: 1, col: 1 },
                    format!("variable `{}` references undeclared object-type `{ty}`", v.name),
                );
            }
        }
    }

    // Second pass: rules.
    for items in rule_forms {
        let template = parse_rule(items, &kb)?;
        if kb.templates.contains_key(&template.name) {
            return err(items[1].span(), format!("duplicate rule `{}`", template.name));
        }
        kb.templates.insert(template.name.clone(), template);
    }

    Ok(kb)
}

// --- declaration parsing --------------------------------------------------

fn name_arg<'a>(items: &'a [Sexpr], what: &str) -> Result<&'a str, ParseError> {
    if items.len() != 2 {
        return err(items[0].span(), format!("`{what}` takes exactly one name"));
    }
    let name = atom(&items[1], "name")?;
    check_declarable(name, items[1].span())?;
    Ok(name)
}

fn check_declarable(name: &str, span: Span) -> Result<(), ParseError> {
    if RESERVED.contains(&name) {
        return err(span, format!("`{name}` is a reserved word"));
    }
    if name.starts_with('?') || name.starts_with(':') {
        return err(span, format!("`{name}` is not a valid declared name"));
    }
    Ok(())
}

fn atom<'a>(datum: &'a Sexpr, what: &str) -> Result<&'a str, ParseError> {
    match datum.atom() {
        Some(text) => Ok(text),
        None => err(datum.span(), format!("expected {what}, found a list"))?,
    }
}

fn number(datum: &Sexpr, what: &str) -> Result<f64, ParseError> {
    let text = atom(datum, what)?;
    match text.parse::<f64>() {
        Ok(v) => Ok(v),
        Err(_) => err(datum.span(), format!("expected {what}, found `{text}`")),
    }
}

fn confidence(datum: &Sexpr, what: &str) -> Result<Confidence, ParseError> {
    let v = number(datum, what)?;
    Confidence::new(v).or_else(|_| err(datum.span(), format!("{what} {v} is outside [0, 1]")))
}

fn family(datum: &Sexpr) -> Result<TnormFamily, ParseError> {
    let text = atom(datum, "t-norm family")?;
    text.parse()
        .or_else(|_| err(datum.span(), format!("unknown t-norm family `{text}`")))
}

fn parse_variable_decl(items: &[Sexpr]) -> Result<VariableDecl, ParseError> {
    if items.len() < 2 {
        return err(items[0].span(), "`variable` needs a name");
    }
    let name = atom(&items[1], "variable name")?;
    check_declarable(name, items[1].span())?;
    let mut decl = VariableDecl {
        name: name.to_string(),
        object_type: None,
        is_input: false,
        agg: None,
    };
    let mut rest = items[2..].iter();
    while let Some(item) = rest.next() {
        match atom(item, "variable option")? {
            ":of" => {
                let ty = rest
                    .next()
                    .ok_or(())
                    .or_else(|_| err(item.span(), "`:of` needs an object-type"))?;
                decl.object_type = Some(atom(ty, "object-type name")?.to_string());
            }
            ":input" => decl.is_input = true,
            ":agg" => {
                let fam = rest
                    .next()
                    .ok_or(())
                    .or_else(|_| err(item.span(), "`:agg` needs a t-norm family"))?;
                decl.agg = Some(family(fam)?);
            }
            other => return err(item.span(), format!("unknown variable option `{other}`")),
        }
    }
    Ok(decl)
}

fn parse_predicate_decl(items: &[Sexpr]) -> Result<PredicateDecl, ParseError> {
    if items.len() != 3 {
        return err(items[0].span(), "`predicate` takes a name and an arity");
    }
    let name = atom(&items[1], "predicate name")?;
    check_declarable(name, items[1].span())?;
    let arity = number(&items[2], "arity")?;
    if arity < 0.0 || arity.fract() != 0.0 {
        return err(items[2].span(), "arity must be a non-negative integer");
    }
    Ok(PredicateDecl {
        name: name.to_string(),
        arity: arity as usize,
    })
}

// --- rule parsing ---------------------------------------------------------

fn parse_rule(items: &[Sexpr], kb: &KnowledgeBase) -> Result<RuleTemplate, ParseError> {
    if items.len() < 2 {
        return err(items[0].span(), "`rule` needs a name");
    }
    let name = atom(&items[1], "rule name")?;
    check_declarable(name, items[1].span())?;

    let mut sections: BTreeMap<&str, &Sexpr> = BTreeMap::new();
    let mut rest = items[2..].iter();
    while let Some(item) = rest.next() {
        let key = atom(item, "rule keyword")?;
        if !key.starts_with(':') {
            return err(item.span(), format!("expected a `:keyword`, found `{key}`"));
        }
        let value = rest
            .next()
            .ok_or(())
            .or_else(|_| err(item.span(), format!("`{key}` needs a value")))?;
        if sections.insert(key, value).is_some() {
            return err(item.span(), format!("duplicate `{key}` section"));
        }
    }
    for key in sections.keys() {
        const KNOWN: [&str; 9] = [
            ":class",
            ":vars",
            ":context",
            ":premises",
            ":nm-premises",
            ":sufficiency",
            ":necessity",
            ":tnorm",
            ":conclusion",
        ];
        if !KNOWN.contains(key) {
            return err(items[0].span(), format!("unknown rule section `{key}`"));
        }
    }
    let require = |key: &str| -> Result<&Sexpr, ParseError> {
        sections
            .get(key)
            .copied()
            .ok_or(())
            .or_else(|_| err(items[0].span(), format!("rule `{name}` is missing `{key}`")))
    };

    // Variables first; patterns are validated against them.
    let mut vars: Vec<TemplateVar> = Vec::new();
    if let Some(datum) = sections.get(":vars") {
        for entry in list(datum, "`:vars` list")? {
            let pair = list(entry, "`:vars` entry")?;
            if pair.len() != 2 {
                return err(entry.span(), "a `:vars` entry is (?name object-type)");
            }
            let var = atom(&pair[0], "template variable")?;
            if !var.starts_with('?') {
                return err(pair[0].span(), format!("template variable `{var}` must start with `?`"));
            }
            let ty = atom(&pair[1], "object-type name")?;
            if !kb.object_types.contains(&ty.to_string()) {
                return err(pair[1].span(), format!("undeclared object-type `{ty}`"));
            }
            if vars.iter().any(|tv| tv.name == var) {
                return err(pair[0].span(), format!("duplicate template variable `{var}`"));
            }
            vars.push(TemplateVar {
                name: var.to_string(),
                object_type: ty.to_string(),
            });
        }
    }
    let var_names: BTreeSet<&str> = vars.iter().map(|tv| tv.name.as_str()).collect();
    let ctx = RuleCtx {
        kb,
        rule: name,
        vars: &var_names,
    };

    let class = match sections.get(":class") {
        Some(datum) => {
            let text = atom(datum, "class path")?;
            let path = ClassPath::parse(text);
            if !path.is_root() && !kb.classes.contains(&path) {
                return err(datum.span(), format!("undeclared rule class `{text}`"));
            }
            path
        }
        None => ClassPath::root(),
    };

    let mut context = Vec::new();
    if let Some(datum) = sections.get(":context") {
        for entry in list(datum, "`:context` list")? {
            match ctx.parse_premise(entry)? {
                Premise::Call(call) => context.push(call),
                _ => {
                    return err(
                        entry.span(),
                        "context entries must be declared predicate calls",
                    )
                }
            }
        }
    }

    let mut premises = Vec::new();
    if let Some(datum) = sections.get(":premises") {
        for entry in list(datum, "`:premises` list")? {
            premises.push(ctx.parse_premise(entry)?);
        }
    }

    let mut nm_premises = Vec::new();
    if let Some(datum) = sections.get(":nm-premises") {
        for entry in list(datum, "`:nm-premises` list")? {
            let parts = list(entry, "`:nm-premises` entry")?;
            if parts.len() != 3 || parts[1].atom() != Some(":alpha") {
                return err(entry.span(), "an `:nm-premises` entry is ((pattern) :alpha a)");
            }
            nm_premises.push(NmPremise {
                pattern: ctx.parse_pattern(&parts[0])?,
                alpha: confidence(&parts[2], "alpha")?,
            });
        }
    }

    if premises.is_empty() && nm_premises.is_empty() {
        return err(items[0].span(), format!("rule `{name}` has no premises"));
    }

    let conclusion_datum = require(":conclusion")?;
    if let Some(parts) = conclusion_datum.list() {
        match parts.first().and_then(Sexpr::atom) {
            Some("or") => return err(conclusion_datum.span(), "disjunctive conclusion"),
            Some("not") => return err(conclusion_datum.span(), "negated conclusion"),
            _ => {}
        }
    }
    let conclusion = ctx.parse_pattern(conclusion_datum)?;

    let sufficiency = confidence(require(":sufficiency")?, "sufficiency")?;
    let necessity = match sections.get(":necessity") {
        Some(datum) => confidence(datum, "necessity")?,
        None => Confidence::ZERO,
    };
    let tnorm = family(require(":tnorm")?)?;

    // Conclusion variables must be bound by some antecedent.
    let mut antecedent_vars: BTreeSet<&str> = BTreeSet::new();
    for p in &premises {
        collect_premise_vars(p, &mut antecedent_vars);
    }
    for nm in &nm_premises {
        collect_pattern_vars(&nm.pattern, &mut antecedent_vars);
    }
    let mut conclusion_vars = BTreeSet::new();
    collect_pattern_vars(&conclusion, &mut conclusion_vars);
    for v in &conclusion_vars {
        if !antecedent_vars.contains(v) {
            return err(
                conclusion_datum.span(),
                format!("conclusion variable `{v}` appears in no premise"),
            );
        }
    }
    // Declared variables must be used somewhere.
    let mut used = antecedent_vars;
    used.extend(conclusion_vars);
    for call in &context {
        for t in &call.args {
            if let Term::Var(v) = t {
                used.insert(v);
            }
        }
    }
    for tv in &vars {
        if !used.contains(tv.name.as_str()) {
            return err(items[0].span(), format!("unused template variable `{}`", tv.name));
        }
    }

    Ok(RuleTemplate {
        name: name.to_string(),
        class,
        vars,
        context,
        premises,
        nm_premises,
        sufficiency,
        necessity,
        tnorm,
        conclusion,
    })
}

fn list<'a>(datum: &'a Sexpr, what: &str) -> Result<&'a [Sexpr], ParseError> {
    match datum.list() {
        Some(items) => Ok(items),
        None => err(datum.span(), format!("expected {what}"))?,
    }
}

fn collect_pattern_vars<'a>(pattern: &'a WffPattern, out: &mut BTreeSet<&'a str>) {
    if let Some(Term::Var(v)) = &pattern.object {
        out.insert(v);
    }
}

fn collect_premise_vars<'a>(premise: &'a Premise, out: &mut BTreeSet<&'a str>) {
    match premise {
        Premise::Wff { pattern, .. } | Premise::Test { pattern, .. } => {
            collect_pattern_vars(pattern, out)
        }
        Premise::Call(call) => {
            for t in &call.args {
                if let Term::Var(v) = t {
                    out.insert(v);
                }
            }
        }
    }
}

/// Shared state for parsing patterns inside one rule.
struct RuleCtx<'a> {
    kb: &'a KnowledgeBase,
    rule: &'a str,
    vars: &'a BTreeSet<&'a str>,
}

impl RuleCtx<'_> {
    fn parse_term(&self, datum: &Sexpr) -> Result<Term, ParseError> {
        let text = atom(datum, "term")?;
        if let Some(stripped) = text.strip_prefix('?') {
            if stripped.is_empty() || !self.vars.contains(text) {
                return err(
                    datum.span(),
                    format!("variable `{text}` is not declared in `:vars` of rule `{}`", self.rule),
                );
            }
            Ok(Term::Var(text.to_string()))
        } else {
            Ok(Term::Sym(text.to_string()))
        }
    }

    fn parse_pattern(&self, datum: &Sexpr) -> Result<WffPattern, ParseError> {
        let items = list(datum, "a wff pattern")?;
        let head = atom(
            items.first()
                .ok_or(())
                .or_else(|_| err(datum.span(), "empty wff pattern"))?,
            "variable name",
        )?;
        let decl = self
            .kb
            .variables
            .get(head)
            .ok_or(())
            .or_else(|_| err(items[0].span(), format!("undeclared variable `{head}`")))?;
        match &decl.object_type {
            Some(_) => {
                if items.len() != 3 {
                    return err(
                        datum.span(),
                        format!("variable `{head}` is object-typed: expected ({head} object value)"),
                    );
                }
                Ok(WffPattern {
                    variable: head.to_string(),
                    object: Some(self.parse_term(&items[1])?),
                    value: atom(&items[2], "value")?.to_string(),
                })
            }
            None => {
                if items.len() != 2 {
                    return err(
                        datum.span(),
                        format!("variable `{head}` is propositional: expected ({head} value)"),
                    );
                }
                Ok(WffPattern {
                    variable: head.to_string(),
                    object: None,
                    value: atom(&items[1], "value")?.to_string(),
                })
            }
        }
    }

    fn parse_premise(&self, datum: &Sexpr) -> Result<Premise, ParseError> {
        let items = list(datum, "a premise")?;
        let head = atom(
            items.first()
                .ok_or(())
                .or_else(|_| err(datum.span(), "empty premise"))?,
            "premise head",
        )?;
        match head {
            "or" => err(datum.span(), "disjunction in premises is not supported"),
            "not" => {
                if items.len() != 2 {
                    return err(datum.span(), "`not` takes exactly one wff pattern");
                }
                Ok(Premise::Wff {
                    pattern: self.parse_pattern(&items[1])?,
                    negated: true,
                })
            }
            "lb" | "ub" | "ignorance" => {
                let measure = match head {
                    "lb" => Measure::Lb,
                    "ub" => Measure::Ub,
                    _ => Measure::Ignorance,
                };
                if items.len() != 4 {
                    return err(datum.span(), format!("a test is ({head} (pattern) op threshold)"));
                }
                let cmp = match atom(&items[2], "comparison operator")? {
                    ">=" => Cmp::Ge,
                    ">" => Cmp::Gt,
                    "<=" => Cmp::Le,
                    "<" => Cmp::Lt,
                    other => {
                        return err(items[2].span(), format!("unknown comparison `{other}`"))
                    }
                };
                let threshold = number(&items[3], "threshold")?;
                if !(0.0..=1.0).contains(&threshold) {
                    return err(items[3].span(), format!("threshold {threshold} is outside [0, 1]"));
                }
                Ok(Premise::Test {
                    measure,
                    pattern: self.parse_pattern(&items[1])?,
                    cmp,
                    threshold,
                })
            }
            _ if self.kb.predicates.contains_key(head) => {
                let decl = &self.kb.predicates[head];
                let args = items[1..]
                    .iter()
                    .map(|d| self.parse_term(d))
                    .collect::<Result<Vec<_>, _>>()?;
                if args.len() != decl.arity {
                    return err(
                        datum.span(),
                        format!(
                            "predicate `{head}` has arity {}, called with {} arguments",
                            decl.arity,
                            args.len()
                        ),
                    );
                }
                Ok(Premise::Call(PredicateCall {
                    name: head.to_string(),
                    args,
                }))
            }
            _ if self.kb.variables.contains_key(head) => Ok(Premise::Wff {
                pattern: self.parse_pattern(datum)?,
                negated: false,
            }),
            other => err(
                items[0].span(),
                format!("`{other}` is neither a declared variable nor a predicate"),
            ),
        }
    }
}

// --- canonical pretty-printer ---------------------------------------------

fn premise_text(p: &Premise) -> String {
    match p {
        Premise::Wff { pattern, negated: false } => pattern.to_string(),
        Premise::Wff { pattern, negated: true } => format!("(not {pattern})"),
        Premise::Call(call) => call.to_string(),
        Premise::Test {
            measure,
            pattern,
            cmp,
            threshold,
        } => format!("({} {pattern} {} {threshold})", measure.name(), cmp.name()),
    }
}

/// Emit the canonical source form of a knowledge base; the result re-parses
/// to an equal KB and is a fixed point of parse-then-print.
pub(crate) fn pretty_print(kb: &KnowledgeBase) -> String {
    let mut out = String::new();
    for ty in &kb.object_types {
        let _ = writeln!(out, "(object-type {ty})");
    }
    for v in kb.variables.values() {
        let _ = write!(out, "(variable {}", v.name);
        if let Some(ty) = &v.object_type {
            let _ = write!(out, " :of {ty}");
        }
        if v.is_input {
            let _ = write!(out, " :input");
        }
        if let Some(fam) = v.agg {
            let _ = write!(out, " :agg {fam}");
        }
        out.push_str(")\n");
    }
    for p in kb.predicates.values() {
        let _ = writeln!(out, "(predicate {} {})", p.name, p.arity);
    }
    for c in &kb.classes {
        let _ = writeln!(out, "(rule-class {c})");
    }
    for rule in kb.templates.values() {
        let _ = write!(out, "\n(rule {}\n  :class {}", rule.name, rule.class);
        if !rule.vars.is_empty() {
            let entries: Vec<String> = rule
                .vars
                .iter()
                .map(|tv| format!("({} {})", tv.name, tv.object_type))
                .collect();
            let _ = write!(out, "\n  :vars ({})", entries.join(" "));
        }
        if !rule.context.is_empty() {
            let entries: Vec<String> = rule.context.iter().map(|c| c.to_string()).collect();
            let _ = write!(out, "\n  :context ({})", entries.join(" "));
        }
        if !rule.premises.is_empty() {
            let _ = write!(out, "\n  :premises (");
            for (i, p) in rule.premises.iter().enumerate() {
                if i > 0 {
                    let _ = write!(out, "\n             ");
                }
                let _ = write!(out, "{}", premise_text(p));
            }
            let _ = write!(out, ")");
        }
        if !rule.nm_premises.is_empty() {
            let _ = write!(out, "\n  :nm-premises (");
            for (i, nm) in rule.nm_premises.iter().enumerate() {
                if i > 0 {
                    let _ = write!(out, "\n                ");
                }
                let _ = write!(out, "({} :alpha {})", nm.pattern, nm.alpha);
            }
            let _ = write!(out, ")");
        }
        let _ = write!(
            out,
            "\n  :sufficiency {}\n  :necessity {}\n  :tnorm {}\n  :conclusion {})\n",
            rule.sufficiency, rule.necessity, rule.tnorm, rule.conclusion
        );
    }
    out
}
