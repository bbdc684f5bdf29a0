//! Runtime inference engine.
//!
//! Holds the instance-level (fully propositional) dependency graph built by
//! instantiating the compiled templates over created objects. Evidence
//! assertion is lazy — it only marks descendant nodes unreliable; the actual
//! interval propagation happens on demand, in topological order, touching
//! each node at most once per pass. Passes are steppable at node
//! granularity, which is what gives the task executive its preemption
//! points.

mod explain;
pub mod track;

pub use explain::{PremiseTrace, ProofTrace, RuleTrace};

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::time::Instant;

use crate::calculus::{negate, tconorm_n, tnorm_n, Confidence, TnormFamily, UncertaintyInterval};
use crate::compile::CompiledNetwork;
use crate::kb::{
    instantiate, GroundCall, GroundPremise, GroundWff, Measure, ModelError, RuleInstance,
};
use crate::nonmono::{
    self, InternalKind, LoopContribution, LoopRuleSpec, LoopSpec, NonmonoError,
    DEFAULT_ASSUMPTION_CAP,
};

// --- errors and basic vocabulary ------------------------------------------

/// Engine operation failure.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EngineError {
    #[error("`{0}` is not an input wff; only inputs take evidence from outside")]
    NotAnInput(String),
    #[error("unknown wff `{0}`")]
    UnknownWff(String),
    #[error("unknown variable `{0}`")]
    UnknownVariable(String),
    #[error("malformed wff `{0}`: {1}")]
    MalformedWff(String, String),
    #[error("unknown object `{0}`")]
    UnknownObject(String),
    #[error("duplicate object `{0}`")]
    DuplicateObject(String),
    #[error("undeclared object type `{0}`")]
    UndeclaredType(String),
    #[error("predicate `{0}` is declared in the KB but not registered")]
    UnregisteredPredicate(String),
    #[error("a default is already registered on `{0}`")]
    DuplicateDefault(String),
    #[error("threshold {0} is outside [0, 1]")]
    BadThreshold(f64),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Cache state of a node after the last pass that touched it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Validity {
    Valid,
    /// An ancestor input changed since this node was last recomputed.
    Unreliable,
    /// Ignorance at or above the node's threshold: too uninformative to use.
    Ignorant,
    /// Confirmation and refutation overlap: `lb > ub`.
    Inconsistent,
}

impl Validity {
    pub fn name(self) -> &'static str {
        match self {
            Validity::Valid => "valid",
            Validity::Unreliable => "unreliable",
            Validity::Ignorant => "ignorant",
            Validity::Inconsistent => "inconsistent",
        }
    }
}

impl std::fmt::Display for Validity {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Ignorance at or above this flags a node `ignorant` unless overridden.
pub const DEFAULT_IGNORANCE_THRESHOLD: f64 = 0.95;

/// A default value installed on a wff: published while the wff's underlying
/// support stays too ignorant, retracted as soon as real support arrives.
#[derive(Debug, Clone, PartialEq)]
pub struct DefaultSpec {
    pub wff: GroundWff,
    pub interval: UncertaintyInterval,
    /// Underlying ignorance at or above this activates the default.
    pub threshold: f64,
}

/// A detected contradiction: a wff whose bounds have crossed.
#[derive(Debug, Clone, PartialEq)]
pub struct Conflict {
    pub wff: GroundWff,
    pub lb: f64,
    pub lb_of_negation: f64,
    /// Minimal sets of evidence-bearing inputs that suffice, on their own,
    /// to recreate the contradiction.
    pub suspected_sources: Vec<Vec<GroundWff>>,
}

/// A loop that could not be resolved during a pass.
#[derive(Debug, Clone, PartialEq)]
pub struct LoopAnomaly {
    pub wffs: Vec<GroundWff>,
    pub reason: String,
}

/// Work counters; `last_pass_*` reset at the start of every pass.
#[derive(Debug, Clone, Default)]
pub struct EngineStats {
    pub passes: u64,
    pub last_pass_recomputed: u64,
    /// Recompute count per node label in the last pass (wffs display as
    /// patterns, rules by instance id).
    pub last_pass_visits: BTreeMap<String, u32>,
    pub total_recomputed: u64,
    pub predicate_evals: u64,
    pub predicate_memo_hits: u64,
}

// --- host predicates ------------------------------------------------------

/// Read-only engine state visible to host predicates.
pub struct PredicateCtx<'a> {
    /// Scalar meta-variables (`set_meta`), e.g. the current time budget.
    pub meta: &'a BTreeMap<String, f64>,
    /// Per-object string attributes (`set_attribute`), keyed (object, name).
    pub attributes: &'a BTreeMap<(String, String), String>,
}

type PredicateFn = Box<dyn Fn(&PredicateCtx, &[String]) -> Confidence + Send>;

/// The procedural half of a knowledge base: named host predicates the rules
/// can call. Results are memoized per propagation pass.
pub struct PredicateRegistry {
    fns: BTreeMap<String, PredicateFn>,
}

impl Default for PredicateRegistry {
    fn default() -> Self {
        let mut reg = PredicateRegistry {
            fns: BTreeMap::new(),
        };
        // (min-time-budget ms): true while the remaining budget meta allows
        // at least `ms` milliseconds; an absent budget means unlimited.
        reg.register("min-time-budget", |ctx: &PredicateCtx, args: &[String]| {
            let need: f64 = match args.first().and_then(|a| a.parse().ok()) {
                Some(v) => v,
                None => return Confidence::ZERO,
            };
            match ctx.meta.get("time-budget-ms") {
                None => Confidence::ONE,
                Some(&budget) if budget >= need => Confidence::ONE,
                Some(_) => Confidence::ZERO,
            }
        });
        reg
    }
}

impl PredicateRegistry {
    pub fn new() -> PredicateRegistry {
        PredicateRegistry::default()
    }

    pub fn register(
        &mut self,
        name: &str,
        f: impl Fn(&PredicateCtx, &[String]) -> Confidence + Send + 'static,
    ) {
        self.fns.insert(name.to_string(), Box::new(f));
    }

    /// Register `name` as a 2-place attribute check: `(name obj val)` holds
    /// iff the object's attribute `name` currently equals `val`.
    pub fn register_attribute(&mut self, name: &str) {
        let attr = name.to_string();
        self.register(name, move |ctx: &PredicateCtx, args: &[String]| {
            match (args.first(), args.get(1)) {
                (Some(obj), Some(val)) => {
                    let stored = ctx.attributes.get(&(obj.clone(), attr.clone()));
                    if stored.map(String::as_str) == Some(val.as_str()) {
                        Confidence::ONE
                    } else {
                        Confidence::ZERO
                    }
                }
                _ => Confidence::ZERO,
            }
        });
    }

    pub fn contains(&self, name: &str) -> bool {
        self.fns.contains_key(name)
    }
}

// --- internal graph slots -------------------------------------------------

#[derive(Debug, Clone)]
struct WffSlot {
    wff: GroundWff,
    is_input: bool,
    declared_agg: Option<TnormFamily>,
    /// Rules concluding here, sorted by instance id; fold order for LB/UB.
    incoming: Vec<usize>,
    /// Rules reading this wff through any premise.
    consumers: Vec<usize>,
    evidence: Option<UncertaintyInterval>,
    /// Support-derived interval, before any default replaces it.
    underlying: UncertaintyInterval,
    interval: UncertaintyInterval,
    validity: Validity,
    timestamp: u64,
    dirty: bool,
    loop_id: Option<usize>,
    ignorance_threshold: Option<f64>,
}

#[derive(Debug, Clone)]
struct RuleSlot {
    inst: RuleInstance,
    sufficiency: Confidence,
    necessity: Confidence,
    family: TnormFamily,
    /// Conclusion-arc labels: (confirmation, refutation).
    confirmation: Confidence,
    refutation: Confidence,
    context_active: bool,
    dirty: bool,
    loop_id: Option<usize>,
    has_calls: bool,
}

#[derive(Debug, Clone)]
struct DefaultState {
    interval: UncertaintyInterval,
    threshold: f64,
    active: bool,
}

/// Instance-graph node handle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum INode {
    Wff(usize),
    Rule(usize),
}

#[derive(Debug, Clone)]
pub(crate) struct InstanceLoop {
    pub(crate) wffs: Vec<usize>,
    pub(crate) rules: Vec<usize>,
}

/// Which nodes a pass is allowed to recompute; everything else keeps its
/// dirty flag and stays unreliable.
#[derive(Debug, Clone)]
pub(crate) enum PassFilter {
    All,
    /// Restrict to a node set (a query's ancestor cone, a plan's subgraph).
    Nodes(BTreeSet<INode>),
    /// Restrict rules to the given templates (rule-class scoping).
    Scope(BTreeSet<String>),
    NodesAndScope(BTreeSet<INode>, BTreeSet<String>),
}

impl PassFilter {
    fn allows_node(&self, node: INode) -> bool {
        match self {
            PassFilter::All | PassFilter::Scope(_) => true,
            PassFilter::Nodes(set) | PassFilter::NodesAndScope(set, _) => set.contains(&node),
        }
    }

    fn allows_template(&self, template: &str) -> bool {
        match self {
            PassFilter::All | PassFilter::Nodes(_) => true,
            PassFilter::Scope(scope) | PassFilter::NodesAndScope(_, scope) => {
                scope.contains(template)
            }
        }
    }
}

/// One stepped unit of pass work.
#[derive(Debug, Clone, PartialEq)]
pub(crate) enum StepOutcome {
    /// Recomputed one node (or one whole loop region); the label names it.
    Recomputed { label: String },
    /// Nothing left that the filter admits.
    Done,
}

struct ActivePass {
    filter: PassFilter,
    cursor: usize,
    changed: BTreeSet<usize>,
}

// --- the engine -----------------------------------------------------------

/// A single-writer inference engine over one compiled network.
pub struct Engine {
    net: CompiledNetwork,
    wffs: Vec<WffSlot>,
    wff_index: BTreeMap<GroundWff, usize>,
    rules: Vec<RuleSlot>,
    rule_index: BTreeMap<String, usize>,
    objects: BTreeMap<String, String>,
    topo: Vec<INode>,
    loops: Vec<InstanceLoop>,
    registry: PredicateRegistry,
    meta: BTreeMap<String, f64>,
    attributes: BTreeMap<(String, String), String>,
    memo: BTreeMap<GroundCall, Confidence>,
    defaults: BTreeMap<usize, DefaultState>,
    clock: u64,
    stats: EngineStats,
    pass: Option<ActivePass>,
    anomalies: Vec<LoopAnomaly>,
    assumption_cap: usize,
    timing_capture: bool,
    timing_samples: BTreeMap<String, Vec<f64>>,
}

impl Engine {
    /// Build an engine over a compiled network.
    ///
    /// Every predicate the KB declares must be registered; variable-free
    /// templates are instantiated immediately.
    pub fn new(net: CompiledNetwork, registry: PredicateRegistry) -> Result<Engine, EngineError> {
        for name in net.kb.predicates.keys() {
            if !registry.contains(name) {
                return Err(EngineError::UnregisteredPredicate(name.clone()));
            }
        }
        let mut engine = Engine {
            net,
            wffs: Vec::new(),
            wff_index: BTreeMap::new(),
            rules: Vec::new(),
            rule_index: BTreeMap::new(),
            objects: BTreeMap::new(),
            topo: Vec::new(),
            loops: Vec::new(),
            registry,
            meta: BTreeMap::new(),
            attributes: BTreeMap::new(),
            memo: BTreeMap::new(),
            defaults: BTreeMap::new(),
            clock: 0,
            stats: EngineStats::default(),
            pass: None,
            anomalies: Vec::new(),
            assumption_cap: DEFAULT_ASSUMPTION_CAP,
            timing_capture: false,
            timing_samples: BTreeMap::new(),
        };
        let ground: Vec<RuleInstance> = engine
            .net
            .kb
            .templates
            .values()
            .filter(|t| t.vars.is_empty())
            .map(|t| instantiate(t, &BTreeMap::new(), &engine.objects))
            .collect::<Result<_, _>>()?;
        for inst in ground {
            engine.add_instance(inst);
        }
        engine.rebuild_topology();
        Ok(engine)
    }

    pub fn kb(&self) -> &crate::kb::KnowledgeBase {
        &self.net.kb
    }

    pub fn network(&self) -> &CompiledNetwork {
        &self.net
    }

    pub fn stats(&self) -> &EngineStats {
        &self.stats
    }

    pub fn clock(&self) -> u64 {
        self.clock
    }

    /// Loop anomalies recorded during the most recent pass.
    pub fn loop_anomalies(&self) -> &[LoopAnomaly] {
        &self.anomalies
    }

    pub fn set_assumption_cap(&mut self, cap: usize) {
        self.assumption_cap = cap;
    }

    // --- objects and instantiation ---------------------------------------

    /// Create an object and instantiate every template it can bind,
    /// combined with all existing objects. Returns the new instance ids.
    pub fn create_object(&mut self, id: &str, ty: &str) -> Result<Vec<String>, EngineError> {
        if self.objects.contains_key(id) {
            return Err(EngineError::DuplicateObject(id.to_string()));
        }
        if !self.net.kb.object_types.contains(&ty.to_string()) {
            return Err(EngineError::UndeclaredType(ty.to_string()));
        }
        self.objects.insert(id.to_string(), ty.to_string());

        let mut created = Vec::new();
        let templates: Vec<String> = self.net.kb.templates.keys().cloned().collect();
        for name in templates {
            let template = self.net.kb.templates[&name].clone();
            if template.vars.is_empty() {
                continue;
            }
            // All type-compatible binding tuples; idempotence makes it safe
            // to re-enumerate tuples that do not involve the new object.
            let candidates: Vec<Vec<String>> = template
                .vars
                .iter()
                .map(|tv| {
                    self.objects
                        .iter()
                        .filter(|(_, t)| **t == tv.object_type)
                        .map(|(o, _)| o.clone())
                        .collect()
                })
                .collect();
            if candidates.iter().any(Vec::is_empty) {
                continue;
            }
            let mut tuple = vec![0usize; candidates.len()];
            loop {
                let bindings: BTreeMap<String, String> = template
                    .vars
                    .iter()
                    .zip(&tuple)
                    .map(|(tv, &i)| (tv.name.clone(), candidates[tv_index(&template, tv)][i].clone()))
                    .collect();
                let inst = instantiate(&template, &bindings, &self.objects)?;
                if !self.rule_index.contains_key(&inst.id) {
                    created.push(inst.id.clone());
                    self.add_instance(inst);
                }
                // Advance the mixed-radix tuple counter.
                let mut pos = 0;
                loop {
                    if pos == tuple.len() {
                        break;
                    }
                    tuple[pos] += 1;
                    if tuple[pos] < candidates[pos].len() {
                        break;
                    }
                    tuple[pos] = 0;
                    pos += 1;
                }
                if pos == tuple.len() {
                    break;
                }
            }
        }
        if !created.is_empty() {
            self.rebuild_topology();
            if let Some(pass) = &mut self.pass {
                pass.cursor = 0;
            }
        }
        Ok(created)
    }

    pub fn objects(&self) -> &BTreeMap<String, String> {
        &self.objects
    }

    fn add_instance(&mut self, inst: RuleInstance) {
        let ri = self.rules.len();
        let template = &self.net.kb.templates[&inst.template];
        let mut premise_wffs: Vec<GroundWff> = Vec::new();
        for p in &inst.premises {
            match p {
                GroundPremise::Wff { wff, .. } | GroundPremise::Test { wff, .. } => {
                    premise_wffs.push(wff.clone())
                }
                GroundPremise::Call(_) => {}
            }
        }
        for (wff, _) in &inst.nm_premises {
            premise_wffs.push(wff.clone());
        }
        let has_calls = !inst.context.is_empty()
            || inst
                .premises
                .iter()
                .any(|p| matches!(p, GroundPremise::Call(_)));

        let slot = RuleSlot {
            sufficiency: template.sufficiency,
            necessity: template.necessity,
            family: template.tnorm,
            confirmation: Confidence::ZERO,
            refutation: Confidence::ZERO,
            context_active: true,
            dirty: true,
            loop_id: None,
            has_calls,
            inst,
        };
        let conclusion = slot.inst.conclusion.clone();
        self.rule_index.insert(slot.inst.id.clone(), ri);
        self.rules.push(slot);

        for wff in premise_wffs {
            let wi = self.ensure_wff(wff);
            if !self.wffs[wi].consumers.contains(&ri) {
                self.wffs[wi].consumers.push(ri);
            }
        }
        let ci = self.ensure_wff(conclusion);
        self.wffs[ci].incoming.push(ri);
        self.wffs[ci]
            .incoming
            .sort_by(|&a, &b| self.rules[a].inst.id.cmp(&self.rules[b].inst.id));
        self.wffs[ci].dirty = true;
        self.wffs[ci].validity = Validity::Unreliable;
    }

    fn ensure_wff(&mut self, wff: GroundWff) -> usize {
        if let Some(&wi) = self.wff_index.get(&wff) {
            return wi;
        }
        let decl = self.net.kb.variables.get(&wff.variable);
        let slot = WffSlot {
            is_input: decl.map(|d| d.is_input).unwrap_or(false),
            declared_agg: decl.and_then(|d| d.agg),
            incoming: Vec::new(),
            consumers: Vec::new(),
            evidence: None,
            underlying: UncertaintyInterval::UNKNOWN,
            interval: UncertaintyInterval::UNKNOWN,
            validity: Validity::Unreliable,
            timestamp: 0,
            dirty: true,
            loop_id: None,
            ignorance_threshold: None,
            wff: wff.clone(),
        };
        let wi = self.wffs.len();
        self.wffs.push(slot);
        self.wff_index.insert(wff, wi);
        // An isolated node can join the order at the end; anything that
        // later wires arcs to it triggers a full rebuild.
        self.topo.push(INode::Wff(wi));
        wi
    }

    /// Recompute the topological order and loop regions of the instance
    /// graph. Monotonic acyclicity is guaranteed by compilation; any
    /// remaining strongly connected component is a non-monotonic loop.
    fn rebuild_topology(&mut self) {
        let wn = self.wffs.len();
        let total = wn + self.rules.len();
        let idx = |n: INode| match n {
            INode::Wff(i) => i,
            INode::Rule(i) => wn + i,
        };
        let node_of = |i: usize| {
            if i < wn {
                INode::Wff(i)
            } else {
                INode::Rule(i - wn)
            }
        };
        let mut succ: Vec<Vec<usize>> = vec![Vec::new(); total];
        for (ri, rule) in self.rules.iter().enumerate() {
            let r = idx(INode::Rule(ri));
            for p in &rule.inst.premises {
                match p {
                    GroundPremise::Wff { wff, .. } | GroundPremise::Test { wff, .. } => {
                        succ[self.wff_index[wff]].push(r);
                    }
                    GroundPremise::Call(_) => {}
                }
            }
            for (wff, _) in &rule.inst.nm_premises {
                succ[self.wff_index[wff]].push(r);
            }
            succ[r].push(idx(INode::Wff(self.wff_index[&rule.inst.conclusion])));
        }
        for list in &mut succ {
            list.sort_unstable();
            list.dedup();
        }

        // Tarjan, iterative.
        let mut index = vec![u32::MAX; total];
        let mut lowlink = vec![0u32; total];
        let mut on_stack = vec![false; total];
        let mut stack: Vec<usize> = Vec::new();
        let mut next_index = 0u32;
        let mut components: Vec<Vec<usize>> = Vec::new();
        for start in 0..total {
            if index[start] != u32::MAX {
                continue;
            }
            let mut work: Vec<(usize, usize)> = vec![(start, 0)];
            while let Some(&mut (node, ref mut child)) = work.last_mut() {
                if *child == 0 {
                    index[node] = next_index;
                    lowlink[node] = next_index;
                    next_index += 1;
                    stack.push(node);
                    on_stack[node] = true;
                }
                if let Some(&m) = succ[node].get(*child) {
                    *child += 1;
                    if index[m] == u32::MAX {
                        work.push((m, 0));
                    } else if on_stack[m] {
                        lowlink[node] = lowlink[node].min(index[m]);
                    }
                } else {
                    if lowlink[node] == index[node] {
                        let mut component = Vec::new();
                        loop {
                            let member = stack.pop().unwrap();
                            on_stack[member] = false;
                            component.push(member);
                            if member == node {
                                break;
                            }
                        }
                        component.sort_unstable();
                        components.push(component);
                    }
                    work.pop();
                    if let Some(&(parent, _)) = work.last() {
                        lowlink[parent] = lowlink[parent].min(lowlink[node]);
                    }
                }
            }
        }
        components.sort();

        // Loop regions: multi-node components.
        self.loops.clear();
        for slot in &mut self.wffs {
            slot.loop_id = None;
        }
        for slot in &mut self.rules {
            slot.loop_id = None;
        }
        let mut comp_of = vec![0usize; total];
        for (ci, comp) in components.iter().enumerate() {
            for &n in comp {
                comp_of[n] = ci;
            }
        }
        for comp in components.iter().filter(|c| c.len() > 1) {
            let lid = self.loops.len();
            let mut lw = Vec::new();
            let mut lr = Vec::new();
            for &n in comp {
                match node_of(n) {
                    INode::Wff(i) => {
                        self.wffs[i].loop_id = Some(lid);
                        lw.push(i);
                    }
                    INode::Rule(i) => {
                        self.rules[i].loop_id = Some(lid);
                        lr.push(i);
                    }
                }
            }
            lw.sort_by(|&a, &b| self.wffs[a].wff.cmp(&self.wffs[b].wff));
            lr.sort_by(|&a, &b| self.rules[a].inst.id.cmp(&self.rules[b].inst.id));
            self.loops.push(InstanceLoop { wffs: lw, rules: lr });
        }

        // Kahn over the condensation; components are processed smallest
        // representative first, members contiguous.
        let nc = components.len();
        let mut comp_succ: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); nc];
        let mut indegree = vec![0usize; nc];
        for (n, list) in succ.iter().enumerate() {
            for &m in list {
                let (a, b) = (comp_of[n], comp_of[m]);
                if a != b && comp_succ[a].insert(b) {
                    indegree[b] += 1;
                }
            }
        }
        let mut ready: BTreeSet<usize> = (0..nc).filter(|&c| indegree[c] == 0).collect();
        let mut order = Vec::with_capacity(total);
        while let Some(&c) = ready.iter().next() {
            ready.remove(&c);
            order.extend(components[c].iter().map(|&n| node_of(n)));
            for &m in &comp_succ[c] {
                indegree[m] -= 1;
                if indegree[m] == 0 {
                    ready.insert(m);
                }
            }
        }
        debug_assert_eq!(order.len(), total);
        self.topo = order;
    }

    // --- evidence ---------------------------------------------------------

    /// Parse a ground wff written as `(variable value)` or
    /// `(variable object value)` against the KB's declarations.
    pub fn parse_wff(&self, text: &str) -> Result<GroundWff, EngineError> {
        let malformed =
            |msg: &str| EngineError::MalformedWff(text.to_string(), msg.to_string());
        let data = crate::kb::sexpr::parse_all(text)
            .map_err(|e| malformed(&e.message))?;
        let items = match data.as_slice() {
            [one] => one.list().ok_or_else(|| malformed("expected a list"))?,
            _ => return Err(malformed("expected exactly one pattern")),
        };
        let texts: Vec<&str> = items
            .iter()
            .map(|i| i.atom().ok_or_else(|| malformed("nested list")))
            .collect::<Result<_, _>>()?;
        let [variable, rest @ ..] = texts.as_slice() else {
            return Err(malformed("empty pattern"));
        };
        let decl = self
            .net
            .kb
            .variables
            .get(*variable)
            .ok_or_else(|| EngineError::UnknownVariable(variable.to_string()))?;
        match (&decl.object_type, rest) {
            (Some(_), [object, value]) => Ok(GroundWff {
                variable: variable.to_string(),
                object: Some(object.to_string()),
                value: value.to_string(),
            }),
            (None, [value]) => Ok(GroundWff {
                variable: variable.to_string(),
                object: None,
                value: value.to_string(),
            }),
            (Some(_), _) => Err(malformed("object-typed variable takes (variable object value)")),
            (None, _) => Err(malformed("propositional variable takes (variable value)")),
        }
    }

    fn check_assertable(&self, wff: &GroundWff) -> Result<(), EngineError> {
        let decl = self
            .net
            .kb
            .variables
            .get(&wff.variable)
            .ok_or_else(|| EngineError::UnknownVariable(wff.variable.clone()))?;
        if !decl.is_input {
            return Err(EngineError::NotAnInput(wff.to_string()));
        }
        match (&decl.object_type, &wff.object) {
            (Some(expected), Some(object)) => {
                let actual = self
                    .objects
                    .get(object)
                    .ok_or_else(|| EngineError::UnknownObject(object.clone()))?;
                if actual != expected {
                    return Err(EngineError::Model(ModelError::TypeMismatch {
                        template: "<evidence>".into(),
                        var: wff.variable.clone(),
                        expected: expected.clone(),
                        actual: actual.clone(),
                        object: object.clone(),
                    }));
                }
                Ok(())
            }
            (None, None) => Ok(()),
            _ => Err(EngineError::MalformedWff(
                wff.to_string(),
                "object arity does not match the variable declaration".into(),
            )),
        }
    }

    /// Replace the evidence interval of one input wff (one logical tick).
    ///
    /// Lazy: descendants are only marked unreliable. Returns the wffs whose
    /// state was touched; re-asserting an identical interval is a no-op.
    pub fn assert_evidence(
        &mut self,
        wff: &GroundWff,
        interval: UncertaintyInterval,
    ) -> Result<Vec<GroundWff>, EngineError> {
        self.assert_batch(&[(wff.clone(), interval)])
    }

    /// Assert several evidence records under a single logical-clock tick.
    pub fn assert_batch(
        &mut self,
        items: &[(GroundWff, UncertaintyInterval)],
    ) -> Result<Vec<GroundWff>, EngineError> {
        for (wff, _) in items {
            self.check_assertable(wff)?;
        }
        let mut touched: BTreeSet<usize> = BTreeSet::new();
        let mut ticked = false;
        for (wff, interval) in items {
            let wi = self.ensure_wff(wff.clone());
            if self.wffs[wi].evidence == Some(*interval) {
                continue;
            }
            if !ticked {
                self.clock += 1;
                ticked = true;
            }
            self.wffs[wi].evidence = Some(*interval);
            touched.insert(wi);
            if self.wffs[wi].incoming.is_empty()
                && self.wffs[wi].loop_id.is_none()
                && !self.defaults.contains_key(&wi)
            {
                // Pure input: its state is the evidence itself; publish it
                // eagerly so the asserted wff reads back valid at once.
                let threshold = self.ignorance_threshold(wi);
                let slot = &mut self.wffs[wi];
                slot.underlying = *interval;
                slot.interval = *interval;
                slot.validity = flag_for(*interval, threshold);
                slot.timestamp = self.clock;
                slot.dirty = false;
            } else {
                self.wffs[wi].dirty = true;
                self.wffs[wi].validity = Validity::Unreliable;
            }
            self.mark_descendants(wi, &mut touched);
        }
        if ticked {
            if let Some(pass) = &mut self.pass {
                pass.cursor = 0;
            }
        }
        Ok(touched
            .into_iter()
            .map(|wi| self.wffs[wi].wff.clone())
            .collect())
    }

    /// Mark every node downstream of `wi` (loop regions as a whole) dirty.
    fn mark_descendants(&mut self, wi: usize, touched: &mut BTreeSet<usize>) {
        let mut queue: VecDeque<usize> = VecDeque::from([wi]);
        let mut seen_wffs: BTreeSet<usize> = BTreeSet::from([wi]);
        let mut seen_rules: BTreeSet<usize> = BTreeSet::new();
        while let Some(w) = queue.pop_front() {
            if let Some(lid) = self.wffs[w].loop_id {
                for &lw in &self.loops[lid].wffs.clone() {
                    if seen_wffs.insert(lw) {
                        self.mark_wff(lw, touched);
                        queue.push_back(lw);
                    }
                }
                for &lr in &self.loops[lid].rules.clone() {
                    seen_rules.insert(lr);
                    self.rules[lr].dirty = true;
                }
            }
            for &r in &self.wffs[w].consumers.clone() {
                if seen_rules.insert(r) {
                    self.rules[r].dirty = true;
                }
                let c = self.wff_index[&self.rules[r].inst.conclusion];
                if seen_wffs.insert(c) {
                    self.mark_wff(c, touched);
                    queue.push_back(c);
                }
            }
        }
    }

    fn mark_wff(&mut self, wi: usize, touched: &mut BTreeSet<usize>) {
        let slot = &mut self.wffs[wi];
        if !slot.dirty || slot.validity != Validity::Unreliable {
            touched.insert(wi);
        }
        slot.dirty = true;
        slot.validity = Validity::Unreliable;
    }

    /// Set a scalar meta-variable (visible to contexts and predicates).
    pub fn set_meta(&mut self, key: &str, value: f64) {
        if self.meta.get(key) == Some(&value) {
            return;
        }
        self.meta.insert(key.to_string(), value);
        self.dirty_call_dependents();
    }

    /// Set a per-object attribute (visible to contexts and predicates).
    pub fn set_attribute(&mut self, object: &str, key: &str, value: &str) {
        let k = (object.to_string(), key.to_string());
        if self.attributes.get(&k).map(String::as_str) == Some(value) {
            return;
        }
        self.attributes.insert(k, value.to_string());
        self.dirty_call_dependents();
    }

    /// Predicate results may have changed: re-run every rule that calls one.
    fn dirty_call_dependents(&mut self) {
        let mut touched = BTreeSet::new();
        for ri in 0..self.rules.len() {
            if self.rules[ri].has_calls {
                self.rules[ri].dirty = true;
                let c = self.wff_index[&self.rules[ri].inst.conclusion];
                self.mark_wff(c, &mut touched);
                self.mark_descendants(c, &mut touched);
            }
        }
        if let Some(pass) = &mut self.pass {
            pass.cursor = 0;
        }
    }

    // --- pass machinery ----------------------------------------------------

    pub(crate) fn start_pass(&mut self, filter: PassFilter) {
        self.memo.clear();
        self.anomalies.clear();
        self.stats.last_pass_recomputed = 0;
        self.stats.last_pass_visits.clear();
        self.stats.passes += 1;
        self.pass = Some(ActivePass {
            filter,
            cursor: 0,
            changed: BTreeSet::new(),
        });
    }

    /// Recompute the next admissible dirty node; one call is one preemption
    /// quantum (a loop region counts as a single node).
    pub(crate) fn step(&mut self) -> StepOutcome {
        loop {
            let Some(pass) = &self.pass else {
                return StepOutcome::Done;
            };
            let Some(&node) = self.topo.get(pass.cursor) else {
                return StepOutcome::Done;
            };
            let dirty = match node {
                INode::Wff(wi) => self.wffs[wi].dirty,
                INode::Rule(ri) => self.rules[ri].dirty,
            };
            if !dirty {
                self.pass.as_mut().unwrap().cursor += 1;
                continue;
            }
            let filter = &self.pass.as_ref().unwrap().filter;
            let loop_id = match node {
                INode::Wff(wi) => self.wffs[wi].loop_id,
                INode::Rule(ri) => self.rules[ri].loop_id,
            };
            if let Some(lid) = loop_id {
                if !self.loop_admitted(lid, filter) {
                    self.pass.as_mut().unwrap().cursor += 1;
                    continue;
                }
                let label = self.solve_loop(lid);
                self.pass.as_mut().unwrap().cursor += 1;
                return StepOutcome::Recomputed { label };
            }
            match node {
                INode::Rule(ri) => {
                    if !filter.allows_node(node)
                        || !filter.allows_template(&self.rules[ri].inst.template)
                    {
                        self.pass.as_mut().unwrap().cursor += 1;
                        continue;
                    }
                    let label = self.rules[ri].inst.id.clone();
                    self.recompute_rule(ri);
                    self.count_visit(&label);
                    self.pass.as_mut().unwrap().cursor += 1;
                    return StepOutcome::Recomputed { label };
                }
                INode::Wff(wi) => {
                    if !filter.allows_node(node) {
                        self.pass.as_mut().unwrap().cursor += 1;
                        continue;
                    }
                    // A wff normally consolidates only once all of its
                    // supporting rules are clean; a scope filter that leaves
                    // some dirty keeps the wff unreliable. A node-restricted
                    // (planned) pass instead publishes a best-so-far fold
                    // over the stale labels, staying dirty and unreliable so
                    // a later full pass finishes the job.
                    let pending =
                        self.wffs[wi].incoming.iter().any(|&ri| self.rules[ri].dirty);
                    let planned = matches!(
                        filter,
                        PassFilter::Nodes(_) | PassFilter::NodesAndScope(..)
                    );
                    if pending && !planned {
                        self.pass.as_mut().unwrap().cursor += 1;
                        continue;
                    }
                    let label = self.wffs[wi].wff.to_string();
                    let changed = self.recompute_wff(wi);
                    if pending {
                        self.wffs[wi].dirty = true;
                        self.wffs[wi].validity = Validity::Unreliable;
                    }
                    if changed {
                        self.pass.as_mut().unwrap().changed.insert(wi);
                    }
                    self.count_visit(&label);
                    self.pass.as_mut().unwrap().cursor += 1;
                    return StepOutcome::Recomputed { label };
                }
            }
        }
    }

    pub(crate) fn finish_pass(&mut self) -> Vec<GroundWff> {
        let changed = match self.pass.take() {
            Some(pass) => pass.changed,
            None => return Vec::new(),
        };
        changed
            .into_iter()
            .map(|wi| self.wffs[wi].wff.clone())
            .collect()
    }

    fn count_visit(&mut self, label: &str) {
        self.stats.last_pass_recomputed += 1;
        self.stats.total_recomputed += 1;
        *self
            .stats
            .last_pass_visits
            .entry(label.to_string())
            .or_insert(0) += 1;
    }

    /// Recompute every unreliable node, in topological order, each at most
    /// once. Returns the wffs whose interval changed.
    pub fn propagate(&mut self) -> Vec<GroundWff> {
        self.run_pass(PassFilter::All)
    }

    /// Propagate with rules restricted to the given template names;
    /// conclusions of out-of-scope rules stay unreliable.
    pub fn propagate_scoped(&mut self, templates: &BTreeSet<String>) -> Vec<GroundWff> {
        self.run_pass(PassFilter::Scope(templates.clone()))
    }

    pub(crate) fn run_pass(&mut self, filter: PassFilter) -> Vec<GroundWff> {
        self.start_pass(filter);
        while self.step() != StepOutcome::Done {}
        self.finish_pass()
    }

    // --- node recomputation ------------------------------------------------

    fn eval_predicate(&mut self, call: &GroundCall) -> Confidence {
        if let Some(&v) = self.memo.get(call) {
            self.stats.predicate_memo_hits += 1;
            return v;
        }
        let ctx = PredicateCtx {
            meta: &self.meta,
            attributes: &self.attributes,
        };
        let f = self
            .registry
            .fns
            .get(&call.name)
            .expect("registration is checked at construction");
        let started = Instant::now();
        let v = f(&ctx, &call.args);
        if self.timing_capture {
            let us = started.elapsed().as_secs_f64() * 1e6;
            self.timing_samples
                .entry(call.name.clone())
                .or_default()
                .push(us);
        }
        self.stats.predicate_evals += 1;
        self.memo.insert(call.clone(), v);
        v
    }

    fn context_is_active(&mut self, ri: usize) -> bool {
        let calls = self.rules[ri].inst.context.clone();
        calls
            .iter()
            .all(|call| self.eval_predicate(call).value() >= 0.5)
    }

    /// Premise contribution (confirmation, refutation) for a ground premise.
    fn premise_value(&mut self, p: &GroundPremise) -> (Confidence, Confidence) {
        match p {
            GroundPremise::Wff { wff, negated } => {
                let iv = self.wffs[self.wff_index[wff]].interval;
                if *negated {
                    (negate(iv.ub), iv.lb)
                } else {
                    (iv.lb, negate(iv.ub))
                }
            }
            GroundPremise::Call(call) => {
                let v = self.eval_predicate(call);
                (v, negate(v))
            }
            GroundPremise::Test {
                measure,
                wff,
                cmp,
                threshold,
            } => {
                let iv = self.wffs[self.wff_index[wff]].interval;
                let lhs = match measure {
                    Measure::Lb => iv.lb.value(),
                    Measure::Ub => iv.ub.value(),
                    Measure::Ignorance => iv.ignorance(),
                };
                if cmp.holds(lhs, *threshold) {
                    (Confidence::ONE, Confidence::ZERO)
                } else {
                    (Confidence::ZERO, Confidence::ONE)
                }
            }
        }
    }

    /// Conclusion-arc labels: confirmation folds the sufficiency with the
    /// premises' confirmations under the rule's T-norm (in premise order,
    /// sufficiency first); refutation folds the necessity with the premise
    /// refutations the same way. A false context forces both labels to 0.
    fn recompute_rule(&mut self, ri: usize) {
        let started = Instant::now();
        let active = self.context_is_active(ri);
        let (confirmation, refutation) = if !active {
            (Confidence::ZERO, Confidence::ZERO)
        } else {
            let rule = &self.rules[ri];
            let mut confirms = vec![rule.sufficiency];
            let mut refutes = vec![rule.necessity];
            let premises = rule.inst.premises.clone();
            let nm = rule.inst.nm_premises.clone();
            let family = rule.family;
            for p in &premises {
                let (c, r) = self.premise_value(p);
                confirms.push(c);
                refutes.push(r);
            }
            for (wff, alpha) in &nm {
                let lb = self.wffs[self.wff_index[wff]].interval.lb;
                let v = if lb.value() < alpha.value() {
                    Confidence::ONE
                } else {
                    Confidence::ZERO
                };
                confirms.push(v);
                refutes.push(negate(v));
            }
            (
                tnorm_n(family, &confirms).expect("sufficiency is always present"),
                tnorm_n(family, &refutes).expect("necessity is always present"),
            )
        };
        let slot = &mut self.rules[ri];
        slot.context_active = active;
        slot.confirmation = confirmation;
        slot.refutation = refutation;
        slot.dirty = false;
        if self.timing_capture {
            let us = started.elapsed().as_secs_f64() * 1e6;
            let template = self.rules[ri].inst.template.clone();
            self.timing_samples.entry(template).or_default().push(us);
        }
    }

    fn ignorance_threshold(&self, wi: usize) -> f64 {
        self.wffs[wi]
            .ignorance_threshold
            .unwrap_or(DEFAULT_IGNORANCE_THRESHOLD)
    }

    /// Fold the wff's support: evidence first (if any), then the labels of
    /// every incoming rule in instance-id order, combined with the wff's
    /// aggregation family; the refutation side mirrors it and sets
    /// `UB = 1 − fold`. Returns whether the published interval changed.
    fn recompute_wff(&mut self, wi: usize) -> bool {
        let slot = &self.wffs[wi];
        let family = self.aggregation_family(wi);
        let mut confirms: Vec<Confidence> = Vec::new();
        let mut refutes: Vec<Confidence> = Vec::new();
        if let Some(e) = slot.evidence {
            confirms.push(e.lb);
            refutes.push(negate(e.ub));
        }
        for &ri in &slot.incoming {
            confirms.push(self.rules[ri].confirmation);
            refutes.push(self.rules[ri].refutation);
        }
        let underlying = if confirms.is_empty() {
            UncertaintyInterval::UNKNOWN
        } else {
            UncertaintyInterval {
                lb: tconorm_n(family, &confirms).unwrap(),
                ub: negate(tconorm_n(family, &refutes).unwrap()),
            }
        };
        self.publish_wff(wi, underlying)
    }

    /// Publish a computed underlying interval, applying any default.
    fn publish_wff(&mut self, wi: usize, underlying: UncertaintyInterval) -> bool {
        let threshold = self.ignorance_threshold(wi);
        let published = match self.defaults.get_mut(&wi) {
            Some(d) if underlying.ignorance() >= d.threshold => {
                d.active = true;
                d.interval
            }
            Some(d) => {
                d.active = false;
                underlying
            }
            None => underlying,
        };
        let clock = self.clock;
        let slot = &mut self.wffs[wi];
        let before = slot.interval;
        slot.underlying = underlying;
        slot.interval = published;
        slot.validity = flag_for(published, threshold);
        slot.timestamp = clock;
        slot.dirty = false;
        before != published
    }

    /// The T-conorm family combining a wff's multiple supports: the
    /// variable's declared `:agg` override, else the single family shared by
    /// all incoming rules, else the least-commitment default (max).
    fn aggregation_family(&self, wi: usize) -> TnormFamily {
        if let Some(f) = self.wffs[wi].declared_agg {
            return f;
        }
        let families: BTreeSet<TnormFamily> = self.wffs[wi]
            .incoming
            .iter()
            .map(|&ri| self.rules[ri].family)
            .collect();
        match families.len() {
            1 => *families.iter().next().unwrap(),
            _ => TnormFamily::T3,
        }
    }

    // --- loop resolution ---------------------------------------------------

    fn loop_admitted(&self, lid: usize, filter: &PassFilter) -> bool {
        let lp = &self.loops[lid];
        lp.wffs.iter().all(|&wi| filter.allows_node(INode::Wff(wi)))
            && lp.rules.iter().all(|&ri| {
                filter.allows_node(INode::Rule(ri))
                    && filter.allows_template(&self.rules[ri].inst.template)
            })
            // External support must be settled before the loop resolves.
            && lp.wffs.iter().all(|&wi| {
                self.wffs[wi]
                    .incoming
                    .iter()
                    .all(|&ri| self.rules[ri].loop_id == Some(lid) || !self.rules[ri].dirty)
            })
    }

    /// Resolve one loop region in place: enumerate extensions, publish the
    /// selected one (or total ignorance on anomaly). One region counts as a
    /// single preemption quantum.
    fn solve_loop(&mut self, lid: usize) -> String {
        let lp = self.loops[lid].clone();
        let member_wff: BTreeMap<usize, usize> =
            lp.wffs.iter().enumerate().map(|(i, &wi)| (wi, i)).collect();
        let member_rule: BTreeSet<usize> = lp.rules.iter().copied().collect();

        let mut spec = LoopSpec {
            wffs: lp.wffs.iter().map(|&wi| self.wffs[wi].wff.clone()).collect(),
            agg: lp.wffs.iter().map(|&wi| self.aggregation_family(wi)).collect(),
            external: vec![Vec::new(); lp.wffs.len()],
            rules: Vec::new(),
            assumption_count: 0,
            cap: self.assumption_cap,
        };
        for (i, &wi) in lp.wffs.iter().enumerate() {
            if let Some(e) = self.wffs[wi].evidence {
                spec.external[i].push((e.lb, negate(e.ub)));
            }
            for &ri in &self.wffs[wi].incoming.clone() {
                if !member_rule.contains(&ri) {
                    spec.external[i]
                        .push((self.rules[ri].confirmation, self.rules[ri].refutation));
                }
            }
        }
        let mut slot_count = 0usize;
        for &ri in &lp.rules {
            let active = self.context_is_active(ri);
            let inst = self.rules[ri].inst.clone();
            let mut contributions = Vec::new();
            for p in &inst.premises {
                let internal = match p {
                    GroundPremise::Wff { wff, .. } | GroundPremise::Test { wff, .. } => {
                        member_wff.get(&self.wff_index[wff]).copied()
                    }
                    GroundPremise::Call(_) => None,
                };
                match (internal, p) {
                    (Some(w), GroundPremise::Wff { negated, .. }) => {
                        contributions.push(LoopContribution::Internal {
                            wff: w,
                            kind: if *negated {
                                InternalKind::Negated
                            } else {
                                InternalKind::Positive
                            },
                        });
                    }
                    (
                        Some(w),
                        GroundPremise::Test {
                            measure,
                            cmp,
                            threshold,
                            ..
                        },
                    ) => {
                        contributions.push(LoopContribution::Internal {
                            wff: w,
                            kind: InternalKind::Test {
                                measure: *measure,
                                cmp: *cmp,
                                threshold: *threshold,
                            },
                        });
                    }
                    _ => {
                        let (c, r) = self.premise_value(p);
                        contributions.push(LoopContribution::Fixed(c, r));
                    }
                }
            }
            for (wff, alpha) in &inst.nm_premises {
                match member_wff.get(&self.wff_index[wff]) {
                    Some(&w) => {
                        contributions.push(LoopContribution::Assumption {
                            slot: slot_count,
                            wff: w,
                            alpha: *alpha,
                        });
                        slot_count += 1;
                    }
                    None => {
                        let lb = self.wffs[self.wff_index[wff]].interval.lb;
                        let v = if lb.value() < alpha.value() {
                            Confidence::ONE
                        } else {
                            Confidence::ZERO
                        };
                        contributions.push(LoopContribution::Fixed(v, negate(v)));
                    }
                }
            }
            let conclusion = member_wff[&self.wff_index[&inst.conclusion]];
            spec.rules.push(LoopRuleSpec {
                id: inst.id.clone(),
                conclusion,
                sufficiency: self.rules[ri].sufficiency,
                necessity: self.rules[ri].necessity,
                family: self.rules[ri].family,
                active,
                contributions,
            });
        }
        spec.assumption_count = slot_count;

        let outcome = nonmono::resolve(&spec);
        match outcome {
            Ok(Some(ext)) => {
                for (i, &wi) in lp.wffs.iter().enumerate() {
                    let changed = self.publish_wff(wi, ext.intervals[i]);
                    if changed {
                        if let Some(pass) = &mut self.pass {
                            pass.changed.insert(wi);
                        }
                    }
                }
                for (j, &ri) in lp.rules.iter().enumerate() {
                    let (c, r) = ext.rule_labels[j];
                    let slot = &mut self.rules[ri];
                    slot.confirmation = c;
                    slot.refutation = r;
                    slot.context_active = spec.rules[j].active;
                    slot.dirty = false;
                }
            }
            Ok(None) | Err(_) => {
                let reason = match outcome {
                    Ok(None) => "no self-consistent extension".to_string(),
                    Err(NonmonoError::TooManyAssumptions { count, cap }) => {
                        format!("{count} non-monotonic antecedents exceed the cap of {cap}")
                    }
                    Err(e) => e.to_string(),
                    Ok(Some(_)) => unreachable!(),
                };
                self.anomalies.push(LoopAnomaly {
                    wffs: spec.wffs.clone(),
                    reason,
                });
                for &wi in &lp.wffs {
                    let changed = self.publish_wff(wi, UncertaintyInterval::UNKNOWN);
                    if changed {
                        if let Some(pass) = &mut self.pass {
                            pass.changed.insert(wi);
                        }
                    }
                }
                for &ri in &lp.rules {
                    let slot = &mut self.rules[ri];
                    slot.confirmation = Confidence::ZERO;
                    slot.refutation = Confidence::ZERO;
                    slot.dirty = false;
                }
            }
        }

        for &wi in &lp.wffs {
            let label = self.wffs[wi].wff.to_string();
            self.count_visit(&label);
        }
        for &ri in &lp.rules {
            let label = self.rules[ri].inst.id.clone();
            self.count_visit(&label);
        }
        format!("loop#{lid}")
    }

    // --- queries -----------------------------------------------------------

    fn wff_id(&self, wff: &GroundWff) -> Result<usize, EngineError> {
        self.wff_index
            .get(wff)
            .copied()
            .ok_or_else(|| EngineError::UnknownWff(wff.to_string()))
    }

    /// Current cached state without triggering any recomputation.
    pub fn current(&self, wff: &GroundWff) -> Option<(UncertaintyInterval, Validity)> {
        let wi = *self.wff_index.get(wff)?;
        Some((self.wffs[wi].interval, self.wffs[wi].validity))
    }

    /// Cached state of a wff, recomputing its ancestor cone first when the
    /// cache is unreliable; only dirty nodes inside the cone are touched.
    pub fn query(
        &mut self,
        wff: &GroundWff,
    ) -> Result<(UncertaintyInterval, Validity), EngineError> {
        let wi = self.wff_id(wff)?;
        if self.wffs[wi].dirty {
            let cone = self.ancestor_cone(wi);
            self.run_pass(PassFilter::Nodes(cone));
        }
        Ok((self.wffs[wi].interval, self.wffs[wi].validity))
    }

    /// All nodes the wff's value can depend on, loop regions included
    /// atomically.
    pub(crate) fn ancestor_cone(&self, wi: usize) -> BTreeSet<INode> {
        let mut cone: BTreeSet<INode> = BTreeSet::new();
        let mut queue: VecDeque<INode> = VecDeque::from([INode::Wff(wi)]);
        while let Some(node) = queue.pop_front() {
            if !cone.insert(node) {
                continue;
            }
            let loop_id = match node {
                INode::Wff(i) => self.wffs[i].loop_id,
                INode::Rule(i) => self.rules[i].loop_id,
            };
            if let Some(lid) = loop_id {
                for &lw in &self.loops[lid].wffs {
                    queue.push_back(INode::Wff(lw));
                }
                for &lr in &self.loops[lid].rules {
                    queue.push_back(INode::Rule(lr));
                }
            }
            match node {
                INode::Wff(i) => {
                    for &ri in &self.wffs[i].incoming {
                        queue.push_back(INode::Rule(ri));
                    }
                }
                INode::Rule(i) => {
                    for p in &self.rules[i].inst.premises {
                        match p {
                            GroundPremise::Wff { wff, .. } | GroundPremise::Test { wff, .. } => {
                                queue.push_back(INode::Wff(self.wff_index[wff]));
                            }
                            GroundPremise::Call(_) => {}
                        }
                    }
                    for (wff, _) in &self.rules[i].inst.nm_premises {
                        queue.push_back(INode::Wff(self.wff_index[wff]));
                    }
                }
            }
        }
        cone
    }

    /// The descendant cone of an input (the nodes a change there can reach).
    pub(crate) fn descendant_cone(&self, wi: usize) -> BTreeSet<INode> {
        let mut cone: BTreeSet<INode> = BTreeSet::new();
        let mut queue: VecDeque<INode> = VecDeque::from([INode::Wff(wi)]);
        while let Some(node) = queue.pop_front() {
            if !cone.insert(node) {
                continue;
            }
            let loop_id = match node {
                INode::Wff(i) => self.wffs[i].loop_id,
                INode::Rule(i) => self.rules[i].loop_id,
            };
            if let Some(lid) = loop_id {
                for &lw in &self.loops[lid].wffs {
                    queue.push_back(INode::Wff(lw));
                }
                for &lr in &self.loops[lid].rules {
                    queue.push_back(INode::Rule(lr));
                }
            }
            match node {
                INode::Wff(i) => {
                    for &ri in &self.wffs[i].consumers {
                        queue.push_back(INode::Rule(ri));
                    }
                }
                INode::Rule(i) => {
                    queue.push_back(INode::Wff(self.wff_index[&self.rules[i].inst.conclusion]));
                }
            }
        }
        cone
    }

    // --- defaults -----------------------------------------------------------

    /// Install a default published whenever the wff's underlying support is
    /// ignorant enough; real support at or below the threshold retracts it.
    pub fn register_default(&mut self, spec: DefaultSpec) -> Result<(), EngineError> {
        if !(0.0..=1.0).contains(&spec.threshold) {
            return Err(EngineError::BadThreshold(spec.threshold));
        }
        if !self.net.kb.variables.contains_key(&spec.wff.variable) {
            return Err(EngineError::UnknownVariable(spec.wff.variable.clone()));
        }
        let wi = self.ensure_wff(spec.wff.clone());
        if self.defaults.contains_key(&wi) {
            return Err(EngineError::DuplicateDefault(spec.wff.to_string()));
        }
        self.defaults.insert(
            wi,
            DefaultState {
                interval: spec.interval,
                threshold: spec.threshold,
                active: false,
            },
        );
        let mut touched = BTreeSet::new();
        self.mark_wff(wi, &mut touched);
        self.mark_descendants(wi, &mut touched);
        if let Some(pass) = &mut self.pass {
            pass.cursor = 0;
        }
        Ok(())
    }

    /// Whether the default installed on this wff is currently published.
    pub fn default_active(&self, wff: &GroundWff) -> Option<bool> {
        let wi = *self.wff_index.get(wff)?;
        self.defaults.get(&wi).map(|d| d.active)
    }

    /// Override the ignorance threshold of one wff's validity flag.
    pub fn set_ignorance_threshold(
        &mut self,
        wff: &GroundWff,
        threshold: f64,
    ) -> Result<(), EngineError> {
        if !(0.0..=1.0).contains(&threshold) {
            return Err(EngineError::BadThreshold(threshold));
        }
        let wi = self.wff_id(wff)?;
        self.wffs[wi].ignorance_threshold = Some(threshold);
        let interval = self.wffs[wi].interval;
        if self.wffs[wi].validity != Validity::Unreliable {
            self.wffs[wi].validity = flag_for(interval, threshold);
        }
        Ok(())
    }

    // --- conflicts -----------------------------------------------------------

    /// All wffs whose bounds have crossed, each with the minimal evidence
    /// sets that suffice to recreate the contradiction on their own.
    pub fn detect_conflicts(&mut self) -> Vec<Conflict> {
        let conflicted: Vec<usize> = (0..self.wffs.len())
            .filter(|&wi| self.wffs[wi].interval.in_conflict())
            .collect();
        conflicted
            .into_iter()
            .map(|wi| {
                let iv = self.wffs[wi].interval;
                Conflict {
                    wff: self.wffs[wi].wff.clone(),
                    lb: iv.lb.value(),
                    lb_of_negation: 1.0 - iv.ub.value(),
                    suspected_sources: self.suspected_sources(wi),
                }
            })
            .collect()
    }

    /// Optional resolution policy: reset every suspected-source input of
    /// every current conflict to total ignorance. Returns the inputs reset
    /// (detection itself stays report-only).
    pub fn resolve_conflicts(&mut self) -> Result<Vec<GroundWff>, EngineError> {
        let conflicts = self.detect_conflicts();
        let mut to_reset: BTreeSet<GroundWff> = BTreeSet::new();
        for conflict in &conflicts {
            for set in &conflict.suspected_sources {
                to_reset.extend(set.iter().cloned());
            }
        }
        let batch: Vec<(GroundWff, UncertaintyInterval)> = to_reset
            .iter()
            .map(|w| (w.clone(), UncertaintyInterval::UNKNOWN))
            .collect();
        self.assert_batch(&batch)?;
        Ok(to_reset.into_iter().collect())
    }

    /// Minimal sets S of evidence-bearing cone inputs such that keeping
    /// only S (resetting all other evidence to total ignorance) still
    /// yields the conflict; searched in increasing size.
    fn suspected_sources(&mut self, wi: usize) -> Vec<Vec<GroundWff>> {
        let cone = self.ancestor_cone(wi);
        let mut inputs: Vec<usize> = cone
            .iter()
            .filter_map(|&n| match n {
                INode::Wff(i) if self.wffs[i].evidence.is_some() => Some(i),
                _ => None,
            })
            .collect();
        inputs.sort_by(|&a, &b| self.wffs[a].wff.cmp(&self.wffs[b].wff));
        let max_size = if inputs.len() > 12 { 2 } else { inputs.len() };

        let mut found: Vec<Vec<usize>> = Vec::new();
        for size in 1..=max_size {
            for combo in combinations(&inputs, size) {
                if found
                    .iter()
                    .any(|f| f.iter().all(|m| combo.contains(m)))
                {
                    continue;
                }
                let keep: BTreeSet<usize> = combo.iter().copied().collect();
                let states = self.eval_scratch(&keep);
                if states[wi].in_conflict() {
                    found.push(combo);
                }
            }
        }
        found
            .into_iter()
            .map(|set| set.into_iter().map(|i| self.wffs[i].wff.clone()).collect())
            .collect()
    }

    /// Pure from-scratch evaluation with evidence restricted to `keep`;
    /// used by the conflict-source search, never mutates engine state.
    fn eval_scratch(&mut self, keep: &BTreeSet<usize>) -> Vec<UncertaintyInterval> {
        let mut intervals: Vec<UncertaintyInterval> =
            vec![UncertaintyInterval::UNKNOWN; self.wffs.len()];
        let mut labels: Vec<(Confidence, Confidence)> =
            vec![(Confidence::ZERO, Confidence::ZERO); self.rules.len()];
        let mut solved_loops: BTreeSet<usize> = BTreeSet::new();

        let order = self.topo.clone();
        for node in order {
            let lid = match node {
                INode::Wff(i) => self.wffs[i].loop_id,
                INode::Rule(i) => self.rules[i].loop_id,
            };
            if let Some(lid) = lid {
                if solved_loops.insert(lid) {
                    self.scratch_loop(lid, keep, &mut intervals, &mut labels);
                }
                continue;
            }
            match node {
                INode::Rule(ri) => {
                    labels[ri] = self.scratch_rule(ri, &intervals);
                }
                INode::Wff(wi) => {
                    intervals[wi] = self.scratch_wff(wi, keep, &intervals, &labels);
                }
            }
        }
        intervals
    }

    fn scratch_rule(
        &mut self,
        ri: usize,
        intervals: &[UncertaintyInterval],
    ) -> (Confidence, Confidence) {
        if !self.context_is_active(ri) {
            return (Confidence::ZERO, Confidence::ZERO);
        }
        let rule = &self.rules[ri];
        let family = rule.family;
        let mut confirms = vec![rule.sufficiency];
        let mut refutes = vec![rule.necessity];
        let premises = rule.inst.premises.clone();
        let nm = rule.inst.nm_premises.clone();
        for p in &premises {
            let (c, r) = match p {
                GroundPremise::Wff { wff, negated } => {
                    let iv = intervals[self.wff_index[wff]];
                    if *negated {
                        (negate(iv.ub), iv.lb)
                    } else {
                        (iv.lb, negate(iv.ub))
                    }
                }
                GroundPremise::Call(call) => {
                    let v = self.eval_predicate(call);
                    (v, negate(v))
                }
                GroundPremise::Test {
                    measure,
                    wff,
                    cmp,
                    threshold,
                } => {
                    let iv = intervals[self.wff_index[wff]];
                    let lhs = match measure {
                        Measure::Lb => iv.lb.value(),
                        Measure::Ub => iv.ub.value(),
                        Measure::Ignorance => iv.ignorance(),
                    };
                    if cmp.holds(lhs, *threshold) {
                        (Confidence::ONE, Confidence::ZERO)
                    } else {
                        (Confidence::ZERO, Confidence::ONE)
                    }
                }
            };
            confirms.push(c);
            refutes.push(r);
        }
        for (wff, alpha) in &nm {
            let v = if intervals[self.wff_index[wff]].lb.value() < alpha.value() {
                Confidence::ONE
            } else {
                Confidence::ZERO
            };
            confirms.push(v);
            refutes.push(negate(v));
        }
        (
            tnorm_n(family, &confirms).unwrap(),
            tnorm_n(family, &refutes).unwrap(),
        )
    }

    fn scratch_wff(
        &self,
        wi: usize,
        keep: &BTreeSet<usize>,
        _intervals: &[UncertaintyInterval],
        labels: &[(Confidence, Confidence)],
    ) -> UncertaintyInterval {
        let slot = &self.wffs[wi];
        let family = self.aggregation_family(wi);
        let mut confirms: Vec<Confidence> = Vec::new();
        let mut refutes: Vec<Confidence> = Vec::new();
        if let Some(e) = slot.evidence {
            if keep.contains(&wi) {
                confirms.push(e.lb);
                refutes.push(negate(e.ub));
            }
        }
        for &ri in &slot.incoming {
            confirms.push(labels[ri].0);
            refutes.push(labels[ri].1);
        }
        let underlying = if confirms.is_empty() {
            UncertaintyInterval::UNKNOWN
        } else {
            UncertaintyInterval {
                lb: tconorm_n(family, &confirms).unwrap(),
                ub: negate(tconorm_n(family, &refutes).unwrap()),
            }
        };
        match self.defaults.get(&wi) {
            Some(d) if underlying.ignorance() >= d.threshold => d.interval,
            _ => underlying,
        }
    }

    fn scratch_loop(
        &mut self,
        lid: usize,
        keep: &BTreeSet<usize>,
        intervals: &mut [UncertaintyInterval],
        labels: &mut [(Confidence, Confidence)],
    ) {
        let lp = self.loops[lid].clone();
        let member_wff: BTreeMap<usize, usize> =
            lp.wffs.iter().enumerate().map(|(i, &wi)| (wi, i)).collect();
        let member_rule: BTreeSet<usize> = lp.rules.iter().copied().collect();
        let mut spec = LoopSpec {
            wffs: lp.wffs.iter().map(|&wi| self.wffs[wi].wff.clone()).collect(),
            agg: lp.wffs.iter().map(|&wi| self.aggregation_family(wi)).collect(),
            external: vec![Vec::new(); lp.wffs.len()],
            rules: Vec::new(),
            assumption_count: 0,
            cap: self.assumption_cap,
        };
        for (i, &wi) in lp.wffs.iter().enumerate() {
            if keep.contains(&wi) {
                if let Some(e) = self.wffs[wi].evidence {
                    spec.external[i].push((e.lb, negate(e.ub)));
                }
            }
            for &ri in &self.wffs[wi].incoming {
                if !member_rule.contains(&ri) {
                    spec.external[i].push(labels[ri]);
                }
            }
        }
        let mut slot_count = 0usize;
        for &ri in &lp.rules {
            let active = self.context_is_active(ri);
            let inst = self.rules[ri].inst.clone();
            let mut contributions = Vec::new();
            for p in &inst.premises {
                let internal = match p {
                    GroundPremise::Wff { wff, .. } | GroundPremise::Test { wff, .. } => {
                        member_wff.get(&self.wff_index[wff]).copied()
                    }
                    GroundPremise::Call(_) => None,
                };
                match (internal, p) {
                    (Some(w), GroundPremise::Wff { negated, .. }) => {
                        contributions.push(LoopContribution::Internal {
                            wff: w,
                            kind: if *negated {
                                InternalKind::Negated
                            } else {
                                InternalKind::Positive
                            },
                        });
                    }
                    (
                        Some(w),
                        GroundPremise::Test {
                            measure,
                            cmp,
                            threshold,
                            ..
                        },
                    ) => contributions.push(LoopContribution::Internal {
                        wff: w,
                        kind: InternalKind::Test {
                            measure: *measure,
                            cmp: *cmp,
                            threshold: *threshold,
                        },
                    }),
                    _ => {
                        let (c, r) = match p {
                            GroundPremise::Wff { wff, negated } => {
                                let iv = intervals[self.wff_index[wff]];
                                if *negated {
                                    (negate(iv.ub), iv.lb)
                                } else {
                                    (iv.lb, negate(iv.ub))
                                }
                            }
                            GroundPremise::Call(call) => {
                                let v = self.eval_predicate(call);
                                (v, negate(v))
                            }
                            GroundPremise::Test {
                                measure,
                                wff,
                                cmp,
                                threshold,
                            } => {
                                let iv = intervals[self.wff_index[wff]];
                                let lhs = match measure {
                                    Measure::Lb => iv.lb.value(),
                                    Measure::Ub => iv.ub.value(),
                                    Measure::Ignorance => iv.ignorance(),
                                };
                                if cmp.holds(lhs, *threshold) {
                                    (Confidence::ONE, Confidence::ZERO)
                                } else {
                                    (Confidence::ZERO, Confidence::ONE)
                                }
                            }
                        };
                        contributions.push(LoopContribution::Fixed(c, r));
                    }
                }
            }
            for (wff, alpha) in &inst.nm_premises {
                match member_wff.get(&self.wff_index[wff]) {
                    Some(&w) => {
                        contributions.push(LoopContribution::Assumption {
                            slot: slot_count,
                            wff: w,
                            alpha: *alpha,
                        });
                        slot_count += 1;
                    }
                    None => {
                        let v = if intervals[self.wff_index[wff]].lb.value() < alpha.value() {
                            Confidence::ONE
                        } else {
                            Confidence::ZERO
                        };
                        contributions.push(LoopContribution::Fixed(v, negate(v)));
                    }
                }
            }
            spec.rules.push(LoopRuleSpec {
                id: inst.id.clone(),
                conclusion: member_wff[&self.wff_index[&inst.conclusion]],
                sufficiency: self.rules[ri].sufficiency,
                necessity: self.rules[ri].necessity,
                family: self.rules[ri].family,
                active,
                contributions,
            });
        }
        spec.assumption_count = slot_count;

        match nonmono::resolve(&spec) {
            Ok(Some(ext)) => {
                for (i, &wi) in lp.wffs.iter().enumerate() {
                    intervals[wi] = match self.defaults.get(&wi) {
                        Some(d) if ext.intervals[i].ignorance() >= d.threshold => d.interval,
                        _ => ext.intervals[i],
                    };
                }
                for (j, &ri) in lp.rules.iter().enumerate() {
                    labels[ri] = ext.rule_labels[j];
                }
            }
            Ok(None) | Err(_) => {
                for &wi in &lp.wffs {
                    intervals[wi] = UncertaintyInterval::UNKNOWN;
                }
                for &ri in &lp.rules {
                    labels[ri] = (Confidence::ZERO, Confidence::ZERO);
                }
            }
        }
    }

    // --- instrumentation -----------------------------------------------------

    /// Record per-node wall times during passes (for the profiler).
    pub fn set_timing_capture(&mut self, on: bool) {
        self.timing_capture = on;
    }

    /// Drain captured samples: rule templates and predicates, µs per firing.
    pub fn take_timing_samples(&mut self) -> BTreeMap<String, Vec<f64>> {
        std::mem::take(&mut self.timing_samples)
    }

    // --- read-only views ------------------------------------------------------

    pub fn wff_views(&self) -> impl Iterator<Item = WffView<'_>> {
        self.wffs.iter().map(move |slot| WffView {
            wff: &slot.wff,
            interval: slot.interval,
            underlying: slot.underlying,
            validity: slot.validity,
            evidence: slot.evidence,
            is_input: slot.is_input,
            in_loop: slot.loop_id.is_some(),
            timestamp: slot.timestamp,
            aggregation: self.aggregation_family(self.wff_index[&slot.wff]),
            incoming: slot
                .incoming
                .iter()
                .map(|&ri| self.rules[ri].inst.id.as_str())
                .collect(),
        })
    }

    pub fn rule_views(&self) -> impl Iterator<Item = RuleView<'_>> {
        self.rules.iter().map(|slot| RuleView {
            id: &slot.inst.id,
            template: &slot.inst.template,
            sufficiency: slot.sufficiency,
            necessity: slot.necessity,
            family: slot.family,
            context_active: slot.context_active,
            confirmation: slot.confirmation,
            refutation: slot.refutation,
            premises: &slot.inst.premises,
            nm_premises: &slot.inst.nm_premises,
            conclusion: &slot.inst.conclusion,
            in_loop: slot.loop_id.is_some(),
        })
    }

    pub(crate) fn wff_slot_index(&self, wff: &GroundWff) -> Option<usize> {
        self.wff_index.get(wff).copied()
    }

    pub(crate) fn rule_template(&self, ri: usize) -> &str {
        &self.rules[ri].inst.template
    }

    pub(crate) fn rule_instance(&self, ri: usize) -> &RuleInstance {
        &self.rules[ri].inst
    }

    pub(crate) fn rule_labels(&self, ri: usize) -> (Confidence, Confidence, bool) {
        let r = &self.rules[ri];
        (r.confirmation, r.refutation, r.context_active)
    }

    pub(crate) fn rule_params(&self, ri: usize) -> (Confidence, Confidence, TnormFamily) {
        let r = &self.rules[ri];
        (r.sufficiency, r.necessity, r.family)
    }

    pub(crate) fn rule_loop(&self, ri: usize) -> Option<usize> {
        self.rules[ri].loop_id
    }

    /// Evaluate a predicate read-only (no memo write); for reporting.
    pub(crate) fn peek_predicate(&self, call: &GroundCall) -> Confidence {
        if let Some(&v) = self.memo.get(call) {
            return v;
        }
        let ctx = PredicateCtx {
            meta: &self.meta,
            attributes: &self.attributes,
        };
        match self.registry.fns.get(&call.name) {
            Some(f) => f(&ctx, &call.args),
            None => Confidence::ZERO,
        }
    }

    pub(crate) fn wff_state(&self, wi: usize) -> (&GroundWff, UncertaintyInterval, Validity) {
        let s = &self.wffs[wi];
        (&s.wff, s.interval, s.validity)
    }

    pub(crate) fn wff_incoming(&self, wi: usize) -> &[usize] {
        &self.wffs[wi].incoming
    }

    pub(crate) fn wff_evidence(&self, wi: usize) -> Option<UncertaintyInterval> {
        self.wffs[wi].evidence
    }

    pub(crate) fn wff_loop(&self, wi: usize) -> Option<usize> {
        self.wffs[wi].loop_id
    }

    pub(crate) fn rule_dirty(&self, ri: usize) -> bool {
        self.rules[ri].dirty
    }

    pub(crate) fn loop_region(&self, lid: usize) -> &InstanceLoop {
        &self.loops[lid]
    }

    pub(crate) fn default_state(&self, wi: usize) -> Option<(UncertaintyInterval, f64, bool)> {
        self.defaults
            .get(&wi)
            .map(|d| (d.interval, d.threshold, d.active))
    }
}

/// A read-only wff snapshot for checkers and reports.
pub struct WffView<'a> {
    pub wff: &'a GroundWff,
    pub interval: UncertaintyInterval,
    pub underlying: UncertaintyInterval,
    pub validity: Validity,
    pub evidence: Option<UncertaintyInterval>,
    pub is_input: bool,
    pub in_loop: bool,
    pub timestamp: u64,
    pub aggregation: TnormFamily,
    /// Incoming rule ids in fold order.
    pub incoming: Vec<&'a str>,
}

/// A read-only rule snapshot for checkers and reports.
pub struct RuleView<'a> {
    pub id: &'a str,
    pub template: &'a str,
    pub sufficiency: Confidence,
    pub necessity: Confidence,
    pub family: TnormFamily,
    pub context_active: bool,
    pub confirmation: Confidence,
    pub refutation: Confidence,
    pub premises: &'a [GroundPremise],
    pub nm_premises: &'a [(GroundWff, Confidence)],
    pub conclusion: &'a GroundWff,
    pub in_loop: bool,
}

fn flag_for(interval: UncertaintyInterval, ignorance_threshold: f64) -> Validity {
    if interval.in_conflict() {
        Validity::Inconsistent
    } else if interval.ignorance() >= ignorance_threshold {
        Validity::Ignorant
    } else {
        Validity::Valid
    }
}

fn tv_index(template: &crate::kb::RuleTemplate, tv: &crate::kb::TemplateVar) -> usize {
    template
        .vars
        .iter()
        .position(|v| v.name == tv.name)
        .expect("template variable belongs to its template")
}

/// All `size`-element combinations of `items`, in index order.
fn combinations(items: &[usize], size: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut current = Vec::with_capacity(size);
    fn walk(
        items: &[usize],
        size: usize,
        start: usize,
        current: &mut Vec<usize>,
        out: &mut Vec<Vec<usize>>,
    ) {
        if current.len() == size {
            out.push(current.clone());
            return;
        }
        for i in start..items.len() {
            current.push(items[i]);
            walk(items, size, i + 1, current, out);
            current.pop();
        }
    }
    walk(items, size, 0, &mut current, &mut out);
    out
}
