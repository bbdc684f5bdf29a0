//! Deadline planning: choose which proof paths of a goal's ancestor cone
//! to evaluate so the work fits a time budget.
//!
//! A proof path is a root-to-leaf chain goal ← rule ← premise ← rule ← …
//! Only rule nodes carry cost (from the timing table), and only while they
//! still need re-execution; nodes shared between selected paths are charged
//! once. Loop regions collapse into one pseudo-node costing the sum of
//! their member rules.

use std::collections::BTreeSet;

use crate::compile::timing::TimingTable;
use crate::engine::{Engine, INode};
use crate::kb::{GroundPremise, GroundWff};

/// Hard cap on enumerated candidate paths.
const MAX_PATHS: usize = 4096;

/// Exact subset selection up to this many candidate paths; greedy beyond.
const EXACT_LIMIT: usize = 20;

/// What the planner optimizes across the selected paths.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PlanObjective {
    /// Number of proof paths fully included.
    #[default]
    Coverage,
    /// Sum of per-path certainty bounds (min sufficiency along the path).
    Certainty,
}

/// One root-to-leaf support chain of the goal.
#[derive(Debug, Clone)]
pub struct ProofPath {
    /// Node labels joined root→leaf; the deterministic identity.
    pub id: String,
    pub nodes: Vec<INode>,
    /// Cost of the path alone: Σ timing over its not-yet-clean rule nodes.
    pub cost_us: f64,
    /// Min sufficiency over the rule links of the path.
    pub certainty: f64,
}

/// A budget-feasible evaluation plan for one goal.
#[derive(Debug, Clone)]
pub struct PathPlan {
    pub goal: GroundWff,
    /// All candidate paths, sorted by id.
    pub paths: Vec<ProofPath>,
    /// Indices into `paths` of the selected set.
    pub selected: Vec<usize>,
    /// Union of selected path nodes plus the goal node.
    pub subgraph: BTreeSet<INode>,
    /// Cost of the subgraph, shared nodes counted once.
    pub estimated_cost_us: f64,
    pub budget_us: f64,
    /// True when not even the cheapest single path fits the budget; the
    /// plan then holds that path anyway.
    pub degraded: bool,
    pub objective: PlanObjective,
    /// True when enumeration hit the candidate cap.
    pub truncated: bool,
}

impl PathPlan {
    /// Short rendering for result records: selected/total, cost, budget.
    pub fn summary(&self) -> String {
        format!(
            "{}/{} paths cost {:.0}us budget {:.0}us{}",
            self.selected.len(),
            self.paths.len(),
            self.estimated_cost_us,
            self.budget_us,
            if self.degraded { " DEGRADED" } else { "" }
        )
    }
}

/// Cost of one node: dirty rules charge their template's tabulated cost,
/// loop pseudo-members charge as a block elsewhere; everything else is 0.
fn node_cost(engine: &Engine, timing: &TimingTable, node: INode, fallback: f64) -> f64 {
    match node {
        INode::Rule(ri) if engine.rule_dirty(ri) => timing
            .cost_us(engine.rule_template(ri))
            .unwrap_or(fallback),
        _ => 0.0,
    }
}

/// Pessimistic fallback cost for nodes missing from the table.
fn fallback_cost(timing: &TimingTable) -> f64 {
    timing
        .entries
        .values()
        .map(|e| e.cost_us)
        .fold(0.0, f64::max)
}

/// Enumerate the goal's proof paths and select the subset that maximizes
/// the objective within `budget_us`.
pub fn plan(
    engine: &Engine,
    timing: &TimingTable,
    goal: &GroundWff,
    budget_us: f64,
    objective: PlanObjective,
) -> Option<PathPlan> {
    let goal_wi = engine.wff_slot_index(goal)?;
    let fallback = fallback_cost(timing);

    // Depth-first chain enumeration. Frames carry the chain so far.
    let mut paths: Vec<ProofPath> = Vec::new();
    let mut truncated = false;
    let mut stack: Vec<(Vec<INode>, Vec<String>, f64, ChainPoint)> = vec![(
        Vec::new(),
        Vec::new(),
        1.0,
        ChainPoint::Wff(goal_wi),
    )];
    while let Some((chain, labels, certainty, point)) = stack.pop() {
        if paths.len() >= MAX_PATHS {
            truncated = true;
            break;
        }
        match point {
            ChainPoint::Wff(wi) => {
                if let Some(lid) = engine.wff_loop(wi) {
                    push_loop(engine, lid, chain, labels, certainty, &mut stack, &mut paths);
                    continue;
                }
                let incoming = engine.wff_incoming(wi);
                let mut chain = chain;
                let mut labels = labels;
                chain.push(INode::Wff(wi));
                labels.push(engine.wff_state(wi).0.to_string());
                if incoming.is_empty() {
                    paths.push(finish_path(engine, timing, chain, labels, certainty, fallback));
                    continue;
                }
                for &ri in incoming.iter().rev() {
                    stack.push((
                        chain.clone(),
                        labels.clone(),
                        certainty,
                        ChainPoint::Rule(ri),
                    ));
                }
            }
            ChainPoint::Rule(ri) => {
                if let Some(lid) = engine.rule_loop(ri) {
                    push_loop(engine, lid, chain, labels, certainty, &mut stack, &mut paths);
                    continue;
                }
                let inst = engine.rule_instance(ri);
                let (s, _, _) = engine.rule_params(ri);
                let mut chain = chain;
                let mut labels = labels;
                chain.push(INode::Rule(ri));
                labels.push(inst.id.clone());
                let certainty = certainty.min(s.value());
                let premise_wffs = rule_premise_wffs(engine, ri);
                if premise_wffs.is_empty() {
                    paths.push(finish_path(engine, timing, chain, labels, certainty, fallback));
                    continue;
                }
                for wi in premise_wffs.into_iter().rev() {
                    stack.push((
                        chain.clone(),
                        labels.clone(),
                        certainty,
                        ChainPoint::Wff(wi),
                    ));
                }
            }
            ChainPoint::LoopExit(lid, exits) => {
                // The collapsed region is already on the chain; branch over
                // its external premise wffs, or end the path here if the
                // loop has no outside support.
                if exits.is_empty() {
                    paths.push(finish_path(engine, timing, chain, labels, certainty, fallback));
                    continue;
                }
                let _ = lid;
                for wi in exits.into_iter().rev() {
                    stack.push((
                        chain.clone(),
                        labels.clone(),
                        certainty,
                        ChainPoint::Wff(wi),
                    ));
                }
            }
        }
    }
    paths.sort_by(|a, b| a.id.cmp(&b.id));

    let budget = budget_us.max(0.0);
    let (selected, degraded) = select(&paths, engine, timing, budget, objective, fallback);

    let mut subgraph: BTreeSet<INode> = BTreeSet::new();
    subgraph.insert(INode::Wff(goal_wi));
    for &i in &selected {
        subgraph.extend(paths[i].nodes.iter().copied());
    }
    let estimated_cost_us = subgraph
        .iter()
        .map(|&n| node_cost(engine, timing, n, fallback))
        .sum();

    Some(PathPlan {
        goal: goal.clone(),
        paths,
        selected,
        subgraph,
        estimated_cost_us,
        budget_us: budget,
        degraded,
        objective,
        truncated,
    })
}

enum ChainPoint {
    Wff(usize),
    Rule(usize),
    /// A collapsed loop was appended; continue from its external premises.
    LoopExit(usize, Vec<usize>),
}

/// Collapse a loop region onto the chain as one block and queue its exits.
fn push_loop(
    engine: &Engine,
    lid: usize,
    mut chain: Vec<INode>,
    mut labels: Vec<String>,
    certainty: f64,
    stack: &mut Vec<(Vec<INode>, Vec<String>, f64, ChainPoint)>,
    _paths: &mut Vec<ProofPath>,
) {
    let region = engine.loop_region(lid);
    if chain
        .iter()
        .any(|n| matches!(n, INode::Rule(ri) if region.rules.contains(ri)))
    {
        // Already traversed this region on this chain; cut the branch.
        return;
    }
    let mut certainty = certainty;
    for &wi in &region.wffs {
        chain.push(INode::Wff(wi));
    }
    for &ri in &region.rules {
        chain.push(INode::Rule(ri));
        certainty = certainty.min(engine.rule_params(ri).0.value());
    }
    labels.push(format!("loop({})", engine.wff_state(region.wffs[0]).0));

    let members: BTreeSet<usize> = region.wffs.iter().copied().collect();
    let mut exits: Vec<usize> = Vec::new();
    for &ri in &region.rules {
        for wi in rule_premise_wffs(engine, ri) {
            if !members.contains(&wi) && !exits.contains(&wi) {
                exits.push(wi);
            }
        }
    }
    stack.push((chain, labels, certainty, ChainPoint::LoopExit(lid, exits)));
}

fn rule_premise_wffs(engine: &Engine, ri: usize) -> Vec<usize> {
    let inst = engine.rule_instance(ri);
    let mut out = Vec::new();
    for p in &inst.premises {
        match p {
            GroundPremise::Wff { wff, .. } | GroundPremise::Test { wff, .. } => {
                if let Some(wi) = engine.wff_slot_index(wff) {
                    if !out.contains(&wi) {
                        out.push(wi);
                    }
                }
            }
            GroundPremise::Call(_) => {}
        }
    }
    for (wff, _) in &inst.nm_premises {
        if let Some(wi) = engine.wff_slot_index(wff) {
            if !out.contains(&wi) {
                out.push(wi);
            }
        }
    }
    out
}

fn finish_path(
    engine: &Engine,
    timing: &TimingTable,
    nodes: Vec<INode>,
    labels: Vec<String>,
    certainty: f64,
    fallback: f64,
) -> ProofPath {
    let cost_us = nodes
        .iter()
        .collect::<BTreeSet<_>>()
        .into_iter()
        .map(|&n| node_cost(engine, timing, n, fallback))
        .sum();
    ProofPath {
        id: labels.join(" <- "),
        nodes,
        cost_us,
        certainty,
    }
}

/// Pick the feasible subset maximizing the objective; ties break toward the
/// lexicographically smaller selected-id vector. Exact branch-and-bound up
/// to `EXACT_LIMIT` paths, greedy marginal-cost beyond.
fn select(
    paths: &[ProofPath],
    engine: &Engine,
    timing: &TimingTable,
    budget: f64,
    objective: PlanObjective,
    fallback: f64,
) -> (Vec<usize>, bool) {
    if paths.is_empty() {
        return (Vec::new(), false);
    }
    let union_cost = |set: &[usize]| -> f64 {
        let mut nodes: BTreeSet<INode> = BTreeSet::new();
        for &i in set {
            nodes.extend(paths[i].nodes.iter().copied());
        }
        nodes
            .into_iter()
            .map(|n| node_cost(engine, timing, n, fallback))
            .sum()
    };

    let feasible_singles: Vec<usize> = (0..paths.len())
        .filter(|&i| paths[i].cost_us <= budget)
        .collect();
    if feasible_singles.is_empty() {
        // Degraded: cheapest single path, lexicographically first on ties.
        let cheapest = (0..paths.len())
            .min_by(|&a, &b| {
                paths[a]
                    .cost_us
                    .partial_cmp(&paths[b].cost_us)
                    .unwrap()
                    .then(paths[a].id.cmp(&paths[b].id))
            })
            .unwrap();
        return (vec![cheapest], true);
    }

    if paths.len() <= EXACT_LIMIT {
        let mut best: Option<(f64, Vec<usize>)> = None;
        let mut current: Vec<usize> = Vec::new();
        exact_search(
            paths,
            &union_cost,
            budget,
            objective,
            0,
            &mut current,
            &mut best,
        );
        (best.map(|(_, set)| set).unwrap_or_default(), false)
    } else {
        // Greedy: repeatedly add the path with the least marginal cost
        // (most marginal certainty per cost in certainty mode).
        let mut chosen: Vec<usize> = Vec::new();
        let mut nodes: BTreeSet<INode> = BTreeSet::new();
        let mut cost = 0.0;
        loop {
            let mut pick: Option<(f64, usize, f64)> = None;
            for i in 0..paths.len() {
                if chosen.contains(&i) {
                    continue;
                }
                let marginal: f64 = paths[i]
                    .nodes
                    .iter()
                    .filter(|n| !nodes.contains(n))
                    .map(|&n| node_cost(engine, timing, n, fallback))
                    .sum();
                if cost + marginal > budget {
                    continue;
                }
                let key = match objective {
                    PlanObjective::Coverage => marginal,
                    PlanObjective::Certainty => {
                        // Cheap certainty first: cost per unit of certainty.
                        marginal / paths[i].certainty.max(1e-9)
                    }
                };
                if pick.map(|(k, _, _)| key < k).unwrap_or(true) {
                    pick = Some((key, i, marginal));
                }
            }
            match pick {
                Some((_, i, marginal)) => {
                    nodes.extend(paths[i].nodes.iter().copied());
                    cost += marginal;
                    chosen.push(i);
                }
                None => break,
            }
        }
        chosen.sort_unstable();
        (chosen, false)
    }
}

/// Depth-first include/exclude over paths with budget pruning; `best` keeps
/// (score, selected) where higher score wins and equal scores prefer the
/// lexicographically smaller id vector.
fn exact_search(
    paths: &[ProofPath],
    union_cost: &dyn Fn(&[usize]) -> f64,
    budget: f64,
    objective: PlanObjective,
    index: usize,
    current: &mut Vec<usize>,
    best: &mut Option<(f64, Vec<usize>)>,
) {
    if index == paths.len() {
        if union_cost(current) > budget {
            return;
        }
        let score = match objective {
            PlanObjective::Coverage => current.len() as f64,
            PlanObjective::Certainty => current.iter().map(|&i| paths[i].certainty).sum(),
        };
        let better = match best {
            None => true,
            Some((s, set)) => {
                score > *s + 1e-12
                    || ((score - *s).abs() <= 1e-12
                        && id_vector(paths, current) < id_vector(paths, set))
            }
        };
        if better {
            *best = Some((score, current.clone()));
        }
        return;
    }
    current.push(index);
    if union_cost(current) <= budget {
        exact_search(paths, union_cost, budget, objective, index + 1, current, best);
    }
    current.pop();
    exact_search(paths, union_cost, budget, objective, index + 1, current, best);
}

fn id_vector<'a>(paths: &'a [ProofPath], set: &[usize]) -> Vec<&'a str> {
    set.iter().map(|&i| paths[i].id.as_str()).collect()
}
