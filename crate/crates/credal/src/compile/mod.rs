//! Rule-base compilation: build the AND/OR dependency graph, verify that the
//! monotonic part is acyclic, group non-monotonic cycles into loop regions,
//! and produce a deterministic topological order.
//!
//! The graph is built at the template level. Wff nodes are keyed by
//! `(variable, value)` with a wff and its negation sharing one node (their
//! bounds are coupled through `LB(w̄) = 1 − UB(w)`), so any template-level
//! cycle is a genuine dependency cycle regardless of arc polarity, and
//! acyclicity here guarantees acyclicity of every instantiation.

mod network;
pub mod timing;

pub use network::{emit_network, load_network, CompiledNetwork, NetworkError};

use std::collections::{BTreeMap, BTreeSet};

use crate::calculus::Confidence;
use crate::kb::{KnowledgeBase, Premise};

/// Compilation failure.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CompileError {
    #[error("monotonic cycle: {}", path.join(" -> "))]
    MonotonicCycle { path: Vec<String> },
    #[error("template `{template}` references undeclared predicate `{predicate}`")]
    UndeclaredPredicate { template: String, predicate: String },
}

/// Graph node handle: index into [`RuleGraph::or_nodes`] or
/// [`RuleGraph::and_nodes`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum NodeId {
    Or(u32),
    And(u32),
}

/// A wff node: one `(variable, value)` assignment, both polarities.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct OrNode {
    pub variable: String,
    pub value: String,
}

/// A justification node: one rule template.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct AndNode {
    pub template: String,
}

/// How an arc participates in propagation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ArcKind {
    /// Wff premise; `negated` premises read the refutation side.
    Premise { negated: bool },
    /// Crisp threshold test on the premise wff's interval.
    Test,
    /// Non-monotonic antecedent with its belief threshold.
    Nm { alpha: Confidence },
    /// Justification output into its conclusion wff.
    Conclusion,
}

impl ArcKind {
    fn rank(self) -> u8 {
        match self {
            ArcKind::Premise { negated: false } => 0,
            ArcKind::Premise { negated: true } => 1,
            ArcKind::Test => 2,
            ArcKind::Nm { .. } => 3,
            ArcKind::Conclusion => 4,
        }
    }

    /// Non-monotonic arcs are excluded from the acyclicity requirement.
    pub fn is_monotonic(self) -> bool {
        !matches!(self, ArcKind::Nm { .. })
    }
}

/// A directed dependency arc.
#[derive(Debug, Clone, PartialEq)]
pub struct Arc {
    pub from: NodeId,
    pub to: NodeId,
    pub kind: ArcKind,
}

/// A strongly connected region whose cycles all traverse a non-monotonic
/// arc; contracted to a single node for ordering purposes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LoopRegion {
    pub members: Vec<NodeId>,
}

/// The compiled AND/OR dependency graph.
#[derive(Debug, Clone, PartialEq)]
pub struct RuleGraph {
    pub or_nodes: Vec<OrNode>,
    pub and_nodes: Vec<AndNode>,
    pub arcs: Vec<Arc>,
    /// Every node, loop members contiguous, all monotonic arcs forward.
    pub topo_order: Vec<NodeId>,
    pub loops: Vec<LoopRegion>,
}

impl RuleGraph {
    pub fn node_count(&self) -> usize {
        self.or_nodes.len() + self.and_nodes.len()
    }

    /// Human-readable node label for diagnostics.
    pub fn node_name(&self, id: NodeId) -> String {
        match id {
            NodeId::Or(i) => {
                let n = &self.or_nodes[i as usize];
                format!("({} {})", n.variable, n.value)
            }
            NodeId::And(i) => self.and_nodes[i as usize].template.clone(),
        }
    }

    /// Index of the wff node for `(variable, value)`, if present.
    pub fn or_index(&self, variable: &str, value: &str) -> Option<u32> {
        self.or_nodes
            .binary_search_by(|n| {
                (n.variable.as_str(), n.value.as_str()).cmp(&(variable, value))
            })
            .ok()
            .map(|i| i as u32)
    }
}

fn arc_sort_key(a: &Arc) -> (NodeId, NodeId, u8, u64) {
    let alpha_bits = match a.kind {
        ArcKind::Nm { alpha } => alpha.value().to_bits(),
        _ => 0,
    };
    (a.from, a.to, a.kind.rank(), alpha_bits)
}

/// Build and analyze the dependency graph of a knowledge base.
///
/// Structurally identical premise patterns across rules share one wff node.
/// A cycle whose arcs are all monotonic is an error (reported as a full node
/// path); cycles through non-monotonic antecedents become [`LoopRegion`]s.
pub fn build_graph(kb: &KnowledgeBase) -> Result<RuleGraph, CompileError> {
    for t in kb.templates.values() {
        for call in t.context.iter().chain(t.premises.iter().filter_map(|p| match p {
            Premise::Call(c) => Some(c),
            _ => None,
        })) {
            if !kb.predicates.contains_key(&call.name) {
                return Err(CompileError::UndeclaredPredicate {
                    template: t.name.clone(),
                    predicate: call.name.clone(),
                });
            }
        }
    }

    // Wff nodes, keyed by (variable, value) across all rules.
    let mut or_keys: BTreeSet<(String, String)> = BTreeSet::new();
    for t in kb.templates.values() {
        for p in &t.premises {
            match p {
                Premise::Wff { pattern, .. } | Premise::Test { pattern, .. } => {
                    or_keys.insert((pattern.variable.clone(), pattern.value.clone()));
                }
                Premise::Call(_) => {}
            }
        }
        for nm in &t.nm_premises {
            or_keys.insert((nm.pattern.variable.clone(), nm.pattern.value.clone()));
        }
        or_keys.insert((t.conclusion.variable.clone(), t.conclusion.value.clone()));
    }
    let or_nodes: Vec<OrNode> = or_keys
        .into_iter()
        .map(|(variable, value)| OrNode { variable, value })
        .collect();
    let or_index: BTreeMap<(&str, &str), u32> = or_nodes
        .iter()
        .enumerate()
        .map(|(i, n)| ((n.variable.as_str(), n.value.as_str()), i as u32))
        .collect();

    let and_nodes: Vec<AndNode> = kb
        .templates
        .keys()
        .map(|name| AndNode {
            template: name.clone(),
        })
        .collect();

    let mut arcs: Vec<Arc> = Vec::new();
    for (j, node) in and_nodes.iter().enumerate() {
        let t = &kb.templates[&node.template];
        let and_id = NodeId::And(j as u32);
        for p in &t.premises {
            match p {
                Premise::Wff { pattern, negated } => arcs.push(Arc {
                    from: NodeId::Or(or_index[&(pattern.variable.as_str(), pattern.value.as_str())]),
                    to: and_id,
                    kind: ArcKind::Premise { negated: *negated },
                }),
                Premise::Test { pattern, .. } => arcs.push(Arc {
                    from: NodeId::Or(or_index[&(pattern.variable.as_str(), pattern.value.as_str())]),
                    to: and_id,
                    kind: ArcKind::Test,
                }),
                Premise::Call(_) => {}
            }
        }
        for nm in &t.nm_premises {
            arcs.push(Arc {
                from: NodeId::Or(
                    or_index[&(nm.pattern.variable.as_str(), nm.pattern.value.as_str())],
                ),
                to: and_id,
                kind: ArcKind::Nm { alpha: nm.alpha },
            });
        }
        arcs.push(Arc {
            from: and_id,
            to: NodeId::Or(
                or_index[&(t.conclusion.variable.as_str(), t.conclusion.value.as_str())],
            ),
            kind: ArcKind::Conclusion,
        });
    }
    arcs.sort_by(|a, b| arc_sort_key(a).cmp(&arc_sort_key(b)));
    arcs.dedup();

    let mut graph = RuleGraph {
        or_nodes,
        and_nodes,
        arcs,
        topo_order: Vec::new(),
        loops: Vec::new(),
    };

    if let Some(cycle) = find_cycle(&graph, /*monotonic_only=*/ true) {
        let path = cycle.iter().map(|&n| graph.node_name(n)).collect();
        return Err(CompileError::MonotonicCycle { path });
    }

    let components = strongly_connected_components(&graph);
    graph.loops = components
        .iter()
        .filter(|c| c.len() > 1)
        .map(|c| LoopRegion { members: c.clone() })
        .collect();
    graph.topo_order = condensation_order(&graph, &components);
    Ok(graph)
}

fn all_nodes(graph: &RuleGraph) -> impl Iterator<Item = NodeId> + '_ {
    (0..graph.or_nodes.len() as u32)
        .map(NodeId::Or)
        .chain((0..graph.and_nodes.len() as u32).map(NodeId::And))
}

fn successors(graph: &RuleGraph, monotonic_only: bool) -> BTreeMap<NodeId, Vec<NodeId>> {
    let mut succ: BTreeMap<NodeId, Vec<NodeId>> =
        all_nodes(graph).map(|n| (n, Vec::new())).collect();
    for arc in &graph.arcs {
        if monotonic_only && !arc.kind.is_monotonic() {
            continue;
        }
        succ.get_mut(&arc.from).unwrap().push(arc.to);
    }
    for list in succ.values_mut() {
        list.dedup();
    }
    succ
}

/// Iterative colored DFS; returns one full cycle (`n₀ … n₀`) if any exists.
fn find_cycle(graph: &RuleGraph, monotonic_only: bool) -> Option<Vec<NodeId>> {
    let succ = successors(graph, monotonic_only);
    #[derive(Clone, Copy, PartialEq)]
    enum Color {
        White,
        Gray,
        Black,
    }
    let mut color: BTreeMap<NodeId, Color> = all_nodes(graph).map(|n| (n, Color::White)).collect();
    let mut path: Vec<NodeId> = Vec::new();

    for start in all_nodes(graph) {
        if color[&start] != Color::White {
            continue;
        }
        let mut stack: Vec<(NodeId, usize)> = vec![(start, 0)];
        while let Some(&mut (node, ref mut next)) = stack.last_mut() {
            if *next == 0 {
                color.insert(node, Color::Gray);
                path.push(node);
            }
            if let Some(&child) = succ[&node].get(*next) {
                *next += 1;
                match color[&child] {
                    Color::Gray => {
                        let from = path.iter().position(|&n| n == child).unwrap();
                        let mut cycle = path[from..].to_vec();
                        cycle.push(child);
                        return Some(cycle);
                    }
                    Color::White => stack.push((child, 0)),
                    Color::Black => {}
                }
            } else {
                color.insert(node, Color::Black);
                path.pop();
                stack.pop();
            }
        }
    }
    None
}

/// Iterative Tarjan over the full graph (non-monotonic arcs included).
/// Components are returned with sorted members, in a deterministic order.
fn strongly_connected_components(graph: &RuleGraph) -> Vec<Vec<NodeId>> {
    let succ = successors(graph, false);
    let mut index: BTreeMap<NodeId, u32> = BTreeMap::new();
    let mut lowlink: BTreeMap<NodeId, u32> = BTreeMap::new();
    let mut on_stack: BTreeSet<NodeId> = BTreeSet::new();
    let mut stack: Vec<NodeId> = Vec::new();
    let mut next_index = 0u32;
    let mut components: Vec<Vec<NodeId>> = Vec::new();

    for start in all_nodes(graph) {
        if index.contains_key(&start) {
            continue;
        }
        let mut work: Vec<(NodeId, usize)> = vec![(start, 0)];
        while let Some(&mut (node, ref mut next)) = work.last_mut() {
            if *next == 0 {
                index.insert(node, next_index);
                lowlink.insert(node, next_index);
                next_index += 1;
                stack.push(node);
                on_stack.insert(node);
            }
            if let Some(&child) = succ[&node].get(*next) {
                *next += 1;
                if !index.contains_key(&child) {
                    work.push((child, 0));
                } else if on_stack.contains(&child) {
                    let low = lowlink[&node].min(index[&child]);
                    lowlink.insert(node, low);
                }
            } else {
                if lowlink[&node] == index[&node] {
                    let mut component = Vec::new();
                    loop {
                        let member = stack.pop().unwrap();
                        on_stack.remove(&member);
                        component.push(member);
                        if member == node {
                            break;
                        }
                    }
                    component.sort();
                    components.push(component);
                }
                work.pop();
                if let Some(&(parent, _)) = work.last() {
                    let low = lowlink[&parent].min(lowlink[&node]);
                    lowlink.insert(parent, low);
                }
            }
        }
    }
    components.sort();
    components
}

/// Kahn's algorithm over the component condensation, smallest representative
/// first; members of each component are emitted contiguously in sorted order.
fn condensation_order(graph: &RuleGraph, components: &[Vec<NodeId>]) -> Vec<NodeId> {
    let comp_of: BTreeMap<NodeId, usize> = components
        .iter()
        .enumerate()
        .flat_map(|(ci, c)| c.iter().map(move |&n| (n, ci)))
        .collect();

    let mut indegree: Vec<usize> = vec![0; components.len()];
    let mut succ: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); components.len()];
    for arc in &graph.arcs {
        let (a, b) = (comp_of[&arc.from], comp_of[&arc.to]);
        if a != b && succ[a].insert(b) {
            indegree[b] += 1;
        }
    }

    // Components indices are already sorted by smallest member.
    let mut ready: BTreeSet<usize> = (0..components.len())
        .filter(|&c| indegree[c] == 0)
        .collect();
    let mut order = Vec::with_capacity(graph.node_count());
    while let Some(&c) = ready.iter().next() {
        ready.remove(&c);
        order.extend(components[c].iter().copied());
        for &next in &succ[c] {
            indegree[next] -= 1;
            if indegree[next] == 0 {
                ready.insert(next);
            }
        }
    }
    debug_assert_eq!(order.len(), graph.node_count());
    order
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kb::parse_kb;

    fn graph_of(src: &str) -> RuleGraph {
        build_graph(&parse_kb(src).unwrap()).unwrap()
    }

    #[test]
    fn two_rules_into_one_conclusion() {
        let g = graph_of(
            "(variable a)(variable b)(variable c)\
             (rule j1 :premises ((a t)) :sufficiency 0.9 :tnorm T2 :conclusion (c t))\
             (rule j2 :premises ((b t)) :sufficiency 0.8 :tnorm T2 :conclusion (c t))",
        );
        assert_eq!(g.or_nodes.len(), 3);
        assert_eq!(g.and_nodes.len(), 2);
        let c = NodeId::Or(g.or_index("c", "t").unwrap());
        let incoming: Vec<_> = g.arcs.iter().filter(|a| a.to == c).collect();
        assert_eq!(incoming.len(), 2);
        assert!(incoming.iter().all(|a| a.kind == ArcKind::Conclusion));
        assert!(g.loops.is_empty());
    }

    #[test]
    fn shared_premise_pattern_is_one_node() {
        let g = graph_of(
            "(object-type contact)(variable p :of contact)(variable q)(variable r)\
             (rule r1 :vars ((?x contact)) :premises ((p ?x hot)) :sufficiency 0.9 :tnorm T2 :conclusion (q t))\
             (rule r2 :vars ((?y contact)) :premises ((p ?y hot)) :sufficiency 0.8 :tnorm T3 :conclusion (r t))",
        );
        let shared: Vec<_> = g.or_nodes.iter().filter(|n| n.variable == "p").collect();
        assert_eq!(shared.len(), 1);
    }

    #[test]
    fn monotonic_cycle_is_rejected_with_a_path() {
        let err = build_graph(
            &parse_kb(
                "(variable a)(variable b)\
                 (rule j1 :premises ((a t)) :sufficiency 0.9 :tnorm T2 :conclusion (b t))\
                 (rule j2 :premises ((b t)) :sufficiency 0.9 :tnorm T2 :conclusion (a t))",
            )
            .unwrap(),
        )
        .unwrap_err();
        let CompileError::MonotonicCycle { path } = err else {
            panic!("expected cycle error, got {err:?}");
        };
        assert_eq!(path.first(), path.last());
        assert_eq!(path.len(), 5);
        for name in ["(a t)", "j1", "(b t)", "j2"] {
            assert!(path.contains(&name.to_string()), "{path:?} missing {name}");
        }
    }

    #[test]
    fn nm_cycle_becomes_a_loop_region() {
        let g = graph_of(
            "(variable p)(variable q)\
             (rule r1 :nm-premises (((q t) :alpha 0.5)) :sufficiency 0.8 :tnorm T3 :conclusion (p t))\
             (rule r2 :nm-premises (((p t) :alpha 0.5)) :sufficiency 0.8 :tnorm T3 :conclusion (q t))",
        );
        assert_eq!(g.loops.len(), 1);
        assert_eq!(g.loops[0].members.len(), 4);
        // Loop members appear contiguously in the topological order.
        let positions: Vec<_> = g.loops[0]
            .members
            .iter()
            .map(|m| g.topo_order.iter().position(|n| n == m).unwrap())
            .collect();
        let lo = *positions.iter().min().unwrap();
        let hi = *positions.iter().max().unwrap();
        assert_eq!(hi - lo + 1, positions.len());
    }

    #[test]
    fn mixed_cycle_with_an_nm_arc_is_allowed() {
        // p -> q monotonic, q -> p non-monotonic: every cycle crosses the NM arc.
        let g = graph_of(
            "(variable p)(variable q)\
             (rule r1 :premises ((p t)) :sufficiency 0.9 :tnorm T2 :conclusion (q t))\
             (rule r2 :nm-premises (((q t) :alpha 0.5)) :sufficiency 0.8 :tnorm T3 :conclusion (p t))",
        );
        assert_eq!(g.loops.len(), 1);
    }

    #[test]
    fn topo_order_is_valid_and_complete() {
        let g = graph_of(
            "(variable a)(variable b)(variable c)(variable d)\
             (rule j1 :premises ((a t)) :sufficiency 0.9 :tnorm T2 :conclusion (b t))\
             (rule j2 :premises ((b t)) :sufficiency 0.9 :tnorm T2 :conclusion (c t))\
             (rule j3 :premises ((a t) (c t)) :sufficiency 0.9 :tnorm T2 :conclusion (d t))",
        );
        assert_eq!(g.topo_order.len(), g.node_count());
        let pos: BTreeMap<NodeId, usize> = g
            .topo_order
            .iter()
            .enumerate()
            .map(|(i, &n)| (n, i))
            .collect();
        for arc in &g.arcs {
            assert!(pos[&arc.from] < pos[&arc.to], "arc goes backward");
        }
    }

    #[test]
    fn test_premises_create_dependency_arcs() {
        let g = graph_of(
            "(variable a)(variable b)\
             (rule j1 :premises ((lb (a t) >= 0.6)) :sufficiency 0.9 :tnorm T2 :conclusion (b t))",
        );
        assert!(g
            .arcs
            .iter()
            .any(|arc| arc.kind == ArcKind::Test && arc.to == NodeId::And(0)));
    }

    #[test]
    fn predicate_only_rules_have_no_premise_arcs() {
        let g = graph_of(
            "(variable b)(predicate ready 0)\
             (rule j1 :premises ((ready)) :sufficiency 0.9 :tnorm T2 :conclusion (b t))",
        );
        let premise_arcs = g
            .arcs
            .iter()
            .filter(|a| matches!(a.kind, ArcKind::Premise { .. } | ArcKind::Test))
            .count();
        assert_eq!(premise_arcs, 0);
        assert_eq!(g.or_nodes.len(), 1);
    }
}
