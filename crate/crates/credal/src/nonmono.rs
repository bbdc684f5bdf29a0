//! Non-monotonic loop resolution.
//!
//! A loop is a strongly connected region of the rule graph whose cycles all
//! cross a non-monotonic antecedent `¬[α]p` (true iff `LB(p) < α`). The
//! region is resolved by enumerating truth assignments to its internal
//! non-monotonic antecedents, propagating the (acyclic) remainder under each
//! assignment, keeping the self-consistent fixed points as extensions, and
//! publishing the extension with maximal information content.

use std::collections::BTreeSet;

use crate::calculus::{tconorm_n, tnorm_n, Confidence, TnormFamily, UncertaintyInterval};
use crate::compile::{ArcKind, LoopRegion, RuleGraph};
use crate::kb::{Cmp, GroundWff, Measure};

/// Loop-resolution failure.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum NonmonoError {
    #[error("loop has {count} non-monotonic antecedents, above the cap of {cap}; restructure the KB to shrink the loop")]
    TooManyAssumptions { count: usize, cap: usize },
    #[error("no extension to select from")]
    NoExtensions,
    #[error("loop region has a cycle with no non-monotonic arc")]
    MonotonicLoop,
}

/// Default bound on internal non-monotonic antecedents per loop (the
/// enumeration is `2^count`).
pub const DEFAULT_ASSUMPTION_CAP: usize = 16;

/// One contribution to a loop rule, in the rule's premise order.
#[derive(Debug, Clone, PartialEq)]
pub enum LoopContribution {
    /// Premise resolved outside the loop: fixed (confirmation, refutation).
    Fixed(Confidence, Confidence),
    /// Wff premise on a loop member.
    Internal { wff: usize, kind: InternalKind },
    /// Non-monotonic antecedent on a loop member: an assumption slot.
    Assumption {
        slot: usize,
        wff: usize,
        alpha: Confidence,
    },
}

/// How an internal wff premise is read.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InternalKind {
    Positive,
    Negated,
    Test {
        measure: Measure,
        cmp: Cmp,
        threshold: f64,
    },
}

/// A loop member rule with its premises resolved against the loop.
#[derive(Debug, Clone, PartialEq)]
pub struct LoopRuleSpec {
    pub id: String,
    /// Index into [`LoopSpec::wffs`].
    pub conclusion: usize,
    pub sufficiency: Confidence,
    pub necessity: Confidence,
    pub family: TnormFamily,
    /// Context state at resolution time; an inactive rule contributes 0.
    pub active: bool,
    pub contributions: Vec<LoopContribution>,
}

/// A self-contained description of one loop region, ready to enumerate.
#[derive(Debug, Clone, PartialEq)]
pub struct LoopSpec {
    /// Member wffs, sorted; indices below refer to this list.
    pub wffs: Vec<GroundWff>,
    /// Aggregation family per member wff.
    pub agg: Vec<TnormFamily>,
    /// External support entering each member wff (confirmation, refutation)
    /// — boundary rule labels and evidence, already evaluated.
    pub external: Vec<Vec<(Confidence, Confidence)>>,
    pub rules: Vec<LoopRuleSpec>,
    /// Total assumption slots; slot indices are `0..assumption_count`.
    pub assumption_count: usize,
    pub cap: usize,
}

/// A self-consistent fixed point of a loop.
#[derive(Debug, Clone, PartialEq)]
pub struct Extension {
    /// Assumption-slot truth bits (bit `i` = slot `i` holds).
    pub assumptions: u32,
    /// Interval per member wff, aligned with [`LoopSpec::wffs`].
    pub intervals: Vec<UncertaintyInterval>,
    /// (confirmation, refutation) label per member rule.
    pub rule_labels: Vec<(Confidence, Confidence)>,
    /// Information content: Σ over member wffs of `LB + (1 − UB)`.
    pub score: f64,
}

/// The loop regions of a compiled graph, verified to be genuinely
/// non-monotonic: every region must contain at least one NM arc.
pub fn find_loops(graph: &RuleGraph) -> Result<Vec<LoopRegion>, NonmonoError> {
    for region in &graph.loops {
        let members: BTreeSet<_> = region.members.iter().collect();
        let has_nm = graph.arcs.iter().any(|a| {
            matches!(a.kind, ArcKind::Nm { .. })
                && members.contains(&a.from)
                && members.contains(&a.to)
        });
        if !has_nm {
            return Err(NonmonoError::MonotonicLoop);
        }
    }
    Ok(graph.loops.clone())
}

/// Propagation order inside the loop with assumption arcs removed; the
/// remainder is acyclic because every loop cycle crosses an NM arc.
#[derive(Debug, Clone, Copy, PartialEq)]
enum LoopNode {
    Wff(usize),
    Rule(usize),
}

fn internal_order(spec: &LoopSpec) -> Vec<LoopNode> {
    let wn = spec.wffs.len();
    let total = wn + spec.rules.len();
    let index = |n: LoopNode| match n {
        LoopNode::Wff(i) => i,
        LoopNode::Rule(i) => wn + i,
    };
    let mut succ: Vec<Vec<usize>> = vec![Vec::new(); total];
    let mut indegree = vec![0usize; total];
    for (ri, rule) in spec.rules.iter().enumerate() {
        let r = index(LoopNode::Rule(ri));
        let c = index(LoopNode::Wff(rule.conclusion));
        succ[r].push(c);
        indegree[c] += 1;
        for contribution in &rule.contributions {
            if let LoopContribution::Internal { wff, .. } = contribution {
                succ[index(LoopNode::Wff(*wff))].push(r);
                indegree[r] += 1;
            }
        }
    }
    let mut ready: BTreeSet<usize> = (0..total).filter(|&n| indegree[n] == 0).collect();
    let mut order = Vec::with_capacity(total);
    while let Some(&n) = ready.iter().next() {
        ready.remove(&n);
        order.push(if n < wn {
            LoopNode::Wff(n)
        } else {
            LoopNode::Rule(n - wn)
        });
        for &m in &succ[n] {
            indegree[m] -= 1;
            if indegree[m] == 0 {
                ready.insert(m);
            }
        }
    }
    debug_assert_eq!(order.len(), total, "monotonic cycle inside a loop region");
    order
}

/// Evaluate one assumption vector; `None` when self-consistency fails.
fn evaluate(
    spec: &LoopSpec,
    order: &[LoopNode],
    incoming: &[Vec<usize>],
    vector: u32,
) -> Option<(Vec<UncertaintyInterval>, Vec<(Confidence, Confidence)>)> {
    let holds = |slot: usize| vector >> slot & 1 == 1;
    let mut states: Vec<UncertaintyInterval> = vec![UncertaintyInterval::UNKNOWN; spec.wffs.len()];
    let mut labels: Vec<(Confidence, Confidence)> =
        vec![(Confidence::ZERO, Confidence::ZERO); spec.rules.len()];

    for &node in order {
        match node {
            LoopNode::Rule(ri) => {
                let rule = &spec.rules[ri];
                if !rule.active {
                    continue;
                }
                let mut confirms = vec![rule.sufficiency];
                let mut refutes = vec![rule.necessity];
                for contribution in &rule.contributions {
                    let (c, r) = match contribution {
                        LoopContribution::Fixed(c, r) => (*c, *r),
                        LoopContribution::Internal { wff, kind } => {
                            premise_value(states[*wff], *kind)
                        }
                        LoopContribution::Assumption { slot, .. } => {
                            let v = if holds(*slot) {
                                Confidence::ONE
                            } else {
                                Confidence::ZERO
                            };
                            (v, crate::calculus::negate(v))
                        }
                    };
                    confirms.push(c);
                    refutes.push(r);
                }
                let f = rule.family;
                labels[ri] = (
                    tnorm_n(f, &confirms).expect("sufficiency is always present"),
                    tnorm_n(f, &refutes).expect("necessity is always present"),
                );
            }
            LoopNode::Wff(wi) => {
                let mut confirms: Vec<Confidence> =
                    spec.external[wi].iter().map(|&(c, _)| c).collect();
                let mut refutes: Vec<Confidence> =
                    spec.external[wi].iter().map(|&(_, r)| r).collect();
                for &ri in &incoming[wi] {
                    confirms.push(labels[ri].0);
                    refutes.push(labels[ri].1);
                }
                states[wi] = if confirms.is_empty() {
                    UncertaintyInterval::UNKNOWN
                } else {
                    let f = spec.agg[wi];
                    UncertaintyInterval {
                        lb: tconorm_n(f, &confirms).unwrap(),
                        ub: crate::calculus::negate(tconorm_n(f, &refutes).unwrap()),
                    }
                };
            }
        }
    }

    // Each assumed truth value must match the semantics under the outcome.
    for rule in &spec.rules {
        for contribution in &rule.contributions {
            if let LoopContribution::Assumption { slot, wff, alpha } = contribution {
                let actual_holds = states[*wff].lb.value() < alpha.value();
                if actual_holds != holds(*slot) {
                    return None;
                }
            }
        }
    }
    Some((states, labels))
}

/// Read an internal wff premise under the given interval.
fn premise_value(iv: UncertaintyInterval, kind: InternalKind) -> (Confidence, Confidence) {
    match kind {
        InternalKind::Positive => (iv.lb, crate::calculus::negate(iv.ub)),
        InternalKind::Negated => (crate::calculus::negate(iv.ub), iv.lb),
        InternalKind::Test {
            measure,
            cmp,
            threshold,
        } => {
            let lhs = match measure {
                Measure::Lb => iv.lb.value(),
                Measure::Ub => iv.ub.value(),
                Measure::Ignorance => iv.ignorance(),
            };
            if cmp.holds(lhs, threshold) {
                (Confidence::ONE, Confidence::ZERO)
            } else {
                (Confidence::ZERO, Confidence::ONE)
            }
        }
    }
}

fn information_content(intervals: &[UncertaintyInterval]) -> f64 {
    intervals
        .iter()
        .map(|iv| iv.lb.value() + (1.0 - iv.ub.value()))
        .sum()
}

/// Enumerate every self-consistent fixed point of a loop.
///
/// All `2^k` truth assignments to the internal non-monotonic antecedents are
/// propagated; assignments whose assumed values survive their own outcome
/// are kept, with identical interval outcomes deduplicated.
pub fn enumerate_extensions(spec: &LoopSpec) -> Result<Vec<Extension>, NonmonoError> {
    if spec.assumption_count > spec.cap {
        return Err(NonmonoError::TooManyAssumptions {
            count: spec.assumption_count,
            cap: spec.cap,
        });
    }
    let order = internal_order(spec);
    let mut incoming: Vec<Vec<usize>> = vec![Vec::new(); spec.wffs.len()];
    for (ri, rule) in spec.rules.iter().enumerate() {
        incoming[rule.conclusion].push(ri);
    }

    let mut extensions: Vec<Extension> = Vec::new();
    let mut seen: BTreeSet<Vec<(u64, u64)>> = BTreeSet::new();
    for vector in 0..(1u32 << spec.assumption_count) {
        let Some((intervals, rule_labels)) = evaluate(spec, &order, &incoming, vector) else {
            continue;
        };
        let key: Vec<(u64, u64)> = intervals
            .iter()
            .map(|iv| (iv.lb.value().to_bits(), iv.ub.value().to_bits()))
            .collect();
        if !seen.insert(key) {
            continue;
        }
        let score = information_content(&intervals);
        extensions.push(Extension {
            assumptions: vector,
            intervals,
            rule_labels,
            score,
        });
    }
    Ok(extensions)
}

/// The extension with maximal information content; exact score ties break to
/// the lexicographically smallest interval assignment, so selection is
/// deterministic across runs.
pub fn select_extension(extensions: &[Extension]) -> Result<&Extension, NonmonoError> {
    extensions
        .iter()
        .reduce(|best, e| {
            if e.score > best.score {
                e
            } else if e.score < best.score {
                best
            } else {
                let key = |x: &Extension| -> Vec<(f64, f64)> {
                    x.intervals
                        .iter()
                        .map(|iv| (iv.lb.value(), iv.ub.value()))
                        .collect()
                };
                if key(e) < key(best) {
                    e
                } else {
                    best
                }
            }
        })
        .ok_or(NonmonoError::NoExtensions)
}

/// Convenience: enumerate, then select; `Ok(None)` when the loop has no
/// self-consistent extension (an anomaly the engine reports).
pub fn resolve(spec: &LoopSpec) -> Result<Option<Extension>, NonmonoError> {
    let extensions = enumerate_extensions(spec)?;
    Ok(select_extension(&extensions).ok().cloned())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calculus::tnorm;

    fn wff(name: &str) -> GroundWff {
        GroundWff {
            variable: name.into(),
            object: None,
            value: "t".into(),
        }
    }

    fn c(v: f64) -> Confidence {
        Confidence::new(v).unwrap()
    }

    /// Two rules, each concluding one wff from the other's disbelief:
    /// `¬[0.5]q → p` and `¬[0.5]p → q`, both s=0.8 under T3.
    fn diamond(p_support: Option<f64>, q_support: Option<f64>) -> LoopSpec {
        let external = |s: Option<f64>| -> Vec<(Confidence, Confidence)> {
            s.map(|v| (c(v), Confidence::ZERO)).into_iter().collect()
        };
        LoopSpec {
            wffs: vec![wff("p"), wff("q")],
            agg: vec![TnormFamily::T3, TnormFamily::T3],
            external: vec![external(p_support), external(q_support)],
            rules: vec![
                LoopRuleSpec {
                    id: "r1".into(),
                    conclusion: 0,
                    sufficiency: c(0.8),
                    necessity: Confidence::ZERO,
                    family: TnormFamily::T3,
                    active: true,
                    contributions: vec![LoopContribution::Assumption {
                        slot: 0,
                        wff: 1,
                        alpha: c(0.5),
                    }],
                },
                LoopRuleSpec {
                    id: "r2".into(),
                    conclusion: 1,
                    sufficiency: c(0.8),
                    necessity: Confidence::ZERO,
                    family: TnormFamily::T3,
                    active: true,
                    contributions: vec![LoopContribution::Assumption {
                        slot: 1,
                        wff: 0,
                        alpha: c(0.5),
                    }],
                },
            ],
            assumption_count: 2,
            cap: DEFAULT_ASSUMPTION_CAP,
        }
    }

    #[test]
    fn diamond_has_exactly_two_extensions() {
        let exts = enumerate_extensions(&diamond(None, None)).unwrap();
        assert_eq!(exts.len(), 2);
        let mut outcomes: Vec<(f64, f64)> = exts
            .iter()
            .map(|e| (e.intervals[0].lb.value(), e.intervals[1].lb.value()))
            .collect();
        outcomes.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(outcomes, vec![(0.0, 0.8), (0.8, 0.0)]);
        for e in &exts {
            assert_eq!(e.intervals[0].ub.value(), 1.0);
            assert!((e.score - 0.8).abs() < 1e-12);
        }
    }

    #[test]
    fn boundary_evidence_leaves_one_extension() {
        // LB(q) is forced to 0.9 ≥ α from outside: ¬[0.5]q can never hold.
        let exts = enumerate_extensions(&diamond(None, Some(0.9))).unwrap();
        assert_eq!(exts.len(), 1);
        assert_eq!(exts[0].intervals[0].lb.value(), 0.0);
        assert_eq!(exts[0].intervals[1].lb.value(), 0.9);
    }

    #[test]
    fn asymmetric_support_picks_the_higher_information_extension() {
        // Monotonic support 0.3 on p only. The p-believed extension scores
        // max(0.3, 0.8) + 0 = 0.8; the q-believed one 0.3 + 0.8 = 1.1.
        let exts = enumerate_extensions(&diamond(Some(0.3), None)).unwrap();
        assert_eq!(exts.len(), 2);
        let chosen = select_extension(&exts).unwrap();
        assert!((chosen.score - 1.1).abs() < 1e-12);
        assert!((chosen.intervals[0].lb.value() - 0.3).abs() < 1e-12);
        assert_eq!(chosen.intervals[1].lb.value(), 0.8);
    }

    #[test]
    fn exact_ties_break_lexicographically_and_deterministically() {
        let spec = diamond(None, None);
        let a = select_extension(&enumerate_extensions(&spec).unwrap())
            .unwrap()
            .clone();
        for _ in 0..10 {
            let b = select_extension(&enumerate_extensions(&spec).unwrap())
                .unwrap()
                .clone();
            assert_eq!(a, b);
        }
        // Both score 0.8; the smaller assignment has LB(p) = 0.
        assert_eq!(a.intervals[0].lb.value(), 0.0);
        assert_eq!(a.intervals[1].lb.value(), 0.8);
    }

    #[test]
    fn extensions_are_fixed_points_under_reevaluation() {
        let spec = diamond(Some(0.3), None);
        let order = internal_order(&spec);
        let mut incoming: Vec<Vec<usize>> = vec![Vec::new(); spec.wffs.len()];
        for (ri, rule) in spec.rules.iter().enumerate() {
            incoming[rule.conclusion].push(ri);
        }
        for e in enumerate_extensions(&spec).unwrap() {
            let (again, _) = evaluate(&spec, &order, &incoming, e.assumptions).unwrap();
            assert_eq!(again, e.intervals);
        }
    }

    #[test]
    fn assumption_cap_is_enforced() {
        let mut spec = diamond(None, None);
        spec.assumption_count = 40;
        spec.cap = 16;
        assert_eq!(
            enumerate_extensions(&spec).unwrap_err(),
            NonmonoError::TooManyAssumptions { count: 40, cap: 16 }
        );
    }

    #[test]
    fn no_consistent_assignment_yields_empty_list() {
        // Single rule ¬[0.5]p → p with s=0.8: assuming ¬p makes p believed,
        // assuming p gives it no support. No fixed point exists.
        let spec = LoopSpec {
            wffs: vec![wff("p")],
            agg: vec![TnormFamily::T3],
            external: vec![vec![]],
            rules: vec![LoopRuleSpec {
                id: "r".into(),
                conclusion: 0,
                sufficiency: c(0.8),
                necessity: Confidence::ZERO,
                family: TnormFamily::T3,
                active: true,
                contributions: vec![LoopContribution::Assumption {
                    slot: 0,
                    wff: 0,
                    alpha: c(0.5),
                }],
            }],
            assumption_count: 1,
            cap: DEFAULT_ASSUMPTION_CAP,
        };
        assert_eq!(enumerate_extensions(&spec).unwrap(), vec![]);
        assert!(resolve(&spec).unwrap().is_none());
    }

    #[test]
    fn tnorm_is_applied_to_assumption_values() {
        // s=0.8 under T2 with one held assumption: label is 0.8 × 1.
        let spec = diamond(None, None);
        let exts = enumerate_extensions(&spec).unwrap();
        let believed_p = exts
            .iter()
            .find(|e| e.intervals[0].lb.value() > 0.0)
            .unwrap();
        assert_eq!(
            believed_p.rule_labels[0].0,
            tnorm(TnormFamily::T3, c(0.8), Confidence::ONE)
        );
    }
}
