//! Proof traces: why a wff currently holds the interval it does.

use crate::calculus::{Confidence, TnormFamily, UncertaintyInterval};
use crate::engine::{Engine, EngineError, Validity};
use crate::kb::{GroundPremise, GroundWff};

/// The support tree under one wff, captured from current engine state.
#[derive(Debug, Clone)]
pub struct ProofTrace {
    pub wff: GroundWff,
    pub interval: UncertaintyInterval,
    pub validity: Validity,
    pub evidence: Option<UncertaintyInterval>,
    /// `(interval, threshold)` of a currently-published default.
    pub default_active: Option<(UncertaintyInterval, f64)>,
    pub in_loop: bool,
    pub rules: Vec<RuleTrace>,
    /// Id of the incoming rule with the maximal confirmation label.
    pub dominant: Option<String>,
}

/// One incoming rule's contribution.
#[derive(Debug, Clone)]
pub struct RuleTrace {
    pub id: String,
    pub template: String,
    pub confirmation: Confidence,
    pub refutation: Confidence,
    pub sufficiency: Confidence,
    pub necessity: Confidence,
    pub family: TnormFamily,
    pub context_active: bool,
    pub premises: Vec<PremiseTrace>,
}

/// One premise of a traced rule, with its sub-proof when it is a wff.
#[derive(Debug, Clone)]
pub struct PremiseTrace {
    pub description: String,
    /// Confirmation this premise feeds into the rule's T-norm fold.
    pub contribution: Confidence,
    pub sub: Option<Box<ProofTrace>>,
}

impl Engine {
    /// Capture the proof trace under a wff from current cached state
    /// (query first if freshness matters). Recursion stops at inputs and
    /// does not re-enter loop regions.
    pub fn explain(&self, wff: &GroundWff) -> Result<ProofTrace, EngineError> {
        let wi = self
            .wff_slot_index(wff)
            .ok_or_else(|| EngineError::UnknownWff(wff.to_string()))?;
        Ok(self.trace_wff(wi, None))
    }

    fn trace_wff(&self, wi: usize, from_loop: Option<usize>) -> ProofTrace {
        let (wff, interval, validity) = self.wff_state(wi);
        let in_loop = self.wff_loop(wi).is_some();
        let default_active = match self.default_state(wi) {
            Some((iv, threshold, true)) => Some((iv, threshold)),
            _ => None,
        };
        // Do not re-enter the loop region we came from: its member wffs are
        // mutually supporting and would recurse forever.
        let stop = from_loop.is_some() && self.wff_loop(wi) == from_loop;
        let rules: Vec<RuleTrace> = if stop {
            Vec::new()
        } else {
            self.wff_incoming(wi)
                .iter()
                .map(|&ri| self.trace_rule(ri))
                .collect()
        };
        let dominant = rules
            .iter()
            .filter(|r| r.confirmation.value() > 0.0)
            .max_by(|a, b| {
                a.confirmation
                    .value()
                    .partial_cmp(&b.confirmation.value())
                    .unwrap()
                    .then(b.id.cmp(&a.id))
            })
            .map(|r| r.id.clone());
        ProofTrace {
            wff: wff.clone(),
            interval,
            validity,
            evidence: self.wff_evidence(wi),
            default_active,
            in_loop,
            rules,
            dominant,
        }
    }

    fn trace_rule(&self, ri: usize) -> RuleTrace {
        let inst = self.rule_instance(ri);
        let (confirmation, refutation, context_active) = self.rule_labels(ri);
        let lid = self.rule_loop(ri);
        let mut premises = Vec::new();
        for p in &inst.premises {
            let (description, contribution, sub) = match p {
                GroundPremise::Wff { wff, negated } => {
                    let wi = self.wff_slot_index(wff).unwrap();
                    let iv = self.wff_state(wi).1;
                    let c = if *negated {
                        crate::calculus::negate(iv.ub)
                    } else {
                        iv.lb
                    };
                    let label = if *negated {
                        format!("(not {wff})")
                    } else {
                        wff.to_string()
                    };
                    (label, c, Some(Box::new(self.trace_wff(wi, lid))))
                }
                GroundPremise::Call(call) => {
                    let v = self.peek_predicate(call);
                    let args = call.args.join(" ");
                    (format!("({} {})", call.name, args), v, None)
                }
                GroundPremise::Test {
                    measure,
                    wff,
                    cmp,
                    threshold,
                } => {
                    let wi = self.wff_slot_index(wff).unwrap();
                    let iv = self.wff_state(wi).1;
                    let lhs = match measure {
                        crate::kb::Measure::Lb => iv.lb.value(),
                        crate::kb::Measure::Ub => iv.ub.value(),
                        crate::kb::Measure::Ignorance => iv.ignorance(),
                    };
                    let holds = cmp.holds(lhs, *threshold);
                    (
                        format!("({measure} {wff} {cmp} {threshold})"),
                        if holds { Confidence::ONE } else { Confidence::ZERO },
                        Some(Box::new(self.trace_wff(wi, lid))),
                    )
                }
            };
            premises.push(PremiseTrace {
                description,
                contribution,
                sub,
            });
        }
        for (wff, alpha) in &inst.nm_premises {
            let wi = self.wff_slot_index(wff).unwrap();
            let lb = self.wff_state(wi).1.lb;
            let holds = lb.value() < alpha.value();
            premises.push(PremiseTrace {
                description: format!("(unless {wff} at {})", alpha.value()),
                contribution: if holds { Confidence::ONE } else { Confidence::ZERO },
                sub: Some(Box::new(self.trace_wff(wi, lid))),
            });
        }
        let (sufficiency, necessity, family) = self.rule_params(ri);
        RuleTrace {
            id: inst.id.clone(),
            template: inst.template.clone(),
            confirmation,
            refutation,
            sufficiency,
            necessity,
            family,
            context_active,
            premises,
        }
    }
}

impl ProofTrace {
    /// Render as indented text, two spaces per level.
    pub fn render(&self) -> String {
        let mut out = String::new();
        self.render_into(&mut out, 0);
        out
    }

    fn render_into(&self, out: &mut String, depth: usize) {
        let pad = "  ".repeat(depth);
        out.push_str(&format!(
            "{pad}{} = {} {}\n",
            self.wff, self.interval, self.validity
        ));
        if let Some(e) = self.evidence {
            out.push_str(&format!("{pad}  evidence {e}\n"));
        }
        if let Some((iv, threshold)) = self.default_active {
            out.push_str(&format!(
                "{pad}  default {iv} active (ignorance threshold {threshold})\n"
            ));
        }
        if self.in_loop && self.rules.is_empty() && self.evidence.is_none() {
            out.push_str(&format!("{pad}  (mutually supporting; see loop root)\n"));
        }
        for rule in &self.rules {
            let marker = if self.dominant.as_deref() == Some(rule.id.as_str()) {
                "  <- dominant"
            } else {
                ""
            };
            let context = if rule.context_active { "on" } else { "off" };
            out.push_str(&format!(
                "{pad}  rule {} [{}] confirms {:.6} refutes {:.6} (s {} n {} {} context {}){}\n",
                rule.id,
                rule.template,
                rule.confirmation.value(),
                rule.refutation.value(),
                rule.sufficiency.value(),
                rule.necessity.value(),
                rule.family,
                context,
                marker,
            ));
            for p in &rule.premises {
                out.push_str(&format!(
                    "{pad}    {} contributes {:.6}\n",
                    p.description,
                    p.contribution.value()
                ));
                if let Some(sub) = &p.sub {
                    sub.render_into(out, depth + 3);
                }
            }
        }
    }
}
