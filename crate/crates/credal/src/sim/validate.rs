//! Functional validation: replay a perceived track against a rule base,
//! tick by tick, and score the network's goal beliefs against the labeled
//! ground truth of the scenario that produced the track.
//!
//! A goal map binds each goal wff to a truth label and a belief threshold:
//! the goal counts as *believed* at a step when its lower bound reaches the
//! threshold, and as *true* when the label span covers the step. Agreement
//! is the fraction of steps where belief and truth coincide.

use crate::engine::track::{self, TrackFile};
use crate::engine::Engine;
use crate::kb::sexpr::{parse_all, Sexpr};
use crate::kb::GroundWff;

use super::{bad, SimError, TruthLog};

const MAP_MAGIC: &str = "RGM1";
const REPORT_MAGIC: &str = "RVR1";

/// One goal-to-label binding.
#[derive(Debug, Clone, PartialEq)]
pub struct MapEntry {
    /// Goal wff text, e.g. `(maneuver c1 turn-away-run)`.
    pub goal: String,
    /// Truth label the goal should track.
    pub label: String,
    /// Object the label applies to.
    pub object: String,
    /// Lower-bound belief threshold.
    pub threshold: f64,
}

/// A parsed `.rmap` goal map.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct GoalMap {
    pub entries: Vec<MapEntry>,
}

impl GoalMap {
    /// Parse goal-map text.
    pub fn parse(text: &str) -> Result<GoalMap, SimError> {
        let data = parse_all(text).map_err(|e| bad(e.span.line, e.message))?;
        let mut iter = data.iter();
        let header = iter.next().ok_or_else(|| bad(1, "empty goal map"))?;
        super::expect_header(header, "goal-map", MAP_MAGIC)?;
        let mut entries = Vec::new();
        for item in iter {
            let line = item.span().line;
            let items = item
                .list()
                .ok_or_else(|| bad(line, "expected a (map ...) entry"))?;
            if items.first().and_then(Sexpr::atom) != Some("map") {
                return Err(bad(line, "expected a (map ...) entry"));
            }
            let kv = super::pairs(&items[1..], line)?;
            let goal = kv
                .get(":goal")
                .and_then(|d| d.list().map(|_| d.to_string()))
                .ok_or_else(|| bad(line, ":goal takes a wff list"))?;
            entries.push(MapEntry {
                goal,
                label: super::req_atom(&kv, ":label", line)?.to_string(),
                object: super::req_atom(&kv, ":object", line)?.to_string(),
                threshold: super::req_num(&kv, ":threshold", line)?,
            });
        }
        Ok(GoalMap { entries })
    }

    /// Serialize goal-map text.
    pub fn emit(&self) -> String {
        let mut out = format!("(goal-map {MAP_MAGIC})\n");
        for e in &self.entries {
            out.push_str(&format!(
                "(map :goal {} :label {} :object {} :threshold {})\n",
                e.goal, e.label, e.object, e.threshold
            ));
        }
        out
    }
}

/// Per-goal scoring outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct GoalReport {
    pub goal: String,
    pub label: String,
    pub object: String,
    pub threshold: f64,
    /// Steps believed while the label was active.
    pub true_positives: u32,
    /// Steps believed outside the label span.
    pub false_positives: u32,
    /// Steps not believed outside the label span.
    pub true_negatives: u32,
    /// Steps not believed while the label was active.
    pub false_negatives: u32,
    /// Fraction of steps where belief matched the label.
    pub agreement: f64,
    /// First step the label was active.
    pub first_true: Option<u32>,
    /// First step the belief reached the threshold.
    pub first_believed: Option<u32>,
    /// Goal interval after the full replay, if the goal ever instantiated.
    pub final_lb: Option<f64>,
    pub final_ub: Option<f64>,
    /// Strongest-contributing rule instance after the full replay.
    pub dominant: Option<String>,
}

/// Outcome of validating one track against one truth log.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidationReport {
    pub scenario: String,
    pub steps: u32,
    pub goals: Vec<GoalReport>,
}

impl ValidationReport {
    /// Serialize the report, one goal per line.
    pub fn emit(&self) -> String {
        let mut out = format!("(validation {REPORT_MAGIC})\n");
        out.push_str(&format!(
            "(scenario :name {} :steps {})\n",
            self.scenario, self.steps
        ));
        for g in &self.goals {
            out.push_str(&format!(
                "(goal {} :label {} :object {} :threshold {} :tp {} :fp {} :tn {} :fn {} \
                 :agreement {:.4}",
                g.goal,
                g.label,
                g.object,
                g.threshold,
                g.true_positives,
                g.false_positives,
                g.true_negatives,
                g.false_negatives,
                g.agreement
            ));
            if let Some(t) = g.first_true {
                out.push_str(&format!(" :first-true {t}"));
            }
            if let Some(t) = g.first_believed {
                out.push_str(&format!(" :first-believed {t}"));
            }
            if let (Some(lb), Some(ub)) = (g.final_lb, g.final_ub) {
                out.push_str(&format!(" :lb {lb} :ub {ub}"));
            }
            if let Some(d) = &g.dominant {
                out.push_str(&format!(" :dominant {d}"));
            }
            out.push_str(")\n");
        }
        out
    }
}

struct GoalScore {
    entry: MapEntry,
    wff: Option<GroundWff>,
    span: (u32, u32),
    tp: u32,
    fp: u32,
    tn: u32,
    fn_: u32,
    first_believed: Option<u32>,
}

/// Replay `track` into `engine` step by step over the truth log's horizon
/// and score each mapped goal against its label. A goal whose label is
/// missing from the truth log is an error; a goal wff that never comes
/// into existence (its object was never perceived) simply scores as never
/// believed.
pub fn validate(
    engine: &mut Engine,
    track: &TrackFile,
    truth: &TruthLog,
    map: &GoalMap,
) -> Result<ValidationReport, SimError> {
    let mut scores: Vec<GoalScore> = Vec::new();
    for entry in &map.entries {
        let span = truth
            .labels
            .iter()
            .find(|l| l.name == entry.label && l.object == entry.object)
            .map(|l| (l.from, l.to))
            .ok_or_else(|| {
                SimError::UnmappedGoal(format!(
                    "label `{}` for object `{}` is not in the truth log",
                    entry.label, entry.object
                ))
            })?;
        scores.push(GoalScore {
            entry: entry.clone(),
            wff: None,
            span,
            tp: 0,
            fp: 0,
            tn: 0,
            fn_: 0,
            first_believed: None,
        });
    }

    let ticks = track.ticks();
    let empty: Vec<&crate::engine::track::TrackRecord> = Vec::new();
    for t in 0..truth.steps {
        let records = ticks.get(&(t as u64)).unwrap_or(&empty);
        if !records.is_empty() {
            track::apply_tick(engine, t as u64, records)?;
            engine.propagate();
        }
        for score in &mut scores {
            if score.wff.is_none() {
                score.wff = engine.parse_wff(&score.entry.goal).ok();
            }
            let believed = score
                .wff
                .as_ref()
                .and_then(|w| engine.current(w))
                .is_some_and(|(iv, _)| iv.lb.value() >= score.entry.threshold);
            let active = t >= score.span.0 && t <= score.span.1;
            match (believed, active) {
                (true, true) => score.tp += 1,
                (true, false) => score.fp += 1,
                (false, false) => score.tn += 1,
                (false, true) => score.fn_ += 1,
            }
            if believed && score.first_believed.is_none() {
                score.first_believed = Some(t);
            }
        }
    }

    let goals = scores
        .into_iter()
        .map(|s| {
            let (final_lb, final_ub) = s
                .wff
                .as_ref()
                .and_then(|w| engine.current(w))
                .map(|(iv, _)| (Some(iv.lb.value()), Some(iv.ub.value())))
                .unwrap_or((None, None));
            let dominant = s
                .wff
                .as_ref()
                .and_then(|w| engine.explain(w).ok())
                .and_then(|trace| trace.dominant);
            GoalReport {
                goal: s.entry.goal,
                label: s.entry.label,
                object: s.entry.object,
                threshold: s.entry.threshold,
                true_positives: s.tp,
                false_positives: s.fp,
                true_negatives: s.tn,
                false_negatives: s.fn_,
                agreement: f64::from(s.tp + s.tn) / f64::from(truth.steps.max(1)),
                first_true: (s.span.0 < truth.steps).then_some(s.span.0),
                first_believed: s.first_believed,
                final_lb,
                final_ub,
                dominant,
            }
        })
        .collect();
    Ok(ValidationReport {
        scenario: truth.scenario.clone(),
        steps: truth.steps,
        goals,
    })
}
