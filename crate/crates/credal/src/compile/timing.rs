//! Per-node execution-cost estimation (`.rkt` timing tables).
//!
//! Costs are measured by replaying representative track data through the
//! engine and timing each rule and predicate firing; the deadline planner
//! consumes the resulting table.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::kb::sexpr;

/// One profiled node: a rule template or a host predicate, by name.
#[derive(Debug, Clone, PartialEq)]
pub struct TimingEntry {
    /// Median measured cost; the fallback default when unmeasured.
    pub cost_us: f64,
    pub samples: usize,
    pub measured: bool,
}

/// Execution-cost estimates for every rule and predicate node of a network.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TimingTable {
    pub entries: BTreeMap<String, TimingEntry>,
    /// Identifies the track data the measurements came from.
    pub provenance: String,
}

/// Timing-table failure.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TimingError {
    #[error("malformed timing table: {0}")]
    Malformed(String),
    #[error("no node named `{0}` in the timing table")]
    UnknownNode(String),
    #[error("profiling engine failed: {0}")]
    Engine(#[from] crate::engine::EngineError),
    #[error("profiling replay failed: {0}")]
    Track(#[from] crate::engine::track::TrackError),
}

impl TimingTable {
    /// Estimated cost of a node; an error if the node was never tabulated.
    pub fn cost_us(&self, node: &str) -> Result<f64, TimingError> {
        self.entries
            .get(node)
            .map(|e| e.cost_us)
            .ok_or_else(|| TimingError::UnknownNode(node.to_string()))
    }

    /// Build a table from raw per-node sample lists.
    ///
    /// Each measured entry is the median of its samples; nodes listed in
    /// `expected` but never sampled get the 90th percentile of the measured
    /// medians (pessimistic, so the planner stays safe) and are flagged.
    pub fn from_samples(
        samples: &BTreeMap<String, Vec<f64>>,
        expected: &[String],
        provenance: &str,
    ) -> TimingTable {
        let mut entries = BTreeMap::new();
        let mut medians = Vec::new();
        for (node, list) in samples {
            if list.is_empty() {
                continue;
            }
            let m = median(list);
            medians.push(m);
            entries.insert(
                node.clone(),
                TimingEntry {
                    cost_us: m,
                    samples: list.len(),
                    measured: true,
                },
            );
        }
        let default_cost = percentile_90(&medians);
        for node in expected {
            entries.entry(node.clone()).or_insert(TimingEntry {
                cost_us: default_cost,
                samples: 0,
                measured: false,
            });
        }
        TimingTable {
            entries,
            provenance: provenance.to_string(),
        }
    }

    /// Serialize to `.rkt` text.
    pub fn emit(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "(timing-table RKT1)");
        let _ = writeln!(out, "(provenance {})", self.provenance);
        for (node, e) in &self.entries {
            let _ = writeln!(
                out,
                "(node {node} :cost-us {} :samples {} :{})",
                e.cost_us,
                e.samples,
                if e.measured { "measured" } else { "unmeasured" }
            );
        }
        out
    }

    /// Parse `.rkt` text.
    pub fn parse(text: &str) -> Result<TimingTable, TimingError> {
        let data =
            sexpr::parse_all(text).map_err(|e| TimingError::Malformed(format!("{e}")))?;
        let mut table = TimingTable::default();
        let mut saw_magic = false;
        for datum in &data {
            let items = datum
                .list()
                .ok_or_else(|| TimingError::Malformed("stray atom".into()))?;
            match items.first().and_then(sexpr::Sexpr::atom) {
                Some("timing-table") => {
                    if items.get(1).and_then(sexpr::Sexpr::atom) != Some("RKT1") {
                        return Err(TimingError::Malformed("unsupported version".into()));
                    }
                    saw_magic = true;
                }
                Some("provenance") => {
                    table.provenance = items
                        .get(1)
                        .and_then(sexpr::Sexpr::atom)
                        .unwrap_or("")
                        .to_string();
                }
                Some("node") => {
                    if items.len() != 7 {
                        return Err(TimingError::Malformed(format!("bad node record `{datum}`")));
                    }
                    let name = items[1]
                        .atom()
                        .ok_or_else(|| TimingError::Malformed("node name".into()))?;
                    let cost_us = items[3]
                        .atom()
                        .and_then(|t| t.parse().ok())
                        .filter(|c: &f64| c.is_finite() && *c >= 0.0)
                        .ok_or_else(|| TimingError::Malformed("bad cost".into()))?;
                    let samples = items[5]
                        .atom()
                        .and_then(|t| t.parse().ok())
                        .ok_or_else(|| TimingError::Malformed("bad sample count".into()))?;
                    let measured = match items[6].atom() {
                        Some(":measured") => true,
                        Some(":unmeasured") => false,
                        _ => return Err(TimingError::Malformed("bad measured flag".into())),
                    };
                    table.entries.insert(
                        name.to_string(),
                        TimingEntry {
                            cost_us,
                            samples,
                            measured,
                        },
                    );
                }
                _ => return Err(TimingError::Malformed(format!("unknown record `{datum}`"))),
            }
        }
        if !saw_magic {
            return Err(TimingError::Malformed("missing timing-table header".into()));
        }
        Ok(table)
    }
}

/// Measure per-node execution cost by driving the network with a track.
///
/// Replays the track against fresh engines (one per iteration, built with
/// `registry`) under timing capture until every node that the track can
/// fire has at least `sample_count` samples; the first replay is a warm-up
/// and is discarded. Nodes the track never reaches appear in the table as
/// unmeasured, carrying the pessimistic default cost.
pub fn profile(
    net: &crate::compile::CompiledNetwork,
    track: &crate::engine::track::TrackFile,
    registry: impl Fn() -> crate::engine::PredicateRegistry,
    sample_count: usize,
) -> Result<TimingTable, TimingError> {
    let sample_count = sample_count.max(1);
    let expected: Vec<String> = net
        .kb
        .templates
        .keys()
        .chain(net.kb.predicates.keys())
        .cloned()
        .collect();
    let mut merged: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    let max_iterations = sample_count.saturating_mul(4).max(8);
    for iteration in 0..max_iterations {
        let mut engine = crate::engine::Engine::new(net.clone(), registry())?;
        engine.set_timing_capture(true);
        crate::engine::track::replay(&mut engine, track)?;
        let samples = engine.take_timing_samples();
        if iteration == 0 {
            // Warm-up: discard the measurements, keep the coverage (which
            // nodes this track can fire at all).
            for key in samples.keys() {
                merged.entry(key.clone()).or_default();
            }
            continue;
        }
        for (key, list) in samples {
            merged.entry(key).or_default().extend(list);
        }
        if merged.values().all(|v| v.len() >= sample_count) {
            break;
        }
    }
    Ok(TimingTable::from_samples(
        &merged,
        &expected,
        &format!("replayed-track-x{sample_count}"),
    ))
}

/// Median with the usual even-count interpolation.
fn median(values: &[f64]) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
    }
}

/// 90th percentile (nearest-rank); 0 for an empty list.
fn percentile_90(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rank = ((0.9 * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    sorted[rank - 1]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_odd_and_even() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }

    #[test]
    fn unmeasured_nodes_get_the_90th_percentile_default() {
        let samples = BTreeMap::from([
            ("a".to_string(), (1..=10).map(f64::from).collect::<Vec<_>>()),
            ("b".to_string(), vec![100.0, 100.0, 100.0]),
        ]);
        let expected = vec!["a".into(), "b".into(), "ghost".into()];
        let table = TimingTable::from_samples(&samples, &expected, "test");
        assert!(table.entries["a"].measured);
        assert_eq!(table.entries["a"].cost_us, 5.5);
        let ghost = &table.entries["ghost"];
        assert!(!ghost.measured);
        assert_eq!(ghost.samples, 0);
        // Measured medians are {5.5, 100}; their 90th percentile is 100.
        assert_eq!(ghost.cost_us, 100.0);
    }

    #[test]
    fn emit_parse_round_trip() {
        let samples = BTreeMap::from([("rule-x".to_string(), vec![2.0, 4.0, 9.0])]);
        let table = TimingTable::from_samples(&samples, &["rule-x".into(), "pred-y".into()], "t1");
        let text = table.emit();
        let back = TimingTable::parse(&text).unwrap();
        assert_eq!(back, table);
        assert_eq!(back.cost_us("rule-x").unwrap(), 4.0);
        assert!(back.cost_us("absent").is_err());
    }

    #[test]
    fn rejects_malformed_tables() {
        assert!(TimingTable::parse("(node x :cost-us 1)").is_err());
        assert!(TimingTable::parse("(timing-table RKT9)").is_err());
        assert!(TimingTable::parse("").is_err());
    }
}

#[cfg(test)]
mod profile_tests {
    use super::*;
    use crate::compile::CompiledNetwork;
    use crate::engine::track::TrackFile;
    use crate::engine::PredicateRegistry;
    use crate::kb::parse_kb;

    #[test]
    fn profiling_covers_fired_nodes_and_flags_unreachable_ones() {
        let kb = parse_kb(
            "
            (object-type contact)
            (predicate min-time-budget 1)
            (variable a :input)
            (variable c)
            (variable ping :of contact :input)
            (variable echo :of contact)
            (rule reach :context ((min-time-budget 1))
                        :premises ((a yes)) :sufficiency 0.9 :tnorm T3
                        :conclusion (c yes))
            (rule ghost :vars ((?c contact))
                        :premises ((ping ?c yes)) :sufficiency 0.9 :tnorm T3
                        :conclusion (echo ?c yes))
            ",
        )
        .unwrap();
        let net = CompiledNetwork::compile(kb).unwrap();
        let track = TrackFile::parse(
            "(track RTF1)\n(obs 0 - a yes 0.9 1)\n(obs 1 - a yes 0.4 1)\n",
        )
        .unwrap();
        let table = profile(&net, &track, PredicateRegistry::default, 5).unwrap();

        let reach = &table.entries["reach"];
        assert!(reach.measured);
        assert!(reach.samples >= 5);
        assert!(reach.cost_us >= 0.0);
        let pred = &table.entries["min-time-budget"];
        assert!(pred.measured);
        assert!(pred.samples >= 5);

        // The typed template never instantiates (no objects in the track):
        // it still gets an entry, flagged unmeasured at the default cost.
        let ghost = &table.entries["ghost"];
        assert!(!ghost.measured);
        assert_eq!(ghost.samples, 0);
        assert!(ghost.cost_us >= reach.cost_us.max(pred.cost_us) - 1e-9);
        assert_eq!(table.provenance, "replayed-track-x5");
    }
}
