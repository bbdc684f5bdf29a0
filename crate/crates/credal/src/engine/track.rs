//! Observation tracks: timestamped object creations, attribute settings,
//! and evidence records, with deterministic replay into an engine.

use std::collections::BTreeMap;

use crate::calculus::{Confidence, UncertaintyInterval};
use crate::engine::{Engine, EngineError};
use crate::kb::sexpr::{parse_all, Sexpr};
use crate::kb::GroundWff;

const MAGIC: &str = "RTF1";

/// Track file failure.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TrackError {
    #[error("line {line}: {message}")]
    Malformed { line: u32, message: String },
    #[error("replay failed at t={t}: {source}")]
    Replay {
        t: u64,
        #[source]
        source: EngineError,
    },
}

/// One timestamped track record.
#[derive(Debug, Clone, PartialEq)]
pub enum TrackRecord {
    /// An object entering the scene.
    Object { t: u64, id: String, ty: String },
    /// A per-object attribute taking a value.
    Attr {
        t: u64,
        object: String,
        key: String,
        value: String,
    },
    /// A scalar meta-variable taking a value.
    Meta { t: u64, key: String, value: f64 },
    /// An evidence interval on an input wff (`object` empty for
    /// propositional variables, written `-`).
    Obs {
        t: u64,
        object: Option<String>,
        variable: String,
        value: String,
        lb: f64,
        ub: f64,
    },
}

impl TrackRecord {
    pub fn t(&self) -> u64 {
        match self {
            TrackRecord::Object { t, .. }
            | TrackRecord::Attr { t, .. }
            | TrackRecord::Meta { t, .. }
            | TrackRecord::Obs { t, .. } => *t,
        }
    }

    /// Within one tick: objects enter first, then attributes and metas,
    /// then observations.
    fn kind_rank(&self) -> u8 {
        match self {
            TrackRecord::Object { .. } => 0,
            TrackRecord::Attr { .. } => 1,
            TrackRecord::Meta { .. } => 2,
            TrackRecord::Obs { .. } => 3,
        }
    }
}

impl std::fmt::Display for TrackRecord {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            TrackRecord::Object { t, id, ty } => write!(f, "(object {t} {id} {ty})"),
            TrackRecord::Attr {
                t,
                object,
                key,
                value,
            } => write!(f, "(attr {t} {object} {key} {value})"),
            TrackRecord::Meta { t, key, value } => write!(f, "(meta {t} {key} {value})"),
            TrackRecord::Obs {
                t,
                object,
                variable,
                value,
                lb,
                ub,
            } => {
                let obj = object.as_deref().unwrap_or("-");
                write!(f, "(obs {t} {obj} {variable} {value} {lb} {ub})")
            }
        }
    }
}

/// A parsed observation track.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrackFile {
    pub records: Vec<TrackRecord>,
}

/// What a replay did.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ReplaySummary {
    /// Distinct timestamps processed.
    pub ticks: usize,
    /// Wffs whose interval changed across all propagations.
    pub changes: usize,
    /// Rule instances created by objects entering during the track.
    pub instances_created: usize,
}

impl TrackFile {
    /// Serialize: header line, then records sorted by (t, kind, content).
    pub fn emit(&self) -> String {
        let mut records = self.records.clone();
        records.sort_by(|a, b| {
            (a.t(), a.kind_rank(), a.to_string()).cmp(&(b.t(), b.kind_rank(), b.to_string()))
        });
        let mut out = format!("(track {MAGIC})\n");
        for r in &records {
            out.push_str(&r.to_string());
            out.push('\n');
        }
        out
    }

    /// Parse the serialized form.
    pub fn parse(text: &str) -> Result<TrackFile, TrackError> {
        let data = parse_all(text).map_err(|e| TrackError::Malformed {
            line: e.span.line,
            message: e.message,
        })?;
        let mut iter = data.into_iter();
        let header = iter.next().ok_or_else(|| TrackError::Malformed {
            line: 1,
            message: "empty track file".into(),
        })?;
        let fields = list_atoms(&header)?;
        if fields.len() != 2 || fields[0] != "track" || fields[1] != MAGIC {
            return Err(TrackError::Malformed {
                line: header.span().line,
                message: format!("expected (track {MAGIC}) header"),
            });
        }
        let mut records = Vec::new();
        for item in iter {
            let line = item.span().line;
            let fields = list_atoms(&item)?;
            let bad = |message: &str| TrackError::Malformed {
                line,
                message: message.to_string(),
            };
            let parse_t = |s: &str| {
                s.parse::<u64>()
                    .map_err(|_| bad(&format!("bad timestamp `{s}`")))
            };
            let record = match fields.first().map(String::as_str) {
                Some("object") => match fields.as_slice() {
                    [_, t, id, ty] => TrackRecord::Object {
                        t: parse_t(t)?,
                        id: id.clone(),
                        ty: ty.clone(),
                    },
                    _ => return Err(bad("object record takes (object t id type)")),
                },
                Some("attr") => match fields.as_slice() {
                    [_, t, object, key, value] => TrackRecord::Attr {
                        t: parse_t(t)?,
                        object: object.clone(),
                        key: key.clone(),
                        value: value.clone(),
                    },
                    _ => return Err(bad("attr record takes (attr t object key value)")),
                },
                Some("meta") => match fields.as_slice() {
                    [_, t, key, value] => TrackRecord::Meta {
                        t: parse_t(t)?,
                        key: key.clone(),
                        value: value
                            .parse()
                            .map_err(|_| bad(&format!("bad meta value `{value}`")))?,
                    },
                    _ => return Err(bad("meta record takes (meta t key value)")),
                },
                Some("obs") => match fields.as_slice() {
                    [_, t, object, variable, value, lb, ub] => TrackRecord::Obs {
                        t: parse_t(t)?,
                        object: match object.as_str() {
                            "-" => None,
                            other => Some(other.to_string()),
                        },
                        variable: variable.clone(),
                        value: value.clone(),
                        lb: lb
                            .parse()
                            .map_err(|_| bad(&format!("bad bound `{lb}`")))?,
                        ub: ub
                            .parse()
                            .map_err(|_| bad(&format!("bad bound `{ub}`")))?,
                    },
                    _ => return Err(bad("obs record takes (obs t object variable value lb ub)")),
                },
                Some(other) => return Err(bad(&format!("unknown record kind `{other}`"))),
                None => return Err(bad("empty record")),
            };
            records.push(record);
        }
        Ok(TrackFile { records })
    }
}

impl TrackFile {
    /// Records grouped by timestamp, ascending.
    pub fn ticks(&self) -> BTreeMap<u64, Vec<&TrackRecord>> {
        let mut by_tick: BTreeMap<u64, Vec<&TrackRecord>> = BTreeMap::new();
        for r in &self.records {
            by_tick.entry(r.t()).or_default().push(r);
        }
        by_tick
    }
}

/// Apply one tick's records to the engine without propagating: create
/// objects, apply attributes and metas, assert the observations as one
/// batch. Returns the number of rule instances created.
pub fn apply_tick(
    engine: &mut Engine,
    t: u64,
    records: &[&TrackRecord],
) -> Result<usize, TrackError> {
    let mut instances_created = 0;
    let mut batch: Vec<(GroundWff, UncertaintyInterval)> = Vec::new();
    let mut ordered = records.to_vec();
    ordered.sort_by_key(|r| r.kind_rank());
    for r in ordered {
        match r {
            TrackRecord::Object { id, ty, .. } => {
                match engine.objects().get(id) {
                    Some(existing) if existing == ty => {}
                    Some(existing) => {
                        return Err(TrackError::Replay {
                            t,
                            source: EngineError::DuplicateObject(format!(
                                "{id} (declared {existing}, track says {ty})"
                            )),
                        })
                    }
                    None => {
                        let created = engine
                            .create_object(id, ty)
                            .map_err(|source| TrackError::Replay { t, source })?;
                        instances_created += created.len();
                    }
                }
            }
            TrackRecord::Attr {
                object, key, value, ..
            } => engine.set_attribute(object, key, value),
            TrackRecord::Meta { key, value, .. } => engine.set_meta(key, *value),
            TrackRecord::Obs {
                object,
                variable,
                value,
                lb,
                ub,
                ..
            } => {
                let wff = GroundWff {
                    variable: variable.clone(),
                    object: object.clone(),
                    value: value.clone(),
                };
                let interval = UncertaintyInterval {
                    lb: Confidence::clamped(*lb),
                    ub: Confidence::clamped(*ub),
                };
                batch.push((wff, interval));
            }
        }
    }
    if !batch.is_empty() {
        engine
            .assert_batch(&batch)
            .map_err(|source| TrackError::Replay { t, source })?;
    }
    Ok(instances_created)
}

/// Replay a track tick by tick: create objects, apply attributes and metas,
/// assert each tick's observations as one batch, propagate.
pub fn replay(engine: &mut Engine, track: &TrackFile) -> Result<ReplaySummary, TrackError> {
    let mut summary = ReplaySummary::default();
    for (&t, records) in &track.ticks() {
        summary.ticks += 1;
        summary.instances_created += apply_tick(engine, t, records)?;
        summary.changes += engine.propagate().len();
    }
    Ok(summary)
}

fn list_atoms(item: &Sexpr) -> Result<Vec<String>, TrackError> {
    let line = item.span().line;
    let items = item.list().ok_or_else(|| TrackError::Malformed {
        line,
        message: "expected a record list".into(),
    })?;
    items
        .iter()
        .map(|i| {
            i.atom()
                .map(str::to_string)
                .ok_or_else(|| TrackError::Malformed {
                    line,
                    message: "nested list in record".into(),
                })
        })
        .collect()
}
