//! Compiled-network (`.rkn`) serialization.
//!
//! The format is canonical structured text: a header (magic, KB content
//! hash, counts), node/arc/loop/ordering records, the knowledge base itself
//! in canonical source form, and a SHA-256 checksum trailer. Compiling the
//! same KB always yields byte-identical output.

use std::fmt::Write as _;

use sha2::{Digest, Sha256};

use crate::compile::{build_graph, ArcKind, CompileError, NodeId, RuleGraph};
use crate::kb::sexpr::{self, Sexpr};
use crate::kb::{parse_kb, KnowledgeBase};

const MAGIC: &str = "RKN1";

/// A loaded, validated compiled network: the rule base plus its analyzed
/// dependency graph.
#[derive(Debug, Clone, PartialEq)]
pub struct CompiledNetwork {
    pub kb: KnowledgeBase,
    pub graph: RuleGraph,
    pub kb_hash: String,
}

impl CompiledNetwork {
    pub fn compile(kb: KnowledgeBase) -> Result<CompiledNetwork, CompileError> {
        let graph = build_graph(&kb)?;
        let kb_hash = kb.content_hash();
        Ok(CompiledNetwork { kb, graph, kb_hash })
    }
}

/// Network-file failure.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum NetworkError {
    #[error("not a compiled network file (expected `(network {MAGIC})`)")]
    BadMagic,
    #[error("unsupported network version `{0}`")]
    Version(String),
    #[error("checksum mismatch: file is truncated or was edited")]
    Checksum,
    #[error("malformed network file: {0}")]
    Malformed(String),
}

fn node_ref(id: NodeId) -> String {
    match id {
        NodeId::Or(i) => format!("or {i}"),
        NodeId::And(i) => format!("and {i}"),
    }
}

fn arc_kind_text(kind: ArcKind) -> String {
    match kind {
        ArcKind::Premise { negated: false } => "premise".into(),
        ArcKind::Premise { negated: true } => "premise-not".into(),
        ArcKind::Test => "test".into(),
        ArcKind::Nm { alpha } => format!("nm {alpha}"),
        ArcKind::Conclusion => "conclusion".into(),
    }
}

/// Serialize a compiled graph and its KB to `.rkn` text.
///
/// The emitted records are fully reconstructible from the embedded KB; the
/// loader recompiles and cross-checks them, so any edit to either half of
/// the file is detected even past the checksum.
pub fn emit_network(graph: &RuleGraph, kb: &KnowledgeBase) -> Result<String, CompileError> {
    for t in kb.templates.values() {
        for call in &t.context {
            if !kb.predicates.contains_key(&call.name) {
                return Err(CompileError::UndeclaredPredicate {
                    template: t.name.clone(),
                    predicate: call.name.clone(),
                });
            }
        }
    }

    let mut out = String::new();
    let _ = writeln!(out, "(network {MAGIC})");
    let _ = writeln!(out, "(kb-hash {})", kb.content_hash());
    let _ = writeln!(
        out,
        "(counts :or-nodes {} :and-nodes {} :arcs {} :loops {})",
        graph.or_nodes.len(),
        graph.and_nodes.len(),
        graph.arcs.len(),
        graph.loops.len()
    );
    for (i, n) in graph.or_nodes.iter().enumerate() {
        let _ = writeln!(out, "(or-node {i} {} {})", n.variable, n.value);
    }
    for (i, n) in graph.and_nodes.iter().enumerate() {
        let _ = writeln!(out, "(and-node {i} {})", n.template);
    }
    for arc in &graph.arcs {
        let _ = writeln!(
            out,
            "(arc {} {} {})",
            node_ref(arc.from),
            node_ref(arc.to),
            arc_kind_text(arc.kind)
        );
    }
    for (i, lp) in graph.loops.iter().enumerate() {
        let members: Vec<String> = lp.members.iter().map(|&m| format!("({})", node_ref(m))).collect();
        let _ = writeln!(out, "(loop {i} {})", members.join(" "));
    }
    let order: Vec<String> = graph
        .topo_order
        .iter()
        .map(|&m| format!("({})", node_ref(m)))
        .collect();
    let _ = writeln!(out, "(topo {})", order.join(" "));
    out.push('\n');
    out.push_str(&kb.pretty_print());

    let digest = Sha256::digest(out.as_bytes());
    let hex: String = digest.iter().map(|b| format!("{b:02x}")).collect();
    let _ = writeln!(out, "(checksum {hex})");
    Ok(out)
}

fn malformed<T>(msg: impl Into<String>) -> Result<T, NetworkError> {
    Err(NetworkError::Malformed(msg.into()))
}

/// Parse and validate `.rkn` text.
///
/// Verifies the checksum trailer, re-parses the embedded KB, recompiles it,
/// and cross-checks every emitted record against the rebuilt graph.
pub fn load_network(text: &str) -> Result<CompiledNetwork, NetworkError> {
    // Checksum trailer: the final line covers everything before it.
    let trimmed = text.trim_end_matches(['\n', '\r']);
    let last_line_start = trimmed.rfind('\n').map(|i| i + 1).unwrap_or(0);
    let last_line = &trimmed[last_line_start..];
    let payload = &text[..last_line_start];
    let checksum_items = sexpr::parse_all(last_line)
        .ok()
        .and_then(|data| data.first().and_then(|d| d.list().map(<[Sexpr]>::to_vec)));
    let Some(items) = checksum_items else {
        return Err(NetworkError::Checksum);
    };
    if items.len() != 2 || items[0].atom() != Some("checksum") {
        return Err(NetworkError::Checksum);
    }
    let digest = Sha256::digest(payload.as_bytes());
    let hex: String = digest.iter().map(|b| format!("{b:02x}")).collect();
    if items[1].atom() != Some(hex.as_str()) {
        return Err(NetworkError::Checksum);
    }

    let data = sexpr::parse_all(payload)
        .map_err(|e| NetworkError::Malformed(format!("{e}")))?;
    let mut records: Vec<(&str, &[Sexpr])> = Vec::new();
    for datum in &data {
        let items = match datum.list() {
            Some(items) if !items.is_empty() => items,
            _ => return malformed("stray atom at top level"),
        };
        let head = items[0]
            .atom()
            .ok_or_else(|| NetworkError::Malformed("non-symbol record head".into()))?;
        records.push((head, items));
    }

    // Header.
    match records.first() {
        Some(("network", items)) if items.len() == 2 => {
            let version = items[1].atom().unwrap_or("");
            if version != MAGIC {
                return Err(NetworkError::Version(version.to_string()));
            }
        }
        _ => return Err(NetworkError::BadMagic),
    }
    let kb_hash = match records.get(1) {
        Some(("kb-hash", items)) if items.len() == 2 => {
            items[1].atom().unwrap_or("").to_string()
        }
        _ => return malformed("missing kb-hash header"),
    };

    // The KB rides along as ordinary declarations; reassemble its source.
    let kb_text: String = records
        .iter()
        .filter(|(head, _)| {
            matches!(*head, "object-type" | "variable" | "predicate" | "rule-class" | "rule")
        })
        .map(|(_, items)| {
            let datum = Sexpr::List {
                items: items.to_vec(),
                span: items[0].span(),
            };
            format!("{datum}\n")
        })
        .collect();
    let kb = parse_kb(&kb_text).map_err(|e| NetworkError::Malformed(format!("embedded KB: {e}")))?;
    if kb.content_hash() != kb_hash {
        return malformed("embedded KB does not match recorded kb-hash");
    }
    let graph = build_graph(&kb)
        .map_err(|e| NetworkError::Malformed(format!("embedded KB does not compile: {e}")))?;

    // Every record must agree with the graph rebuilt from the embedded KB.
    let expected = emit_network(&graph, &kb)
        .map_err(|e| NetworkError::Malformed(format!("{e}")))?;
    let expected_payload = &expected[..expected.rfind("(checksum").unwrap()];
    if canonical_lines(payload) != canonical_lines(expected_payload) {
        return malformed("records disagree with the graph compiled from the embedded KB");
    }

    Ok(CompiledNetwork { kb, graph, kb_hash })
}

/// Record lines in emission order, whitespace-insensitively.
fn canonical_lines(text: &str) -> Vec<String> {
    sexpr::parse_all(text)
        .map(|data| data.iter().map(|d| d.to_string()).collect())
        .unwrap_or_default()
}

#[cfg(test)]
mod tests {
    use super::*;

    const SRC: &str = "(object-type contact)\
        (variable speed :of contact :input)(variable threat :of contact)\
        (variable emission :of contact :input)\
        (rule-class alerting)\
        (rule fast-threat :class alerting :vars ((?c contact))\
         :premises ((speed ?c fast) (not (emission ?c quiet)))\
         :sufficiency 0.9 :necessity 0.4 :tnorm T2 :conclusion (threat ?c high))";

    fn compile(src: &str) -> (RuleGraph, KnowledgeBase) {
        let kb = parse_kb(src).unwrap();
        let graph = build_graph(&kb).unwrap();
        (graph, kb)
    }

    #[test]
    fn emit_is_deterministic() {
        let (g1, kb1) = compile(SRC);
        let (g2, kb2) = compile(SRC);
        assert_eq!(
            emit_network(&g1, &kb1).unwrap(),
            emit_network(&g2, &kb2).unwrap()
        );
    }

    #[test]
    fn round_trip_reproduces_the_graph_byte_stably() {
        let (graph, kb) = compile(SRC);
        let text = emit_network(&graph, &kb).unwrap();
        let net = load_network(&text).unwrap();
        assert_eq!(net.graph, graph);
        assert_eq!(net.kb, kb);
        assert_eq!(emit_network(&net.graph, &net.kb).unwrap(), text);
    }

    #[test]
    fn truncation_fails_the_checksum() {
        let (graph, kb) = compile(SRC);
        let text = emit_network(&graph, &kb).unwrap();
        let truncated = &text[..text.len() / 2];
        assert_eq!(load_network(truncated), Err(NetworkError::Checksum));
    }

    #[test]
    fn edits_fail_the_checksum() {
        let (graph, kb) = compile(SRC);
        let text = emit_network(&graph, &kb).unwrap().replace("0.9", "0.8");
        assert_eq!(load_network(&text), Err(NetworkError::Checksum));
    }

    #[test]
    fn wrong_version_is_reported() {
        let (graph, kb) = compile(SRC);
        let mut text = emit_network(&graph, &kb)
            .unwrap()
            .replace("(network RKN1)", "(network RKN9)");
        // Re-seal so the version check is what fires.
        let body_end = text.rfind("(checksum").unwrap();
        text.truncate(body_end);
        let digest = Sha256::digest(text.as_bytes());
        let hex: String = digest.iter().map(|b| format!("{b:02x}")).collect();
        text.push_str(&format!("(checksum {hex})\n"));
        assert_eq!(load_network(&text), Err(NetworkError::Version("RKN9".into())));
    }

    #[test]
    fn header_counts_match_graph() {
        let (graph, kb) = compile(SRC);
        let text = emit_network(&graph, &kb).unwrap();
        let counts_line = text.lines().find(|l| l.starts_with("(counts")).unwrap();
        assert!(counts_line.contains(&format!(":or-nodes {}", graph.or_nodes.len())));
        assert!(counts_line.contains(&format!(":arcs {}", graph.arcs.len())));
    }
}
