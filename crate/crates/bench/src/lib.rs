//! Deterministic workloads for the benchmarks.

use rand::rngs::StdRng;
use rand::{RngExt, SeedableRng};
use speckg_core::gateway::offline::hash_embedding;
use speckg_core::ingest::{Anchor, CircuitSemanticAnchor, Passage, SentenceKind};
use speckg_core::kg::{ChipKg, EmbeddingIndex, NodeId, PassageNode};
use speckg_core::retrieval::SparseGraph;

/// Random digraph with about `degree` out-edges per node, a tenth of the
/// nodes dangling, and a personalization vector over eight seeds.
pub fn random_graph(n: usize, degree: usize, seed: u64) -> (SparseGraph, Vec<f64>) {
    let mut rng = StdRng::seed_from_u64(seed);
    let mut edges = Vec::with_capacity(n * degree);
    for u in 0..n {
        if rng.random_bool(0.1) {
            continue;
        }
        for _ in 0..degree {
            edges.push((u, rng.random_range(0..n), 1.0));
        }
    }
    let mut p = vec![0.0; n];
    for _ in 0..8 {
        p[rng.random_range(0..n)] += 1.0 / 8.0;
    }
    (SparseGraph::from_edges(n, &edges), p)
}

const MODULES: &[&str] = &["uart", "spi master", "dma engine", "timer", "watchdog", "gpio bank", "i2c target", "pmu"];
const SIGNALS: &[&str] = &["irq", "done", "busy", "wake", "err", "req", "ack", "valid"];

/// Markdown specification with `sections` sections of procedural and
/// declarative prose plus a register table.
pub fn synthetic_spec(sections: usize) -> String {
    let mut out = String::from("# Synthetic Subsystem\n\n");
    for s in 0..sections {
        let m = MODULES[s % MODULES.len()];
        let sig = SIGNALS[s % SIGNALS.len()];
        out.push_str(&format!("## {m} block {s}\n\n"));
        out.push_str(&format!(
            "The {m} block contains a 16-entry FIFO and a control register. \
When the FIFO level reaches the threshold, the {m} block asserts {m}_{sig}. \
The {m} block clears {m}_{sig} once software reads the status register. \
If the enable bit is cleared, the {m} block stops the internal clock.\n\n"
        ));
        out.push_str("| Register | Offset | Reset |\n|----------|--------|-------|\n");
        for r in 0..4 {
            out.push_str(&format!("| {}_R{r} | 0x{:02X} | 0x0000_0000 |\n", m.to_uppercase().replace(' ', "_"), r * 4));
        }
        out.push('\n');
    }
    out
}

/// Graph with `n` anchored passages and their hash embeddings; enough for
/// seeding and filtering.
pub fn passage_kg(n: usize) -> ChipKg {
    let mut kg = ChipKg::default();
    let mut ids = Vec::with_capacity(n);
    let mut data = Vec::new();
    for i in 0..n {
        let id = format!("doc:p{i:05}");
        let m = MODULES[i % MODULES.len()];
        let text = format!("The {m} block asserts {m}_{} when stage {i} completes.", SIGNALS[i % SIGNALS.len()]);
        data.extend(hash_embedding(&text));
        let kind = if i % 3 == 0 { SentenceKind::Declarative } else { SentenceKind::Procedural };
        kg.passages.insert(
            id.clone(),
            PassageNode {
                passage: Passage {
                    passage_id: id.clone(),
                    doc_id: "doc".into(),
                    section_path: vec![],
                    text,
                    sentence_spans: vec![],
                    token_estimate: 12,
                },
                anchor: Anchor::Csa(CircuitSemanticAnchor::new(kind, m)),
            },
        );
        ids.push(NodeId::Passage(id));
    }
    let dim = data.len() / n.max(1);
    kg.embeddings = EmbeddingIndex {
        model_id: "offline-hash-256".into(),
        dim,
        ids,
        data,
    };
    kg
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn workloads_are_deterministic_and_well_formed() {
        let (g, p) = random_graph(100, 4, 3);
        assert_eq!(g.node_count(), 100);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(random_graph(100, 4, 3).0, g);
        assert!(!synthetic_spec(3).contains("## timer block 3"));
        assert!(synthetic_spec(4).contains("## timer block 3"));
        let kg = passage_kg(10);
        assert_eq!(kg.embeddings.len(), 10);
        assert_eq!(kg.embeddings.dim, 256);
    }
}
