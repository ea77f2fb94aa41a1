//! On-disk layout: `graph.jsonl`, `embeddings.bin`, `manifest.json`.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest as _, Sha256};

use super::{ChipKg, Edge, EmbeddingIndex, EntityNode, KgError, NodeId, PassageNode, Triple};

pub const FORMAT_VERSION: u32 = 1;

const GRAPH_FILE: &str = "graph.jsonl";
const EMBEDDINGS_FILE: &str = "embeddings.bin";
const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
enum Record {
    Entity(EntityNode),
    Passage(PassageNode),
    Triple(Triple),
    Edge(Edge),
    Alias { variant: String, canonical: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub entities: usize,
    pub passages: usize,
    pub statements: usize,
    pub triples: usize,
    pub edges: usize,
    pub aliases: usize,
    pub embedding_rows: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub counts: Counts,
    pub embedding_model: String,
    pub embedding_dim: usize,
    /// Row order of `embeddings.bin`.
    pub embedding_ids: Vec<NodeId>,
    /// File name → hex SHA-256.
    pub checksums: BTreeMap<String, String>,
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> KgError + '_ {
    move |e| KgError::Io {
        path: path.display().to_string(),
        reason: e.to_string(),
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn graph_bytes(kg: &ChipKg) -> Vec<u8> {
    let mut out = Vec::new();
    let mut push = |r: Record| {
        serde_json::to_writer(&mut out, &r).expect("graph records serialize");
        out.push(b'\n');
    };
    for e in kg.entities.values() {
        push(Record::Entity(e.clone()));
    }
    for p in kg.passages.values() {
        push(Record::Passage(p.clone()));
    }
    for t in kg.triples.values() {
        push(Record::Triple(t.clone()));
    }
    for e in &kg.edges {
        push(Record::Edge(e.clone()));
    }
    for (variant, canonical) in &kg.aliases {
        push(Record::Alias {
            variant: variant.clone(),
            canonical: canonical.clone(),
        });
    }
    out
}

fn embedding_bytes(index: &EmbeddingIndex) -> Vec<u8> {
    let mut out = Vec::with_capacity(4 + index.data.len() * 4);
    out.extend_from_slice(&(index.dim as u32).to_le_bytes());
    for x in &index.data {
        out.extend_from_slice(&x.to_le_bytes());
    }
    out
}

/// Writes the three store files into `dir`, creating it if needed.
pub fn save(kg: &ChipKg, dir: &Path) -> Result<Manifest, KgError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let graph = graph_bytes(kg);
    let emb = embedding_bytes(&kg.embeddings);
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        counts: Counts {
            entities: kg.entities.len(),
            passages: kg.passages.len(),
            statements: kg.statements().count(),
            triples: kg.triples.len(),
            edges: kg.edges.len(),
            aliases: kg.aliases.len(),
            embedding_rows: kg.embeddings.len(),
        },
        embedding_model: kg.embeddings.model_id.clone(),
        embedding_dim: kg.embeddings.dim,
        embedding_ids: kg.embeddings.ids.clone(),
        checksums: BTreeMap::from([
            (GRAPH_FILE.to_string(), sha256_hex(&graph)),
            (EMBEDDINGS_FILE.to_string(), sha256_hex(&emb)),
        ]),
    };
    let graph_path = dir.join(GRAPH_FILE);
    fs::write(&graph_path, &graph).map_err(io_err(&graph_path))?;
    let emb_path = dir.join(EMBEDDINGS_FILE);
    fs::write(&emb_path, &emb).map_err(io_err(&emb_path))?;
    let manifest_path = dir.join(MANIFEST_FILE);
    let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    text.push('\n');
    fs::write(&manifest_path, text).map_err(io_err(&manifest_path))?;
    Ok(manifest)
}

fn read_checked(dir: &Path, name: &str, manifest: &Manifest) -> Result<Vec<u8>, KgError> {
    let path = dir.join(name);
    let bytes = fs::read(&path).map_err(io_err(&path))?;
    let expected = manifest
        .checksums
        .get(name)
        .ok_or_else(|| KgError::CorruptStore(format!("manifest has no checksum for {name}")))?;
    if &sha256_hex(&bytes) != expected {
        return Err(KgError::CorruptStore(format!("{name} checksum mismatch")));
    }
    Ok(bytes)
}

pub fn load(dir: &Path) -> Result<ChipKg, KgError> {
    let manifest_path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&manifest_path).map_err(io_err(&manifest_path))?;
    let version: u32 = serde_json::from_str::<serde_json::Value>(&text)
        .ok()
        .and_then(|v| v.get("format_version")?.as_u64())
        .and_then(|v| u32::try_from(v).ok())
        .ok_or_else(|| KgError::CorruptStore("manifest.json has no format_version".into()))?;
    if version != FORMAT_VERSION {
        return Err(KgError::IncompatibleFormat {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let manifest: Manifest =
        serde_json::from_str(&text).map_err(|e| KgError::CorruptStore(format!("manifest.json: {e}")))?;

    let graph = read_checked(dir, GRAPH_FILE, &manifest)?;
    let graph = String::from_utf8(graph).map_err(|_| KgError::CorruptStore("graph.jsonl is not UTF-8".into()))?;
    let mut kg = ChipKg::default();
    for (n, line) in graph.lines().enumerate() {
        let record: Record = serde_json::from_str(line)
            .map_err(|e| KgError::CorruptStore(format!("graph.jsonl line {}: {e}", n + 1)))?;
        match record {
            Record::Entity(e) => {
                kg.entities.insert(e.key.clone(), e);
            }
            Record::Passage(p) => {
                kg.passages.insert(p.passage.passage_id.clone(), p);
            }
            Record::Triple(t) => {
                kg.triples.insert(t.triple_id.clone(), t);
            }
            Record::Edge(e) => kg.edges.push(e),
            Record::Alias { variant, canonical } => {
                kg.aliases.insert(variant, canonical);
            }
        }
    }

    let emb = read_checked(dir, EMBEDDINGS_FILE, &manifest)?;
    if emb.len() < 4 || (emb.len() - 4) % 4 != 0 {
        return Err(KgError::CorruptStore("embeddings.bin is truncated".into()));
    }
    let dim = u32::from_le_bytes([emb[0], emb[1], emb[2], emb[3]]) as usize;
    let data: Vec<f32> = emb[4..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    if dim != manifest.embedding_dim || data.len() != dim * manifest.embedding_ids.len() {
        return Err(KgError::CorruptStore("embeddings.bin does not match the manifest".into()));
    }
    kg.embeddings = EmbeddingIndex {
        model_id: manifest.embedding_model.clone(),
        dim,
        ids: manifest.embedding_ids.clone(),
        data,
    };

    let c = &manifest.counts;
    let actual = (kg.entities.len(), kg.passages.len(), kg.triples.len(), kg.edges.len(), kg.aliases.len());
    if actual != (c.entities, c.passages, c.triples, c.edges, c.aliases) {
        return Err(KgError::CorruptStore("record counts do not match the manifest".into()));
    }
    if let Some(e) = kg.dangling_edges().first() {
        return Err(KgError::CorruptStore(format!("edge {} -> {} has a missing endpoint", e.from, e.to)));
    }
    Ok(kg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{Anchor, CircuitSemanticAnchor, Passage, SentenceKind};
    use crate::kg::{EdgeKind, Term, TripleCategory};

    fn sample() -> ChipKg {
        let mut kg = ChipKg::default();
        kg.passages.insert(
            "d:p000".into(),
            PassageNode {
                passage: Passage {
                    passage_id: "d:p000".into(),
                    doc_id: "d".into(),
                    section_path: vec!["Intro".into()],
                    text: "The FSM resets.".into(),
                    sentence_spans: vec![(0, 15).into()],
                    token_estimate: 4,
                },
                anchor: Anchor::Csa(CircuitSemanticAnchor::new(SentenceKind::Procedural, "FSM")),
            },
        );
        kg.entities.insert(
            "fsm".into(),
            EntityNode {
                key: "fsm".into(),
                surface: "FSM".into(),
            },
        );
        let t = Triple::new(TripleCategory::Backbone, Term::Entity("fsm".into()), "resets", Term::Literal("true".into()), "d:p000:s00");
        kg.edges.push(Edge {
            kind: EdgeKind::Triple,
            from: NodeId::Entity("fsm".into()),
            to: NodeId::Statement(t.triple_id.clone()),
        });
        kg.edges.push(Edge {
            kind: EdgeKind::Mention,
            from: NodeId::Entity("fsm".into()),
            to: NodeId::Passage("d:p000".into()),
        });
        kg.triples.insert(t.triple_id.clone(), t);
        kg.aliases.insert("fsm block".into(), "fsm".into());
        kg.embeddings = EmbeddingIndex {
            model_id: "m".into(),
            dim: 2,
            ids: vec![NodeId::Passage("d:p000".into()), NodeId::Entity("fsm".into())],
            data: vec![0.6, 0.8, 1.0, -0.0],
        };
        kg
    }

    #[test]
    fn round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let kg = sample();
        save(&kg, dir.path()).unwrap();
        let back = load(dir.path()).unwrap();
        assert_eq!(back, kg);
        let bytes = fs::read(dir.path().join(EMBEDDINGS_FILE)).unwrap();
        assert_eq!(&bytes[..4], &2u32.to_le_bytes());
        assert_eq!(&bytes[4..8], &0.6f32.to_le_bytes());
    }

    #[test]
    fn truncated_files_are_corrupt() {
        let dir = tempfile::tempdir().unwrap();
        save(&sample(), dir.path()).unwrap();
        let path = dir.path().join(GRAPH_FILE);
        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
        assert!(matches!(load(dir.path()), Err(KgError::CorruptStore(_))));
    }

    #[test]
    fn newer_versions_are_refused() {
        let dir = tempfile::tempdir().unwrap();
        save(&sample(), dir.path()).unwrap();
        let path = dir.path().join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).unwrap().replace("\"format_version\": 1", "\"format_version\": 2");
        fs::write(&path, text).unwrap();
        assert!(matches!(
            load(dir.path()),
            Err(KgError::IncompatibleFormat { found: 2, expected: 1 })
        ));
    }
}
