//! Knowledge graph over entity, passage and reified statement nodes.

mod store;
mod triples;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::gateway::{Gateway, GatewayError};
use crate::ingest::{Anchor, Corpus, Passage, SemanticIr};

pub use store::{load, save, Manifest, FORMAT_VERSION};
pub use triples::{extract_triples, is_literal, normalization_triples, triple_id, Term, Triple, TripleCategory};

#[derive(Debug, thiserror::Error)]
pub enum KgError {
    #[error("corpus inconsistent: unknown reference {0}")]
    CorpusInconsistent(String),
    #[error("alias cycle: {}", .0.join(" -> "))]
    NormalizationCycle(Vec<String>),
    #[error("store format version {found} is not supported (expected {expected})")]
    IncompatibleFormat { found: u32, expected: u32 },
    #[error("corrupt store: {0}")]
    CorruptStore(String),
    #[error("io error at {path}: {reason}")]
    Io { path: String, reason: String },
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

/// Typed node reference, written as `entity:<key>`, `passage:<id>` or
/// `statement:<triple_id>`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum NodeId {
    Entity(String),
    Passage(String),
    Statement(String),
}

impl NodeId {
    pub fn key(&self) -> &str {
        match self {
            NodeId::Entity(k) | NodeId::Passage(k) | NodeId::Statement(k) => k,
        }
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NodeId::Entity(k) => write!(f, "entity:{k}"),
            NodeId::Passage(k) => write!(f, "passage:{k}"),
            NodeId::Statement(k) => write!(f, "statement:{k}"),
        }
    }
}

impl FromStr for NodeId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.split_once(':') {
            Some(("entity", k)) => Ok(NodeId::Entity(k.into())),
            Some(("passage", k)) => Ok(NodeId::Passage(k.into())),
            Some(("statement", k)) => Ok(NodeId::Statement(k.into())),
            _ => Err(format!("bad node id `{s}`")),
        }
    }
}

impl Serialize for NodeId {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for NodeId {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EdgeKind {
    /// Entity to statement (subject) or statement to entity (object).
    Triple,
    /// Entity to a passage whose IR references it.
    Mention,
    /// Backbone statement to auxiliary statement.
    Linking,
    /// Variant entity to canonical entity; consumed by normalization.
    Alias,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Edge {
    pub kind: EdgeKind,
    pub from: NodeId,
    pub to: NodeId,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityNode {
    pub key: String,
    /// First surface form seen, used for the entity embedding.
    pub surface: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PassageNode {
    pub passage: Passage,
    pub anchor: Anchor,
}

/// Row-major embedding table over passage and entity nodes.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EmbeddingIndex {
    pub model_id: String,
    pub dim: usize,
    pub ids: Vec<NodeId>,
    pub data: Vec<f32>,
}

impl EmbeddingIndex {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn get(&self, id: &NodeId) -> Option<&[f32]> {
        self.ids.iter().position(|x| x == id).map(|i| self.row(i))
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ChipKg {
    pub entities: BTreeMap<String, EntityNode>,
    pub passages: BTreeMap<String, PassageNode>,
    /// Every triple by id; backbone and auxiliary ones are statement nodes.
    pub triples: BTreeMap<String, Triple>,
    /// Sorted multiset.
    pub edges: Vec<Edge>,
    /// Resolved variant → canonical map left by normalization.
    pub aliases: BTreeMap<String, String>,
    pub embeddings: EmbeddingIndex,
}

impl ChipKg {
    pub fn statements(&self) -> impl Iterator<Item = &Triple> {
        self.triples.values().filter(|t| t.category.is_statement())
    }

    pub fn contains(&self, id: &NodeId) -> bool {
        match id {
            NodeId::Entity(k) => self.entities.contains_key(k),
            NodeId::Passage(k) => self.passages.contains_key(k),
            NodeId::Statement(k) => self.triples.get(k).is_some_and(|t| t.category.is_statement()),
        }
    }

    /// All nodes in canonical order: entities, passages, statements.
    pub fn node_ids(&self) -> Vec<NodeId> {
        self.entities
            .keys()
            .map(|k| NodeId::Entity(k.clone()))
            .chain(self.passages.keys().map(|k| NodeId::Passage(k.clone())))
            .chain(self.statements().map(|t| NodeId::Statement(t.triple_id.clone())))
            .collect()
    }

    /// Canonical entity key after alias resolution.
    pub fn resolve<'a>(&'a self, key: &'a str) -> &'a str {
        self.aliases.get(key).map_or(key, String::as_str)
    }

    pub fn anchor(&self, passage_id: &str) -> Option<&Anchor> {
        self.passages.get(passage_id).map(|p| &p.anchor)
    }

    /// Edges whose endpoints are missing.
    pub fn dangling_edges(&self) -> Vec<&Edge> {
        self.edges.iter().filter(|e| !self.contains(&e.from) || !self.contains(&e.to)).collect()
    }

    /// Linking triples whose endpoints are not a backbone and an auxiliary
    /// statement from the linking triple's own sentence.
    pub fn broken_links(&self) -> Vec<&Triple> {
        self.triples
            .values()
            .filter(|t| t.category == TripleCategory::Linking)
            .filter(|t| {
                let end = |term: &Term, want: TripleCategory| match term {
                    Term::Triple(id) => self.triples.get(id).is_some_and(|x| x.category == want && x.source == t.source),
                    _ => false,
                };
                !(end(&t.subject, TripleCategory::Backbone) && end(&t.object, TripleCategory::Auxiliary))
            })
            .collect()
    }

    /// Connected components of the entity–passage mention subgraph.
    pub fn mention_components(&self) -> usize {
        let ids: Vec<NodeId> = self
            .entities
            .keys()
            .map(|k| NodeId::Entity(k.clone()))
            .chain(self.passages.keys().map(|k| NodeId::Passage(k.clone())))
            .collect();
        let index: BTreeMap<&NodeId, usize> = ids.iter().enumerate().map(|(i, id)| (id, i)).collect();
        let mut parent: Vec<usize> = (0..ids.len()).collect();
        fn find(p: &mut [usize], mut x: usize) -> usize {
            while p[x] != x {
                p[x] = p[p[x]];
                x = p[x];
            }
            x
        }
        for e in self.edges.iter().filter(|e| e.kind == EdgeKind::Mention) {
            if let (Some(&a), Some(&b)) = (index.get(&e.from), index.get(&e.to)) {
                let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
                parent[ra] = rb;
            }
        }
        (0..ids.len()).filter(|&i| find(&mut parent, i) == i).count()
    }
}

/// Sentence id to passage id.
pub fn passage_of_sentence(sentence_id: &str) -> &str {
    sentence_id.rsplit_once(':').map_or(sentence_id, |(p, _)| p)
}

/// Assembles nodes and edges. Alias edges are added for normalization
/// triples; [`apply_normalization`] consumes them.
pub fn build_graph(
    passages: &[Passage],
    anchors: &BTreeMap<String, Anchor>,
    irs: &[SemanticIr],
    triples: &[Triple],
) -> Result<ChipKg, KgError> {
    let mut kg = ChipKg::default();
    for p in passages {
        let anchor = anchors.get(&p.passage_id).cloned().unwrap_or(Anchor::NoAnchor);
        kg.passages.insert(
            p.passage_id.clone(),
            PassageNode {
                passage: p.clone(),
                anchor,
            },
        );
    }
    let mut sentences: BTreeMap<&str, &SemanticIr> = BTreeMap::new();
    for ir in irs {
        if !kg.passages.contains_key(&ir.source.passage_id) {
            return Err(KgError::CorpusInconsistent(ir.source.passage_id.clone()));
        }
        sentences.insert(&ir.sentence_id, ir);
    }
    // surface forms: the raw strings from the IR, keyed by canonical form
    let mut surfaces: BTreeMap<String, String> = BTreeMap::new();
    for ir in irs {
        for raw in ir_surfaces(ir) {
            surfaces.entry(crate::text::canonical_entity(&raw)).or_insert(raw);
        }
    }

    let mut edges = BTreeSet::new();
    for t in triples {
        let Some(ir) = sentences.get(t.source.as_str()) else {
            return Err(KgError::CorpusInconsistent(t.source.clone()));
        };
        let passage = NodeId::Passage(ir.source.passage_id.clone());
        for e in t.entities() {
            kg.entities.entry(e.to_string()).or_insert_with(|| EntityNode {
                key: e.to_string(),
                surface: surfaces.get(e).cloned().unwrap_or_else(|| e.to_string()),
            });
            if t.category != TripleCategory::Normalization {
                edges.insert(Edge {
                    kind: EdgeKind::Mention,
                    from: NodeId::Entity(e.to_string()),
                    to: passage.clone(),
                });
            }
        }
        let stmt = NodeId::Statement(t.triple_id.clone());
        match t.category {
            TripleCategory::Backbone | TripleCategory::Auxiliary => {
                if let Term::Entity(s) = &t.subject {
                    edges.insert(Edge {
                        kind: EdgeKind::Triple,
                        from: NodeId::Entity(s.clone()),
                        to: stmt.clone(),
                    });
                }
                if let Term::Entity(o) = &t.object {
                    edges.insert(Edge {
                        kind: EdgeKind::Triple,
                        from: stmt,
                        to: NodeId::Entity(o.clone()),
                    });
                }
            }
            TripleCategory::Linking => {
                let (Term::Triple(b), Term::Triple(a)) = (&t.subject, &t.object) else {
                    return Err(KgError::CorpusInconsistent(t.triple_id.clone()));
                };
                edges.insert(Edge {
                    kind: EdgeKind::Linking,
                    from: NodeId::Statement(b.clone()),
                    to: NodeId::Statement(a.clone()),
                });
            }
            TripleCategory::Normalization => {
                let (Term::Entity(v), Term::Entity(c)) = (&t.subject, &t.object) else {
                    return Err(KgError::CorpusInconsistent(t.triple_id.clone()));
                };
                edges.insert(Edge {
                    kind: EdgeKind::Alias,
                    from: NodeId::Entity(v.clone()),
                    to: NodeId::Entity(c.clone()),
                });
            }
        }
        kg.triples.insert(t.triple_id.clone(), t.clone());
    }
    kg.edges = edges.into_iter().collect();
    if let Some(e) = kg.dangling_edges().first() {
        let missing = if kg.contains(&e.from) { &e.to } else { &e.from };
        return Err(KgError::CorpusInconsistent(missing.to_string()));
    }
    Ok(kg)
}

fn ir_surfaces(ir: &SemanticIr) -> Vec<String> {
    match &ir.payload {
        crate::ingest::IrPayload::Declarative {
            central_entity,
            attributes,
        } => std::iter::once(central_entity.clone())
            .chain(attributes.iter().map(|a| a.value.clone()))
            .collect(),
        crate::ingest::IrPayload::Procedural { action, .. } => vec![action.subject.clone(), action.object.clone()],
    }
}

/// Follows alias edges to their roots. Each variant keeps one target: the
/// longest, then lexicographically first.
fn resolve_aliases(edges: &[Edge]) -> Result<BTreeMap<String, String>, KgError> {
    let mut parent: BTreeMap<&str, &str> = BTreeMap::new();
    for e in edges.iter().filter(|e| e.kind == EdgeKind::Alias) {
        let (v, c) = (e.from.key(), e.to.key());
        let better = parent.get(v).is_none_or(|cur| (c.len(), std::cmp::Reverse(c)) > (cur.len(), std::cmp::Reverse(*cur)));
        if better {
            parent.insert(v, c);
        }
    }
    let mut out = BTreeMap::new();
    for &start in parent.keys() {
        let mut path = vec![start];
        let mut cur = start;
        while let Some(&next) = parent.get(cur) {
            if let Some(pos) = path.iter().position(|&p| p == next) {
                let mut cycle: Vec<String> = path[pos..].iter().map(|s| s.to_string()).collect();
                cycle.push(next.to_string());
                return Err(KgError::NormalizationCycle(cycle));
            }
            path.push(next);
            cur = next;
        }
        out.insert(start.to_string(), cur.to_string());
    }
    Ok(out)
}

/// Merges alias-connected entities onto their canonical node. Edges are
/// rehomed, never dropped, except the consumed alias edges.
pub fn apply_normalization(mut kg: ChipKg) -> Result<ChipKg, KgError> {
    let resolved = resolve_aliases(&kg.edges)?;
    if resolved.is_empty() {
        return Ok(kg);
    }
    let rehome = |id: NodeId| match id {
        NodeId::Entity(k) => NodeId::Entity(resolved.get(&k).cloned().unwrap_or(k)),
        other => other,
    };
    let mut edges: Vec<Edge> = std::mem::take(&mut kg.edges)
        .into_iter()
        .filter(|e| e.kind != EdgeKind::Alias)
        .map(|e| Edge {
            kind: e.kind,
            from: rehome(e.from),
            to: rehome(e.to),
        })
        .collect();
    edges.sort();
    kg.edges = edges;
    for variant in resolved.keys() {
        kg.entities.remove(variant);
    }
    kg.aliases.extend(resolved);
    Ok(kg)
}

/// Embeds every passage (full text) and entity (surface form).
pub fn embed_graph(kg: &mut ChipKg, gateway: &Gateway) -> Result<(), KgError> {
    let ids: Vec<NodeId> = kg
        .passages
        .keys()
        .map(|k| NodeId::Passage(k.clone()))
        .chain(kg.entities.keys().map(|k| NodeId::Entity(k.clone())))
        .collect();
    let texts: Vec<String> = ids
        .iter()
        .map(|id| match id {
            NodeId::Passage(k) => kg.passages[k].passage.text.clone(),
            NodeId::Entity(k) => kg.entities[k].surface.clone(),
            NodeId::Statement(_) => unreachable!(),
        })
        .collect();
    let vectors = if texts.is_empty() { Vec::new() } else { gateway.embed(&texts)? };
    let mut index = EmbeddingIndex {
        model_id: gateway.embedding_model().to_string(),
        dim: vectors.first().map_or(0, |v| v.dim),
        ids,
        data: Vec::new(),
    };
    for v in vectors {
        index.data.extend_from_slice(&v.values);
    }
    kg.embeddings = index;
    Ok(())
}

/// Extraction, graph assembly, normalization and embedding for a corpus.
pub fn build_kg(gateway: &Gateway, corpus: &Corpus) -> Result<ChipKg, KgError> {
    let mut triples: Vec<Triple> = corpus.irs.iter().flat_map(extract_triples).collect();
    let normalization = normalization_triples(&triples);
    triples.extend(normalization);
    let kg = build_graph(&corpus.passages, &corpus.anchors, &corpus.irs, &triples)?;
    let mut kg = apply_normalization(kg)?;
    embed_graph(&mut kg, gateway)?;
    tracing::info!(
        entities = kg.entities.len(),
        passages = kg.passages.len(),
        triples = kg.triples.len(),
        edges = kg.edges.len(),
        "knowledge graph built"
    );
    Ok(kg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{Action, Attribute, IrPayload, IrSource, Span};

    fn passage(id: &str) -> Passage {
        Passage {
            passage_id: id.into(),
            doc_id: "d".into(),
            section_path: vec![],
            text: "x".into(),
            sentence_spans: vec![Span { start: 0, end: 1 }],
            token_estimate: 1,
        }
    }

    fn ir(sentence_id: &str, payload: IrPayload) -> SemanticIr {
        SemanticIr {
            sentence_id: sentence_id.into(),
            payload,
            source: IrSource {
                passage_id: passage_of_sentence(sentence_id).into(),
                span: Span { start: 0, end: 1 },
            },
            low_content: false,
        }
    }

    fn decl(sentence_id: &str, entity: &str) -> SemanticIr {
        ir(
            sentence_id,
            IrPayload::Declarative {
                central_entity: entity.into(),
                attributes: vec![Attribute {
                    name: "width".into(),
                    value: "32 bits".into(),
                }],
            },
        )
    }

    fn build(passages: &[Passage], irs: &[SemanticIr]) -> ChipKg {
        let mut triples: Vec<Triple> = irs.iter().flat_map(extract_triples).collect();
        triples.extend(normalization_triples(&triples));
        build_graph(passages, &BTreeMap::new(), irs, &triples).unwrap()
    }

    #[test]
    fn single_procedural_sentence_counts() {
        let irs = vec![ir(
            "d:p000:s00",
            IrPayload::Procedural {
                trigger: "reset asserted".into(),
                condition: String::new(),
                action: Action {
                    subject: "FSM".into(),
                    verb: "returns to".into(),
                    object: "IDLE".into(),
                },
            },
        )];
        let kg = build(&[passage("d:p000")], &irs);
        assert_eq!(kg.passages.len(), 1);
        assert!(kg.entities.len() >= 2);
        assert_eq!(kg.statements().count(), 2);
        assert_eq!(kg.edges.iter().filter(|e| e.kind == EdgeKind::Linking).count(), 1);
        assert!(kg.dangling_edges().is_empty());
        assert!(kg.broken_links().is_empty());
    }

    #[test]
    fn empty_triples_leave_passages_only() {
        let kg = build_graph(&[passage("d:p000")], &BTreeMap::new(), &[], &[]).unwrap();
        assert_eq!(kg.passages.len(), 1);
        assert!(kg.entities.is_empty() && kg.edges.is_empty());
    }

    #[test]
    fn duplicate_triples_collapse() {
        let irs = vec![decl("d:p000:s00", "CTRL")];
        let t = extract_triples(&irs[0]);
        let doubled: Vec<Triple> = t.iter().chain(t.iter()).cloned().collect();
        let kg = build_graph(&[passage("d:p000")], &BTreeMap::new(), &irs, &doubled).unwrap();
        assert_eq!(kg.statements().count(), 1);
    }

    #[test]
    fn unknown_sentence_is_rejected() {
        let irs = vec![decl("d:p000:s00", "CTRL")];
        let mut t = extract_triples(&irs[0]);
        t[0].source = "d:p009:s00".into();
        assert!(matches!(
            build_graph(&[passage("d:p000")], &BTreeMap::new(), &irs, &t),
            Err(KgError::CorpusInconsistent(id)) if id == "d:p009:s00"
        ));
    }

    #[test]
    fn normalization_merges_surface_forms() {
        let passages = [passage("d:p000"), passage("d:p001"), passage("d:p002")];
        let irs = vec![
            decl("d:p000:s00", "TX FIFO status register"),
            decl("d:p001:s00", "TX FIFO status reg."),
            decl("d:p002:s00", "FIFO status register"),
        ];
        let kg = build(&passages, &irs);
        assert_eq!(kg.mention_components(), 3);
        let mentions = kg.edges.iter().filter(|e| e.kind == EdgeKind::Mention).count();
        let merged = apply_normalization(kg).unwrap();
        assert_eq!(merged.mention_components(), 1);
        assert_eq!(merged.edges.iter().filter(|e| e.kind == EdgeKind::Mention).count(), mentions);
        assert_eq!(merged.entities.len(), 1);
        assert_eq!(merged.resolve("tx fifo status reg"), "tx fifo status register");
        assert!(merged.dangling_edges().is_empty());
    }

    #[test]
    fn normalization_without_aliases_is_identity() {
        let kg = build(&[passage("d:p000")], &[decl("d:p000:s00", "CTRL")]);
        assert_eq!(apply_normalization(kg.clone()).unwrap(), kg);
    }

    #[test]
    fn alias_cycles_are_reported() {
        let mut kg = build(&[passage("d:p000")], &[decl("d:p000:s00", "a")]);
        kg.edges.push(Edge {
            kind: EdgeKind::Alias,
            from: NodeId::Entity("x".into()),
            to: NodeId::Entity("y".into()),
        });
        kg.edges.push(Edge {
            kind: EdgeKind::Alias,
            from: NodeId::Entity("y".into()),
            to: NodeId::Entity("x".into()),
        });
        assert!(matches!(apply_normalization(kg), Err(KgError::NormalizationCycle(c)) if c.len() == 3));
    }

    #[test]
    fn node_ids_round_trip_through_text() {
        for id in [
            NodeId::Entity("ier.rxie: bit".into()),
            NodeId::Passage("d:p001".into()),
            NodeId::Statement("ab".into()),
        ] {
            assert_eq!(id.to_string().parse::<NodeId>().unwrap(), id);
        }
        assert!("thing:x".parse::<NodeId>().is_err());
    }
}
