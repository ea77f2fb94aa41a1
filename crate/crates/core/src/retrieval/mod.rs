//! Seeding, personalized PageRank, adaptive expansion and anchor filtering.

mod expand;
mod ppr;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::gateway::{cosine, tasks, ChatRequest, Gateway, GatewayError};
use crate::ingest::{Anchor, CircuitSemanticAnchor};
use crate::kg::{ChipKg, EdgeKind, NodeId};
use crate::prompts::{render_passage, Prompt};
use crate::text::canonical_entity;

pub use expand::{adaptive_expand, marginal_information_gain, Evidence, ExpansionParams, RetrievalState, StopReason};
pub use ppr::{personalized_pagerank, PprParams, PprResult, SparseGraph};

#[derive(Debug, thiserror::Error)]
pub enum RetrievalError {
    #[error("the graph has no embedded nodes")]
    EmptyGraph,
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("query embedding model {query} differs from index model {index}")]
    ModelMismatch { query: String, index: String },
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterParams {
    pub fallback_keep_unanchored: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetrievalParams {
    pub n_seeds: usize,
    #[serde(flatten)]
    pub expansion: ExpansionParams,
    /// Summary temperature.
    pub temperature: f64,
}

impl Default for RetrievalParams {
    fn default() -> Self {
        Self {
            n_seeds: 5,
            expansion: ExpansionParams::default(),
            temperature: 0.7,
        }
    }
}

/// Every retrieval knob, grouped as in the run config.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct RetrievalConfig {
    pub retrieval: RetrievalParams,
    pub ppr: PprParams,
    pub filter: FilterParams,
}

/// Top-`n_seeds` embedded nodes by cosine, ties by node id. Scores are
/// shifted so the smallest selected one is at least zero, then normalized;
/// an all-zero selection gets uniform weight.
pub fn seed_weights(query: &[f32], kg: &ChipKg, n_seeds: usize) -> Result<BTreeMap<NodeId, f64>, RetrievalError> {
    let index = &kg.embeddings;
    if index.is_empty() {
        return Err(RetrievalError::EmptyGraph);
    }
    if n_seeds == 0 {
        return Err(RetrievalError::InvalidParams("n_seeds must be positive".into()));
    }
    let mut sims: Vec<(f64, &NodeId)> = index.ids.iter().enumerate().map(|(i, id)| (cosine(query, index.row(i)), id)).collect();
    sims.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.to_string().cmp(&b.1.to_string())));
    sims.truncate(n_seeds);
    let shift = sims.iter().map(|s| s.0).fold(0.0f64, f64::min);
    let total: f64 = sims.iter().map(|s| s.0 - shift).sum();
    let uniform = 1.0 / sims.len() as f64;
    Ok(sims
        .into_iter()
        .map(|(s, id)| (id.clone(), if total > 0.0 { (s - shift) / total } else { uniform }))
        .collect())
}

/// Embeds the query and seeds the graph.
pub fn seed(gateway: &Gateway, query: &str, kg: &ChipKg, n_seeds: usize) -> Result<BTreeMap<NodeId, f64>, RetrievalError> {
    let q = gateway.embed_one(query)?;
    if q.model_id != kg.embeddings.model_id {
        return Err(RetrievalError::ModelMismatch {
            query: q.model_id,
            index: kg.embeddings.model_id.clone(),
        });
    }
    seed_weights(&q.values, kg, n_seeds)
}

/// Undirected view of the graph with unit weight per edge type.
#[derive(Debug, Clone)]
pub struct GraphView {
    pub ids: Vec<NodeId>,
    pub graph: SparseGraph,
    index: BTreeMap<NodeId, usize>,
}

impl GraphView {
    pub fn new(kg: &ChipKg) -> Self {
        let ids = kg.node_ids();
        let index: BTreeMap<NodeId, usize> = ids.iter().cloned().enumerate().map(|(i, id)| (id, i)).collect();
        let mut edges = Vec::with_capacity(kg.edges.len() * 2);
        for e in kg.edges.iter().filter(|e| e.kind != EdgeKind::Alias) {
            if let (Some(&a), Some(&b)) = (index.get(&e.from), index.get(&e.to)) {
                edges.push((a, b, 1.0));
                if a != b {
                    edges.push((b, a, 1.0));
                }
            }
        }
        let graph = SparseGraph::from_edges(ids.len(), &edges);
        Self { ids, graph, index }
    }

    pub fn position(&self, id: &NodeId) -> Option<usize> {
        self.index.get(id).copied()
    }

    /// PPR scores per node for the given seed weights.
    pub fn ppr(&self, seeds: &BTreeMap<NodeId, f64>, params: &PprParams) -> Result<PprResult, RetrievalError> {
        let mut p = vec![0.0; self.ids.len()];
        for (id, w) in seeds {
            let i = self
                .position(id)
                .ok_or_else(|| RetrievalError::InvalidParams(format!("seed {id} is not in the graph")))?;
            p[i] += w;
        }
        personalized_pagerank(&self.graph, &p, params)
    }

    /// Passage nodes by score, best first, ties by id.
    pub fn rank_passages(&self, scores: &[f64]) -> Vec<(String, f64)> {
        let mut out: Vec<(String, f64)> = self
            .ids
            .iter()
            .zip(scores)
            .filter_map(|(id, &s)| match id {
                NodeId::Passage(p) => Some((p.clone(), s)),
                _ => None,
            })
            .collect();
        out.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        out
    }
}

/// Same type and same canonical entity after alias resolution.
pub fn compatible(candidate: &CircuitSemanticAnchor, target: &CircuitSemanticAnchor, kg: &ChipKg) -> bool {
    let a = canonical_entity(&candidate.entity);
    let t = canonical_entity(&target.entity);
    candidate.csa_type == target.csa_type && kg.resolve(&a) == kg.resolve(&t)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterOutcome {
    pub kept: Vec<String>,
    pub removed: Vec<String>,
    /// Nothing passed, so the unfiltered set was returned.
    pub bypassed: bool,
}

/// Keeps candidates whose anchor is compatible with `target`. Unanchored
/// passages pass only with `fallback_keep_unanchored`. An empty result
/// fails open.
pub fn csa_filter(candidates: &[String], target: &CircuitSemanticAnchor, kg: &ChipKg, params: &FilterParams) -> FilterOutcome {
    let (kept, removed): (Vec<String>, Vec<String>) = candidates.iter().cloned().partition(|id| match kg.anchor(id) {
        Some(Anchor::Csa(a)) => compatible(a, target, kg),
        Some(Anchor::NoAnchor) | None => params.fallback_keep_unanchored,
    });
    if kept.is_empty() && !candidates.is_empty() {
        return FilterOutcome {
            kept: candidates.to_vec(),
            removed: Vec::new(),
            bypassed: true,
        };
    }
    FilterOutcome {
        kept,
        removed,
        bypassed: false,
    }
}

const SUMMARIZE_SYSTEM: &str = "You summarize specification passages with respect to a query. \
State only facts found in the passages that bear on the query, in at most three sentences.";

/// Summaries from the gateway's chat model over passage texts.
pub struct GatewayEvidence<'a> {
    pub gateway: &'a Gateway,
    pub kg: &'a ChipKg,
    pub temperature: f64,
    pub sample_index: u32,
}

impl Evidence for GatewayEvidence<'_> {
    fn summarize(&self, query: &str, passage_ids: &[String]) -> Result<String, String> {
        let blocks: Vec<String> = passage_ids
            .iter()
            .filter_map(|id| self.kg.passages.get(id))
            .map(|p| render_passage(&p.passage.passage_id, &p.passage.section_path, &p.passage.text))
            .collect();
        let prompt = Prompt::new().section("Query", query).section("Passages", &blocks.join("\n")).build();
        let req = ChatRequest::new(tasks::SUMMARIZE, SUMMARIZE_SYSTEM, prompt)
            .temperature(self.temperature)
            .sample(self.sample_index);
        self.gateway.chat(&req).map(|r| r.text).map_err(|e| e.to_string())
    }

    fn embed(&self, text: &str) -> Result<Vec<f32>, String> {
        self.gateway.embed_one(text).map(|v| v.values).map_err(|e| e.to_string())
    }
}

/// One acquisition: seed, rank, expand, filter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalOutcome {
    pub ranked: Vec<(String, f64)>,
    pub accepted: Vec<String>,
    pub mig_trace: Vec<f64>,
    pub stop: StopReason,
    pub filter: FilterOutcome,
    pub ppr_converged: bool,
}

pub fn retrieve(
    gateway: &Gateway,
    kg: &ChipKg,
    view: &GraphView,
    query: &str,
    target: &CircuitSemanticAnchor,
    cfg: &RetrievalConfig,
    sample_index: u32,
) -> Result<RetrievalOutcome, RetrievalError> {
    let params = &cfg.retrieval;
    let seeds = seed(gateway, query, kg, params.n_seeds)?;
    let ppr = view.ppr(&seeds, &cfg.ppr)?;
    if !ppr.converged {
        tracing::warn!(iterations = ppr.iterations, residual = ppr.residual, "ppr did not converge");
    }
    let ranked = view.rank_passages(&ppr.scores);
    let mut state = RetrievalState::new(query, ranked);
    let evidence = GatewayEvidence {
        gateway,
        kg,
        temperature: params.temperature,
        sample_index,
    };
    let stop = adaptive_expand(&mut state, &params.expansion, &evidence);
    if let StopReason::Aborted(reason) = &stop {
        tracing::warn!(%reason, "expansion aborted");
    }
    let filter = csa_filter(&state.accepted, target, kg, &cfg.filter);
    Ok(RetrievalOutcome {
        ranked: state.ranked_candidates,
        accepted: state.accepted,
        mig_trace: state.mig_trace,
        stop,
        filter,
        ppr_converged: ppr.converged,
    })
}
