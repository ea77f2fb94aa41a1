//! Sparse personalized PageRank.

use serde::{Deserialize, Serialize};

use super::RetrievalError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PprParams {
    pub damping: f64,
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for PprParams {
    fn default() -> Self {
        Self {
            damping: 0.85,
            tol: 1e-8,
            max_iters: 100,
        }
    }
}

impl PprParams {
    pub fn validate(&self) -> Result<(), RetrievalError> {
        if !(self.damping > 0.0 && self.damping < 1.0) {
            return Err(RetrievalError::InvalidParams(format!("damping {} is outside (0, 1)", self.damping)));
        }
        #[allow(clippy::neg_cmp_op_on_partial_ord)] // also rejects NaN
        if !(self.tol > 0.0) {
            return Err(RetrievalError::InvalidParams(format!("tol {} must be positive", self.tol)));
        }
        if self.max_iters == 0 {
            return Err(RetrievalError::InvalidParams("max_iters must be positive".into()));
        }
        Ok(())
    }
}

/// Row-compressed weighted digraph.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseGraph {
    offsets: Vec<usize>,
    targets: Vec<usize>,
    weights: Vec<f64>,
}

impl SparseGraph {
    /// Parallel edges are kept and their weights add up.
    pub fn from_edges(n: usize, edges: &[(usize, usize, f64)]) -> Self {
        let mut counts = vec![0usize; n + 1];
        for &(u, _, _) in edges {
            counts[u + 1] += 1;
        }
        for i in 0..n {
            counts[i + 1] += counts[i];
        }
        let offsets = counts.clone();
        let mut fill = counts;
        let mut targets = vec![0; edges.len()];
        let mut weights = vec![0.0; edges.len()];
        for &(u, v, w) in edges {
            targets[fill[u]] = v;
            weights[fill[u]] = w;
            fill[u] += 1;
        }
        Self { offsets, targets, weights }
    }

    pub fn node_count(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn edge_count(&self) -> usize {
        self.targets.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PprResult {
    pub scores: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// L1 change of the returned iterate.
    pub residual: f64,
}

/// Iterates `x ← (1−d)·p + d·(Wᵀx + dangling(x)·p)` from `x = p`, where `W`
/// is row-normalized and nodes without out-weight return their mass to `p`.
/// Without convergence the iterate with the smallest change is returned.
pub fn personalized_pagerank(
    graph: &SparseGraph,
    personalization: &[f64],
    params: &PprParams,
) -> Result<PprResult, RetrievalError> {
    params.validate()?;
    let n = graph.node_count();
    if n == 0 {
        return Err(RetrievalError::EmptyGraph);
    }
    if personalization.len() != n {
        return Err(RetrievalError::InvalidParams(format!(
            "personalization has {} entries for {n} nodes",
            personalization.len()
        )));
    }
    if personalization.iter().any(|&w| !w.is_finite() || w < 0.0) {
        return Err(RetrievalError::InvalidParams("personalization weights must be nonnegative".into()));
    }
    let total: f64 = personalization.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(RetrievalError::InvalidParams(format!("personalization sums to {total}, not 1")));
    }

    let out_weight: Vec<f64> = (0..n)
        .map(|u| graph.weights[graph.offsets[u]..graph.offsets[u + 1]].iter().sum())
        .collect();
    let d = params.damping;
    let mut x = personalization.to_vec();
    let mut next = vec![0.0; n];
    let mut best = (f64::INFINITY, x.clone());
    for iter in 1..=params.max_iters {
        let mut dangling = 0.0;
        next.iter_mut().for_each(|v| *v = 0.0);
        for u in 0..n {
            if out_weight[u] <= 0.0 {
                dangling += x[u];
                continue;
            }
            let share = x[u] / out_weight[u];
            for k in graph.offsets[u]..graph.offsets[u + 1] {
                next[graph.targets[k]] += share * graph.weights[k];
            }
        }
        for (v, &p) in next.iter_mut().zip(personalization) {
            *v = (1.0 - d) * p + d * (*v + dangling * p);
        }
        let delta: f64 = next.iter().zip(&x).map(|(a, b)| (a - b).abs()).sum();
        std::mem::swap(&mut x, &mut next);
        if delta < params.tol {
            return Ok(PprResult {
                scores: x,
                iterations: iter,
                converged: true,
                residual: delta,
            });
        }
        if delta < best.0 {
            best = (delta, x.clone());
        }
    }
    Ok(PprResult {
        scores: best.1,
        iterations: params.max_iters,
        converged: false,
        residual: best.0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn singleton_scores_one() {
        let g = SparseGraph::from_edges(1, &[]);
        let r = personalized_pagerank(&g, &[1.0], &PprParams::default()).unwrap();
        assert!((r.scores[0] - 1.0).abs() < 1e-12);
        assert!(r.converged);
    }

    #[test]
    fn symmetric_pair_splits_evenly() {
        let g = SparseGraph::from_edges(2, &[(0, 1, 1.0), (1, 0, 1.0)]);
        let r = personalized_pagerank(&g, &[0.5, 0.5], &PprParams::default()).unwrap();
        assert!((r.scores[0] - 0.5).abs() < 1e-9 && (r.scores[1] - 0.5).abs() < 1e-9);
    }

    #[test]
    fn dangling_mass_returns_to_personalization() {
        let g = SparseGraph::from_edges(3, &[(0, 1, 1.0), (1, 2, 1.0)]);
        let r = personalized_pagerank(&g, &[1.0, 0.0, 0.0], &PprParams::default()).unwrap();
        assert!((r.scores.iter().sum::<f64>() - 1.0).abs() < 1e-8);
        assert!(r.scores[0] > r.scores[1] && r.scores[1] > r.scores[2]);
    }

    #[test]
    fn non_convergence_is_reported() {
        let g = SparseGraph::from_edges(2, &[(0, 1, 1.0), (1, 0, 1.0)]);
        let params = PprParams {
            max_iters: 2,
            tol: 1e-15,
            ..PprParams::default()
        };
        let r = personalized_pagerank(&g, &[1.0, 0.0], &params).unwrap();
        assert!(!r.converged);
        assert_eq!(r.iterations, 2);
    }

    #[test]
    fn invalid_inputs_are_rejected() {
        let g = SparseGraph::from_edges(2, &[]);
        let bad = PprParams {
            damping: 1.0,
            ..PprParams::default()
        };
        assert!(personalized_pagerank(&g, &[0.5, 0.5], &bad).is_err());
        assert!(personalized_pagerank(&g, &[0.7, 0.7], &PprParams::default()).is_err());
        assert!(personalized_pagerank(&g, &[1.0], &PprParams::default()).is_err());
        assert!(matches!(
            personalized_pagerank(&SparseGraph::from_edges(0, &[]), &[], &PprParams::default()),
            Err(RetrievalError::EmptyGraph)
        ));
    }
}
