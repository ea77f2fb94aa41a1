//! Adaptive top-k context expansion driven by marginal information gain.

use serde::{Deserialize, Serialize};

use crate::gateway::cosine;

/// Summaries and their embeddings for the gain estimate.
pub trait Evidence {
    fn summarize(&self, query: &str, passage_ids: &[String]) -> Result<String, String>;
    fn embed(&self, text: &str) -> Result<Vec<f32>, String>;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExpansionParams {
    pub k0: usize,
    pub delta_k: usize,
    pub k_max: usize,
    pub tau: f64,
}

impl Default for ExpansionParams {
    fn default() -> Self {
        Self {
            k0: 5,
            delta_k: 5,
            k_max: 50,
            tau: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    /// Gain at or below the threshold.
    LowGain,
    /// `|S|` reached the budget.
    Budget,
    /// No candidates left.
    Exhausted,
    /// A summary or embedding failed; the set is what was accepted so far.
    Aborted(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalState {
    pub query: String,
    /// Passage ids with their PPR scores, best first.
    pub ranked_candidates: Vec<(String, f64)>,
    pub accepted: Vec<String>,
    pub base_summary: String,
    pub cursor: usize,
    pub mig_trace: Vec<f64>,
}

impl RetrievalState {
    pub fn new(query: &str, ranked_candidates: Vec<(String, f64)>) -> Self {
        Self {
            query: query.to_string(),
            ranked_candidates,
            accepted: Vec::new(),
            base_summary: String::new(),
            cursor: 0,
            mig_trace: Vec::new(),
        }
    }
}

/// `1 − cos`, clamped to `[0, 2]`.
pub fn marginal_information_gain(base: &[f32], new: &[f32]) -> f64 {
    (1.0 - cosine(base, new)).clamp(0.0, 2.0)
}

/// Starts from the top `k0` candidates and keeps appending the next `Δk`
/// while the summary moves by more than `τ`. Each accepted round's summary
/// becomes the next base.
pub fn adaptive_expand(state: &mut RetrievalState, params: &ExpansionParams, evidence: &dyn Evidence) -> StopReason {
    let n = state.ranked_candidates.len();
    let k_max = params.k_max.max(1);
    let k0 = params.k0.max(1).min(k_max).min(n);
    let step = params.delta_k.max(1);
    state.accepted = state.ranked_candidates[..k0].iter().map(|(id, _)| id.clone()).collect();
    state.cursor = k0;
    state.mig_trace.clear();

    if state.accepted.len() >= k_max {
        return StopReason::Budget;
    }
    if state.cursor >= n {
        return StopReason::Exhausted;
    }
    let base = match evidence.summarize(&state.query, &state.accepted) {
        Ok(s) => s,
        Err(e) => return StopReason::Aborted(e),
    };
    let mut base_vec = match evidence.embed(&base) {
        Ok(v) => v,
        Err(e) => return StopReason::Aborted(e),
    };
    state.base_summary = base;

    loop {
        if state.accepted.len() >= k_max {
            return StopReason::Budget;
        }
        if state.cursor >= n {
            return StopReason::Exhausted;
        }
        let take = step.min(k_max - state.accepted.len()).min(n - state.cursor);
        let delta: Vec<String> = state.ranked_candidates[state.cursor..state.cursor + take]
            .iter()
            .map(|(id, _)| id.clone())
            .collect();
        let mut union = state.accepted.clone();
        union.extend(delta.iter().cloned());
        let new_summary = match evidence.summarize(&state.query, &union) {
            Ok(s) => s,
            Err(e) => return StopReason::Aborted(e),
        };
        let new_vec = match evidence.embed(&new_summary) {
            Ok(v) => v,
            Err(e) => return StopReason::Aborted(e),
        };
        let mig = marginal_information_gain(&base_vec, &new_vec);
        state.mig_trace.push(mig);
        if mig <= params.tau {
            return StopReason::LowGain;
        }
        state.accepted = union;
        state.cursor += take;
        state.base_summary = new_summary;
        base_vec = new_vec;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::cell::RefCell;

    /// Round `r` summaries embed on axis `r` for the first `gains` rounds,
    /// then repeat the last axis.
    struct Scripted {
        gains: usize,
        calls: RefCell<usize>,
    }

    impl Evidence for Scripted {
        fn summarize(&self, _q: &str, _ids: &[String]) -> Result<String, String> {
            let mut c = self.calls.borrow_mut();
            let r = (*c).min(self.gains);
            *c += 1;
            Ok(format!("summary {r}"))
        }

        fn embed(&self, text: &str) -> Result<Vec<f32>, String> {
            let r: usize = text.trim_start_matches("summary ").parse().unwrap();
            let mut v = vec![0.0; 16];
            v[r] = 1.0;
            Ok(v)
        }
    }

    fn ranked(n: usize) -> Vec<(String, f64)> {
        (0..n).map(|i| (format!("p{i:02}"), 1.0 / (i + 1) as f64)).collect()
    }

    #[test]
    fn zero_gain_stops_at_k0() {
        let mut s = RetrievalState::new("q", ranked(30));
        let stop = adaptive_expand(&mut s, &ExpansionParams::default(), &Scripted { gains: 0, calls: RefCell::new(0) });
        assert_eq!(stop, StopReason::LowGain);
        assert_eq!(s.accepted.len(), 5);
        assert_eq!(s.mig_trace, vec![0.0]);
    }

    #[test]
    fn n_high_gain_rounds_then_stop() {
        let mut s = RetrievalState::new("q", ranked(30));
        let stop = adaptive_expand(&mut s, &ExpansionParams::default(), &Scripted { gains: 2, calls: RefCell::new(0) });
        assert_eq!(stop, StopReason::LowGain);
        assert_eq!(s.accepted.len(), 15);
        assert_eq!(s.mig_trace, vec![1.0, 1.0, 0.0]);
    }

    #[test]
    fn budget_clamps_expansion() {
        let mut s = RetrievalState::new("q", ranked(30));
        let p = ExpansionParams {
            k_max: 5,
            ..ExpansionParams::default()
        };
        assert_eq!(adaptive_expand(&mut s, &p, &Scripted { gains: 9, calls: RefCell::new(0) }), StopReason::Budget);
        assert_eq!(s.accepted.len(), 5);
        assert!(s.mig_trace.is_empty());
        let p = ExpansionParams {
            k_max: 12,
            ..ExpansionParams::default()
        };
        assert_eq!(adaptive_expand(&mut s, &p, &Scripted { gains: 9, calls: RefCell::new(0) }), StopReason::Budget);
        assert_eq!(s.accepted.len(), 12);
    }

    #[test]
    fn exhausting_candidates_stops() {
        let mut s = RetrievalState::new("q", ranked(7));
        let stop = adaptive_expand(&mut s, &ExpansionParams::default(), &Scripted { gains: 9, calls: RefCell::new(0) });
        assert_eq!(stop, StopReason::Exhausted);
        assert_eq!(s.accepted.len(), 7);
    }

    struct Failing;
    impl Evidence for Failing {
        fn summarize(&self, _q: &str, _ids: &[String]) -> Result<String, String> {
            Err("down".into())
        }
        fn embed(&self, _t: &str) -> Result<Vec<f32>, String> {
            unreachable!()
        }
    }

    #[test]
    fn summary_failure_aborts_with_current_set() {
        let mut s = RetrievalState::new("q", ranked(30));
        assert_eq!(
            adaptive_expand(&mut s, &ExpansionParams::default(), &Failing),
            StopReason::Aborted("down".into())
        );
        assert_eq!(s.accepted.len(), 5);
    }
}
