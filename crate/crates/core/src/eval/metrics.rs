//! Pure scoring arithmetic.

use serde::{Deserialize, Serialize};

/// Precision, recall and F1 from match counts. Empty denominators give 0.
pub fn score(matched: usize, n_gen: usize, n_ref: usize) -> (f64, f64, f64) {
    let p = if n_gen == 0 { 0.0 } else { matched as f64 / n_gen as f64 };
    let r = if n_ref == 0 { 0.0 } else { matched as f64 / n_ref as f64 };
    let f1 = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
    (p, r, f1)
}

/// Fraction of `gold` among the first `k` distinct retrieved ids. `None`
/// when there is no gold set.
pub fn system_recall_at_k<S: AsRef<str>>(retrieved: &[S], gold: &[S], k: usize) -> Option<f64> {
    if gold.is_empty() {
        return None;
    }
    let mut seen: Vec<&str> = Vec::new();
    for id in retrieved {
        if seen.len() >= k {
            break;
        }
        if !seen.contains(&id.as_ref()) {
            seen.push(id.as_ref());
        }
    }
    let mut gold_set: Vec<&str> = gold.iter().map(AsRef::as_ref).collect();
    gold_set.sort_unstable();
    gold_set.dedup();
    let hit = gold_set.iter().filter(|g| seen.contains(g)).count();
    Some(hit as f64 / gold_set.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Trimmed {
    pub mean: f64,
    pub kept: usize,
    pub dropped: usize,
    /// Fewer than two values; the raw mean was returned.
    pub too_few: bool,
}

/// One pass of the 2σ rule with population σ: drop values farther than 2σ
/// from the mean, then average the rest.
pub fn aggregate_2sigma(values: &[f64]) -> Trimmed {
    let n = values.len();
    if n == 0 {
        return Trimmed {
            mean: 0.0,
            kept: 0,
            dropped: 0,
            too_few: true,
        };
    }
    let mu = values.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return Trimmed {
            mean: mu,
            kept: n,
            dropped: 0,
            too_few: true,
        };
    }
    let sigma = (values.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / n as f64).sqrt();
    let kept: Vec<f64> = values.iter().copied().filter(|x| (x - mu).abs() <= 2.0 * sigma).collect();
    if kept.len() == n {
        return Trimmed {
            mean: mu,
            kept: n,
            dropped: 0,
            too_few: false,
        };
    }
    Trimmed {
        mean: kept.iter().sum::<f64>() / kept.len() as f64,
        kept: kept.len(),
        dropped: n - kept.len(),
        too_few: false,
    }
}

/// Population standard deviation.
pub fn population_std(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let mu = values.iter().sum::<f64>() / values.len() as f64;
    (values.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / values.len() as f64).sqrt()
}

pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        0.0
    } else {
        values.iter().sum::<f64>() / values.len() as f64
    }
}
