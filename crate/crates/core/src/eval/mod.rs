//! Atomic-fact scoring, system recall and the multi-run benchmark.

mod atoms;
mod metrics;

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::gateway::{Gateway, GatewayError};
use crate::kg::ChipKg;
use crate::reasoning::{run, AnswerRecord, Flag, ReasoningParams};
use crate::retrieval::{GraphView, RetrievalConfig};

pub use atoms::{atomic_rouge, decompose, match_atoms, AtomicScore, Verdict};
pub use metrics::{aggregate_2sigma, mean, population_std, score, system_recall_at_k, Trimmed};

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("dataset {path} line {line}: {reason}")]
    Dataset { path: String, line: usize, reason: String },
    #[error("item {qid}: {reason}")]
    InvalidItem { qid: String, reason: String },
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("thread pool: {0}")]
    Pool(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuestionType {
    SingleModuleConfigLoc,
    CrossModuleConfigLoc,
    BehavioralProcessAnalysis,
    SignalDependency,
    ControlPathTracing,
}

impl QuestionType {
    pub const ALL: [QuestionType; 5] = [
        QuestionType::SingleModuleConfigLoc,
        QuestionType::CrossModuleConfigLoc,
        QuestionType::BehavioralProcessAnalysis,
        QuestionType::SignalDependency,
        QuestionType::ControlPathTracing,
    ];

    pub fn label(self) -> &'static str {
        match self {
            QuestionType::SingleModuleConfigLoc => "Single-Module Config Loc",
            QuestionType::CrossModuleConfigLoc => "Cross-Module Config Loc",
            QuestionType::BehavioralProcessAnalysis => "Behavioral Process Analysis",
            QuestionType::SignalDependency => "Signal Dependency",
            QuestionType::ControlPathTracing => "Control Path Tracing",
        }
    }
}

/// Either an exact hop count or an inclusive `[min, max]` range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum HopCount {
    Exact(u32),
    Range([u32; 2]),
}

impl HopCount {
    pub fn min(self) -> u32 {
        match self {
            HopCount::Exact(n) => n,
            HopCount::Range([a, _]) => a,
        }
    }

    pub fn max(self) -> u32 {
        match self {
            HopCount::Exact(n) => n,
            HopCount::Range([_, b]) => b,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QaItem {
    pub qid: String,
    pub question: String,
    pub question_type: QuestionType,
    pub hop_count: HopCount,
    pub gold_answer: String,
    pub gold_atoms: Vec<String>,
    pub gold_passages: Vec<String>,
}

impl QaItem {
    pub fn validate(&self) -> Result<(), EvalError> {
        let bad = |reason: &str| {
            Err(EvalError::InvalidItem {
                qid: self.qid.clone(),
                reason: reason.to_string(),
            })
        };
        if self.qid.trim().is_empty() {
            return bad("empty qid");
        }
        if self.question.trim().is_empty() {
            return bad("empty question");
        }
        if self.gold_atoms.is_empty() || self.gold_atoms.iter().any(|a| a.trim().is_empty()) {
            return bad("gold_atoms must be non-empty");
        }
        if self.hop_count.min() < 1 || self.hop_count.min() > self.hop_count.max() {
            return bad("hop_count must be at least 1 and min <= max");
        }
        Ok(())
    }

    /// Every gold passage exists in the graph.
    pub fn check_passages(&self, kg: &ChipKg) -> Result<(), EvalError> {
        match self.gold_passages.iter().find(|p| !kg.passages.contains_key(*p)) {
            Some(p) => Err(EvalError::InvalidItem {
                qid: self.qid.clone(),
                reason: format!("gold passage {p} is not in the graph"),
            }),
            None => Ok(()),
        }
    }
}

/// One JSON item per line; blank lines are skipped.
pub fn load_dataset(path: &Path) -> Result<Vec<QaItem>, EvalError> {
    let err = |line: usize, reason: String| EvalError::Dataset {
        path: path.display().to_string(),
        line,
        reason,
    };
    let text = std::fs::read_to_string(path).map_err(|e| err(0, e.to_string()))?;
    let mut items = Vec::new();
    let mut seen = BTreeSet::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let item: QaItem = serde_json::from_str(line).map_err(|e| err(n + 1, e.to_string()))?;
        item.validate()?;
        if !seen.insert(item.qid.clone()) {
            return Err(err(n + 1, format!("duplicate qid {}", item.qid)));
        }
        items.push(item);
    }
    Ok(items)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalParams {
    pub runs: usize,
    pub judge_reps: usize,
    /// Budget for System Recall@K.
    pub recall_k: usize,
    /// Judge and decomposition temperature.
    pub temperature: f64,
    /// Parallel items; 0 lets the pool decide.
    pub jobs: usize,
    /// Row label in the text table.
    pub method: String,
}

impl Default for EvalParams {
    fn default() -> Self {
        Self {
            runs: 5,
            judge_reps: 20,
            recall_k: 20,
            temperature: 0.2,
            jobs: 0,
            method: "speckg".into(),
        }
    }
}

/// Passages that entered the context, in round and rank order.
pub fn retrieved_passages(record: &AnswerRecord) -> Vec<String> {
    record.retrieval_log.iter().flat_map(|e| e.added.iter().cloned()).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub run: usize,
    pub record: AnswerRecord,
    pub system_recall: Option<f64>,
    /// One score per judge repetition.
    pub f1: Vec<f64>,
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
    /// Judged scoring of the first repetition, for audit.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub first_assessment: Option<AtomicScore>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemReport {
    pub qid: String,
    pub question_type: QuestionType,
    pub hop_count: HopCount,
    /// Left out of the means because a run stalled or failed.
    pub excluded: bool,
    pub flags: BTreeSet<Flag>,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub system_recall: Option<f64>,
    pub dropped_outliers: usize,
    pub runs: Vec<RunResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryReport {
    pub question_type: QuestionType,
    pub items: usize,
    pub avg_f1: Option<f64>,
    pub std_f1: Option<f64>,
    pub avg_system_recall: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub method: String,
    pub runs: usize,
    pub judge_reps: usize,
    pub recall_k: usize,
    pub items: Vec<ItemReport>,
    pub categories: Vec<CategoryReport>,
    /// Mean of the category means.
    pub overall_f1: Option<f64>,
    /// Mean over scored items.
    pub item_mean_f1: Option<f64>,
    pub system_recall_at_k: Option<f64>,
    pub excluded: Vec<String>,
}

#[allow(clippy::too_many_arguments)]
fn evaluate_run(
    gateway: &Gateway,
    kg: &ChipKg,
    view: &GraphView,
    item: &QaItem,
    run_index: usize,
    params: &EvalParams,
    reasoning: &ReasoningParams,
    retrieval: &RetrievalConfig,
) -> RunResult {
    let record = run(gateway, kg, view, &item.question, reasoning, retrieval, run_index as u32);
    let system_recall = system_recall_at_k(&retrieved_passages(&record), &item.gold_passages, params.recall_k);
    let mut result = RunResult {
        run: run_index,
        record,
        system_recall,
        f1: Vec::new(),
        precision: Vec::new(),
        recall: Vec::new(),
        first_assessment: None,
        error: None,
    };
    for rep in 0..params.judge_reps {
        let sample = (run_index * params.judge_reps + rep) as u32;
        match atomic_rouge(gateway, &result.record.answer, &item.gold_atoms, params.temperature, sample) {
            Ok(s) => {
                result.precision.push(s.precision);
                result.recall.push(s.recall);
                result.f1.push(s.f1);
                if rep == 0 {
                    result.first_assessment = Some(s);
                }
            }
            Err(e) => {
                result.error = Some(e.to_string());
                break;
            }
        }
    }
    result
}

fn evaluate_item(
    gateway: &Gateway,
    kg: &ChipKg,
    view: &GraphView,
    item: &QaItem,
    params: &EvalParams,
    reasoning: &ReasoningParams,
    retrieval: &RetrievalConfig,
) -> ItemReport {
    let runs: Vec<RunResult> = (0..params.runs)
        .map(|r| evaluate_run(gateway, kg, view, item, r, params, reasoning, retrieval))
        .collect();
    let flags: BTreeSet<Flag> = runs.iter().flat_map(|r| r.record.flags.iter().copied()).collect();
    let excluded = flags.contains(&Flag::Stalled) || flags.contains(&Flag::Error) || runs.iter().any(|r| r.error.is_some());
    let collect = |f: fn(&RunResult) -> &Vec<f64>| runs.iter().flat_map(|r| f(r).iter().copied()).collect::<Vec<f64>>();
    let f1 = aggregate_2sigma(&collect(|r| &r.f1));
    let recalls: Vec<f64> = runs.iter().filter_map(|r| r.system_recall).collect();
    ItemReport {
        qid: item.qid.clone(),
        question_type: item.question_type,
        hop_count: item.hop_count,
        excluded,
        flags,
        precision: aggregate_2sigma(&collect(|r| &r.precision)).mean,
        recall: aggregate_2sigma(&collect(|r| &r.recall)).mean,
        f1: f1.mean,
        system_recall: (!recalls.is_empty()).then(|| aggregate_2sigma(&recalls).mean),
        dropped_outliers: f1.dropped,
        runs,
    }
}

/// Runs every item `runs` times and scores each answer `judge_reps` times.
/// Items run in parallel; results keep dataset order.
pub fn run_benchmark(
    gateway: &Gateway,
    kg: &ChipKg,
    dataset: &[QaItem],
    params: &EvalParams,
    reasoning: &ReasoningParams,
    retrieval: &RetrievalConfig,
) -> Result<EvalReport, EvalError> {
    for item in dataset {
        item.validate()?;
        item.check_passages(kg)?;
    }
    let view = GraphView::new(kg);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(params.jobs)
        .build()
        .map_err(|e| EvalError::Pool(e.to_string()))?;
    let items: Vec<ItemReport> = pool.install(|| {
        dataset
            .par_iter()
            .map(|item| evaluate_item(gateway, kg, &view, item, params, reasoning, retrieval))
            .collect()
    });
    Ok(summarize(params, items))
}

fn summarize(params: &EvalParams, items: Vec<ItemReport>) -> EvalReport {
    let scored: Vec<&ItemReport> = items.iter().filter(|i| !i.excluded).collect();
    let categories: Vec<CategoryReport> = QuestionType::ALL
        .iter()
        .map(|&qt| {
            let f1s: Vec<f64> = scored.iter().filter(|i| i.question_type == qt).map(|i| i.f1).collect();
            let recalls: Vec<f64> = scored
                .iter()
                .filter(|i| i.question_type == qt)
                .filter_map(|i| i.system_recall)
                .collect();
            CategoryReport {
                question_type: qt,
                items: f1s.len(),
                avg_f1: (!f1s.is_empty()).then(|| mean(&f1s)),
                std_f1: (!f1s.is_empty()).then(|| population_std(&f1s)),
                avg_system_recall: (!recalls.is_empty()).then(|| mean(&recalls)),
            }
        })
        .collect();
    let category_means: Vec<f64> = categories.iter().filter_map(|c| c.avg_f1).collect();
    let item_f1: Vec<f64> = scored.iter().map(|i| i.f1).collect();
    let recalls: Vec<f64> = scored.iter().filter_map(|i| i.system_recall).collect();
    EvalReport {
        method: params.method.clone(),
        runs: params.runs,
        judge_reps: params.judge_reps,
        recall_k: params.recall_k,
        overall_f1: (!category_means.is_empty()).then(|| mean(&category_means)),
        item_mean_f1: (!item_f1.is_empty()).then(|| mean(&item_f1)),
        system_recall_at_k: (!recalls.is_empty()).then(|| mean(&recalls)),
        excluded: items.iter().filter(|i| i.excluded).map(|i| i.qid.clone()).collect(),
        categories,
        items,
    }
}

impl EvalReport {
    /// Plain-text summary: one row per method, AVG/STD per question type.
    pub fn to_table(&self) -> String {
        let fmt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |x| format!("{x:.2}"));
        let mut out = String::new();
        let _ = write!(out, "{:<10}", "Method");
        for qt in QuestionType::ALL {
            let _ = write!(out, " | {:^13}", short_label(qt));
        }
        let _ = writeln!(out, " | {:^7}", "Mean");
        let _ = write!(out, "{:<10}", "");
        for _ in QuestionType::ALL {
            let _ = write!(out, " | {:>6} {:>6}", "AVG", "STD");
        }
        let _ = writeln!(out, " | {:>7}", "F1");
        let _ = write!(out, "{:<10}", self.method);
        for c in &self.categories {
            let _ = write!(out, " | {:>6} {:>6}", fmt(c.avg_f1), fmt(c.std_f1));
        }
        let _ = writeln!(out, " | {:>7}", fmt(self.overall_f1));
        let _ = writeln!(out);
        let _ = writeln!(
            out,
            "System Recall@{}: {}   runs: {}   judge reps: {}",
            self.recall_k,
            fmt(self.system_recall_at_k),
            self.runs,
            self.judge_reps
        );
        for qt in QuestionType::ALL {
            let _ = writeln!(out, "  {:<14} {}", short_label(qt), qt.label());
        }
        if !self.excluded.is_empty() {
            let _ = writeln!(out, "Excluded (stalled or failed): {}", self.excluded.join(", "));
        }
        out
    }
}

fn short_label(qt: QuestionType) -> &'static str {
    match qt {
        QuestionType::SingleModuleConfigLoc => "Single-Mod",
        QuestionType::CrossModuleConfigLoc => "Cross-Mod",
        QuestionType::BehavioralProcessAnalysis => "Behavioral",
        QuestionType::SignalDependency => "Signal-Dep",
        QuestionType::ControlPathTracing => "Control-Path",
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn item(qid: &str) -> QaItem {
        QaItem {
            qid: qid.into(),
            question: "q".into(),
            question_type: QuestionType::SignalDependency,
            hop_count: HopCount::Range([2, 5]),
            gold_answer: "a".into(),
            gold_atoms: vec!["a".into()],
            gold_passages: vec![],
        }
    }

    #[test]
    fn items_validate() {
        assert!(item("x").validate().is_ok());
        let mut bad = item("x");
        bad.gold_atoms.clear();
        assert!(bad.validate().is_err());
        let mut bad = item("x");
        bad.hop_count = HopCount::Exact(0);
        assert!(bad.validate().is_err());
    }

    #[test]
    fn hop_count_accepts_both_shapes() {
        let v: HopCount = serde_json::from_str("3").unwrap();
        assert_eq!(v, HopCount::Exact(3));
        let v: HopCount = serde_json::from_str("[5, 12]").unwrap();
        assert_eq!((v.min(), v.max()), (5, 12));
    }

    #[test]
    fn dataset_rejects_duplicates() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.jsonl");
        let line = serde_json::to_string(&item("x")).unwrap();
        std::fs::write(&path, format!("{line}\n\n{line}\n")).unwrap();
        assert!(matches!(load_dataset(&path), Err(EvalError::Dataset { line: 3, .. })));
        std::fs::write(&path, format!("{line}\n")).unwrap();
        assert_eq!(load_dataset(&path).unwrap().len(), 1);
    }
}
