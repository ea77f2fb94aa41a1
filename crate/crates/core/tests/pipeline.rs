use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde_json::json;
use speckg_core::config::RunConfig;
use speckg_core::eval::{load_dataset, run_benchmark, EvalParams, QaItem};
use speckg_core::gateway::offline::{OfflineModel, ScriptRule};
use speckg_core::gateway::{tasks, Gateway, ModelRouting};
use speckg_core::ingest::{ingest_document, Anchor, IngestConfig, SentenceKind};
use speckg_core::kg::{build_kg, ChipKg};
use speckg_core::reasoning::{run, Flag, ReasoningParams};
use speckg_core::retrieval::{GraphView, RetrievalConfig};

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

fn spec_text() -> String {
    std::fs::read_to_string(fixtures().join("fixture_spec.md")).unwrap()
}

fn replay() -> (RunConfig, Gateway, ChipKg) {
    let cfg = RunConfig::load(&fixtures().join("config.toml")).unwrap();
    let gw = cfg.build_gateway().unwrap();
    let corpus = ingest_document(&gw, "fixture_spec", &spec_text(), &cfg.ingest).unwrap();
    let kg = build_kg(&gw, &corpus).unwrap();
    (cfg, gw, kg)
}

fn offline(script: Vec<ScriptRule>) -> (Gateway, ChipKg) {
    let gw = Gateway::live(Arc::new(OfflineModel::with_script(script)), ModelRouting::default());
    let corpus = ingest_document(&gw, "fixture_spec", &spec_text(), &IngestConfig::default()).unwrap();
    let kg = build_kg(&gw, &corpus).unwrap();
    (gw, kg)
}

fn gap(sub_query: &str, kind: &str, entity: &str) -> serde_json::Value {
    json!({
        "thought": "still missing",
        "status": "gap",
        "gap_description": "missing evidence",
        "sub_query": sub_query,
        "target_anchor": {"csa_type": kind, "entity": entity},
    })
}

#[test]
fn fixture_graph_has_one_anchor_per_section() {
    let (_, _, kg) = replay();
    assert_eq!(kg.passages.len(), 7);
    let anchor = |id: &str| match &kg.passages[id].anchor {
        Anchor::Csa(a) => (a.csa_type, a.entity.clone()),
        Anchor::NoAnchor => panic!("{id} unanchored"),
    };
    assert_eq!(anchor("fixture_spec:p002"), (SentenceKind::Procedural, "receive fifo".into()));
    assert_eq!(anchor("fixture_spec:p000"), (SentenceKind::Declarative, "uart".into()));
    assert_eq!(anchor("fixture_spec:p006"), (SentenceKind::Procedural, "uart".into()));
    assert_eq!(kg.resolve("receive fifo"), "uart receive fifo");
}

#[test]
fn anchor_filter_drops_same_entity_of_the_wrong_kind() {
    let (cfg, gw, kg) = replay();
    let view = GraphView::new(&kg);
    let record = run(
        &gw,
        &kg,
        &view,
        "What does the UART do after software sets LP_REQ in UART_LPCR?",
        &cfg.reasoning,
        &cfg.retrieval_config(),
        0,
    );
    assert_eq!(record.provenance, vec!["fixture_spec:p006"]);
    let round = &record.retrieval_log[0];
    assert!(round.accepted.contains(&"fixture_spec:p000".to_string()), "{:?}", round.accepted);
    assert!(!round.filtered.contains(&"fixture_spec:p000".to_string()));
    assert!(!round.filter_bypassed);
}

#[test]
fn questions_outside_the_fixtures_fail_cleanly_in_replay() {
    let (cfg, gw, kg) = replay();
    let view = GraphView::new(&kg);
    let record = run(&gw, &kg, &view, "Who designed the baud generator?", &cfg.reasoning, &cfg.retrieval_config(), 0);
    assert!(record.flags.contains(&Flag::Error));
    assert!(record.error.as_deref().unwrap().contains("no recorded reply"), "{:?}", record.error);
    assert!(record.answer.is_empty());
}

#[test]
fn repeated_barren_rounds_stall_and_the_item_is_excluded() {
    let question = "Which vendor supplies the crystal oscillator?";
    let rule = ScriptRule {
        task: tasks::REASON.into(),
        all: vec![question.into()],
        none: vec![],
        reply: gap("receive FIFO threshold interrupt", "procedural", "receive fifo"),
    };
    let (gw, kg) = offline(vec![rule]);
    let view = GraphView::new(&kg);
    let params = ReasoningParams::default();
    let record = run(&gw, &kg, &view, question, &params, &RetrievalConfig::default(), 0);
    // round 1 adds the FIFO passage, rounds 2 and 3 add nothing
    assert_eq!(record.rounds_used, 1 + params.stall_limit);
    assert!(record.flags.contains(&Flag::Stalled));

    let mut items = load_dataset(&fixtures().join("dataset.jsonl")).unwrap();
    items.truncate(1);
    items.push(QaItem {
        qid: "unanswerable".into(),
        question: question.into(),
        gold_answer: "Not stated.".into(),
        gold_atoms: vec!["The vendor is not stated".into()],
        gold_passages: vec!["fixture_spec:p000".into()],
        ..items[0].clone()
    });
    let eval = EvalParams {
        runs: 2,
        judge_reps: 2,
        ..EvalParams::default()
    };
    let report = run_benchmark(&gw, &kg, &items, &eval, &params, &RetrievalConfig::default()).unwrap();
    assert_eq!(report.excluded, vec!["unanswerable".to_string()]);
    assert!(report.items[1].excluded);
    let single = &report.categories[0];
    assert_eq!(single.items, 1);
}

#[test]
fn round_budget_ends_the_loop() {
    let question = "How does a receive FIFO threshold event wake the CPU?";
    let rules = vec![
        ScriptRule {
            task: tasks::REASON.into(),
            all: vec![question.into(), "## Round\n0".into()],
            none: vec![],
            reply: gap("receive FIFO threshold interrupt rx_thr_irq", "procedural", "receive fifo"),
        },
        ScriptRule {
            task: tasks::REASON.into(),
            all: vec![question.into()],
            none: vec![],
            reply: gap("interrupt aggregator output", "procedural", "interrupt aggregator"),
        },
    ];
    let (gw, kg) = offline(rules);
    let view = GraphView::new(&kg);
    let params = ReasoningParams {
        max_rounds: 1,
        ..ReasoningParams::default()
    };
    let record = run(&gw, &kg, &view, question, &params, &RetrievalConfig::default(), 0);
    assert_eq!(record.rounds_used, 1);
    assert!(record.flags.contains(&Flag::BudgetExhausted));
    assert!(!record.answer.is_empty());
}
