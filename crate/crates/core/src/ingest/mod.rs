//! Specification ingestion: passages, sentence categorization, per-sentence
//! semantic IR and per-passage semantic anchors.

mod chunk;

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::gateway::schema::{IrReply, KindReply};
use crate::gateway::{tasks, ChatRequest, Gateway, GatewayError, SchemaId};
use crate::prompts::{render_passage, Prompt};
use crate::text::canonical_entity;

pub use chunk::chunk;
pub(crate) use chunk::split_sentences;

#[derive(Debug, thiserror::Error)]
pub enum IngestError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("sentence {sentence_id} skipped: {reason}")]
    SkippedSentence { sentence_id: String, reason: String },
    #[error("passage {passage_id} has no informative sentences")]
    NoAnchor { passage_id: String },
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("corpus file {path}: {reason}")]
    CorpusFile { path: String, reason: String },
}

/// Byte range `[start, end)`; serialized as a two-element array.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(from = "(usize, usize)", into = "(usize, usize)")]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl From<(usize, usize)> for Span {
    fn from((start, end): (usize, usize)) -> Self {
        Span { start, end }
    }
}

impl From<Span> for (usize, usize) {
    fn from(s: Span) -> Self {
        (s.start, s.end)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Passage {
    pub passage_id: String,
    pub doc_id: String,
    pub section_path: Vec<String>,
    pub text: String,
    pub sentence_spans: Vec<Span>,
    pub token_estimate: usize,
}

impl Passage {
    pub fn sentence(&self, i: usize) -> &str {
        let s = self.sentence_spans[i];
        &self.text[s.start..s.end]
    }

    pub fn sentence_id(&self, i: usize) -> String {
        format!("{}:s{:02}", self.passage_id, i)
    }

    /// Checks spans are sorted, non-overlapping and inside the text.
    pub fn spans_well_formed(&self) -> bool {
        let mut prev_end = 0;
        self.sentence_spans.iter().all(|s| {
            let ok = s.start >= prev_end
                && s.start < s.end
                && s.end <= self.text.len()
                && self.text.is_char_boundary(s.start)
                && self.text.is_char_boundary(s.end);
            prev_end = s.end;
            ok
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SentenceKind {
    Declarative,
    Procedural,
}

impl SentenceKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SentenceKind::Declarative => "declarative",
            SentenceKind::Procedural => "procedural",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Attribute {
    pub name: String,
    pub value: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Action {
    pub subject: String,
    pub verb: String,
    pub object: String,
}

/// Kind-specific IR content. The variant is the sentence kind, so kind and
/// payload cannot disagree.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum IrPayload {
    Declarative {
        central_entity: String,
        attributes: Vec<Attribute>,
    },
    Procedural {
        trigger: String,
        condition: String,
        action: Action,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IrSource {
    pub passage_id: String,
    pub span: Span,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SemanticIr {
    pub sentence_id: String,
    #[serde(flatten)]
    pub payload: IrPayload,
    pub source: IrSource,
    /// Declarative sentence that yielded no attributes.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub low_content: bool,
}

impl SemanticIr {
    pub fn kind(&self) -> SentenceKind {
        match self.payload {
            IrPayload::Declarative { .. } => SentenceKind::Declarative,
            IrPayload::Procedural { .. } => SentenceKind::Procedural,
        }
    }

    /// Entity the sentence is about: the central entity or the acting subject.
    pub fn focus_entity(&self) -> &str {
        match &self.payload {
            IrPayload::Declarative { central_entity, .. } => central_entity,
            IrPayload::Procedural { action, .. } => &action.subject,
        }
    }
}

/// `(type, entity)` intent tag. `entity` is always stored canonicalized.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CircuitSemanticAnchor {
    pub csa_type: SentenceKind,
    pub entity: String,
}

impl CircuitSemanticAnchor {
    pub fn new(csa_type: SentenceKind, entity: &str) -> Self {
        Self {
            csa_type,
            entity: canonical_entity(entity),
        }
    }
}

/// A passage's anchor, or the explicit marker that it has none.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Anchor {
    Csa(CircuitSemanticAnchor),
    NoAnchor,
}

impl Anchor {
    pub fn csa(&self) -> Option<&CircuitSemanticAnchor> {
        match self {
            Anchor::Csa(c) => Some(c),
            Anchor::NoAnchor => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestConfig {
    pub max_passage_tokens: usize,
    pub temperature: f64,
}

impl Default for IngestConfig {
    fn default() -> Self {
        Self {
            max_passage_tokens: 512,
            temperature: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkippedSentence {
    pub sentence_id: String,
    pub reason: String,
}

/// Ingestion output for one document.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub passages: Vec<Passage>,
    pub irs: Vec<SemanticIr>,
    pub anchors: BTreeMap<String, Anchor>,
    pub skipped: Vec<SkippedSentence>,
}

const CLASSIFY_SYSTEM: &str = "You analyse sentences from integrated-circuit specifications. \
A sentence is declarative when it describes static properties or definitions (module composition, register fields, signal functions). \
It is procedural when it describes dynamic behavior (state transitions, conditional triggers, signal assignments). Reply with JSON only.";

const EXTRACT_SYSTEM: &str = "You convert one sentence of an integrated-circuit specification into a compact JSON semantic representation. \
Declarative sentences become a central entity with attribute name/value pairs. \
Procedural sentences become trigger-condition-action logic; the condition may be empty. \
Reply {\"kind\": \"skip\"} for captions, headers and sentences without technical content. Reply with JSON only.";

fn context_block(passage: &Passage) -> String {
    render_passage(&passage.passage_id, &passage.section_path, &passage.text)
}

pub fn classify_sentence(
    gateway: &Gateway,
    sentence: &str,
    context: &Passage,
    cfg: &IngestConfig,
) -> Result<SentenceKind, IngestError> {
    let prompt = Prompt::new()
        .section("Sentence", sentence)
        .section("Passage", &context_block(context))
        .section("Reply format", SchemaId::SentenceKind.format_hint())
        .build();
    let req = ChatRequest::new(tasks::CLASSIFY, CLASSIFY_SYSTEM, prompt)
        .temperature(cfg.temperature)
        .schema(SchemaId::SentenceKind);
    let reply: KindReply = gateway.chat_structured(&req)?;
    Ok(reply.kind)
}

pub fn extract_ir(
    gateway: &Gateway,
    sentence_id: &str,
    span: Span,
    kind: SentenceKind,
    context: &Passage,
    cfg: &IngestConfig,
) -> Result<SemanticIr, IngestError> {
    let sentence = &context.text[span.start..span.end];
    let skipped = |reason: &str| IngestError::SkippedSentence {
        sentence_id: sentence_id.to_string(),
        reason: reason.to_string(),
    };
    if sentence.trim().is_empty() {
        return Err(skipped("empty sentence"));
    }
    let prompt = Prompt::new()
        .section("Kind", kind.as_str())
        .section("Sentence", sentence)
        .section("Passage", &context_block(context))
        .section("Reply format", SchemaId::SemanticIr.format_hint())
        .build();
    let req = ChatRequest::new(tasks::IR_EXTRACT, EXTRACT_SYSTEM, prompt)
        .temperature(cfg.temperature)
        .schema(SchemaId::SemanticIr);
    let reply: IrReply = gateway.chat_structured(&req)?;
    let (payload, low_content) = match reply {
        IrReply::Skip { reason } => {
            return Err(skipped(if reason.is_empty() { "judged non-informative" } else { &reason }))
        }
        IrReply::Declarative {
            central_entity,
            attributes,
        } => {
            let low = attributes.is_empty();
            (
                IrPayload::Declarative {
                    central_entity: central_entity.trim().to_string(),
                    attributes: attributes
                        .into_iter()
                        .map(|a| Attribute {
                            name: a.name.trim().to_string(),
                            value: a.value.trim().to_string(),
                        })
                        .collect(),
                },
                low,
            )
        }
        IrReply::Procedural {
            trigger,
            condition,
            action,
        } => (
            IrPayload::Procedural {
                trigger: trigger.trim().to_string(),
                condition: condition.trim().to_string(),
                action: Action {
                    subject: action.subject.trim().to_string(),
                    verb: action.verb.trim().to_string(),
                    object: action.object.trim().to_string(),
                },
            },
            false,
        ),
    };
    let ir = SemanticIr {
        sentence_id: sentence_id.to_string(),
        payload,
        source: IrSource {
            passage_id: context.passage_id.clone(),
            span,
        },
        low_content,
    };
    if ir.kind() != kind {
        tracing::debug!(sentence = sentence_id, "extractor changed the sentence kind");
    }
    Ok(ir)
}

/// Majority kind (ties go to procedural) and most frequent focus entity
/// (ties go to the entity seen first).
pub fn distill_csa(irs: &[SemanticIr], passage: &Passage) -> Result<CircuitSemanticAnchor, IngestError> {
    if irs.is_empty() {
        return Err(IngestError::NoAnchor {
            passage_id: passage.passage_id.clone(),
        });
    }
    let procedural = irs.iter().filter(|ir| ir.kind() == SentenceKind::Procedural).count();
    let declarative = irs.len() - procedural;
    let csa_type = if procedural >= declarative {
        SentenceKind::Procedural
    } else {
        SentenceKind::Declarative
    };
    let mut counts: Vec<(String, usize)> = Vec::new();
    for ir in irs {
        let e = canonical_entity(ir.focus_entity());
        if e.is_empty() {
            continue;
        }
        match counts.iter_mut().find(|(k, _)| *k == e) {
            Some((_, n)) => *n += 1,
            None => counts.push((e, 1)),
        }
    }
    let best = counts.iter().map(|(_, n)| *n).max().unwrap_or(0);
    let entity = counts.into_iter().find(|(_, n)| *n == best).map(|(e, _)| e).unwrap_or_default();
    if entity.is_empty() {
        return Err(IngestError::NoAnchor {
            passage_id: passage.passage_id.clone(),
        });
    }
    Ok(CircuitSemanticAnchor { csa_type, entity })
}

enum SentenceOutcome {
    Ir(SemanticIr),
    Skipped(SkippedSentence),
}

fn process_sentence(
    gateway: &Gateway,
    passage: &Passage,
    index: usize,
    cfg: &IngestConfig,
) -> Result<SentenceOutcome, IngestError> {
    let sentence_id = passage.sentence_id(index);
    let span = passage.sentence_spans[index];
    let sentence = passage.sentence(index);
    let result = classify_sentence(gateway, sentence, passage, cfg)
        .and_then(|kind| extract_ir(gateway, &sentence_id, span, kind, passage, cfg));
    match result {
        Ok(ir) => Ok(SentenceOutcome::Ir(ir)),
        Err(IngestError::SkippedSentence { sentence_id, reason }) => {
            Ok(SentenceOutcome::Skipped(SkippedSentence { sentence_id, reason }))
        }
        Err(IngestError::Gateway(GatewayError::MalformedReply { reason, .. })) => {
            tracing::warn!(sentence = %sentence_id, %reason, "unusable extraction, sentence skipped");
            Ok(SentenceOutcome::Skipped(SkippedSentence {
                sentence_id,
                reason: format!("malformed reply: {reason}"),
            }))
        }
        Err(e) => Err(e),
    }
}

/// Chunks, classifies, extracts and anchors a whole document. Sentence calls
/// run in parallel; results are committed in document order.
pub fn ingest_document(
    gateway: &Gateway,
    doc_id: &str,
    text: &str,
    cfg: &IngestConfig,
) -> Result<Corpus, IngestError> {
    let passages = chunk(doc_id, text, cfg.max_passage_tokens)?;
    let jobs: Vec<(usize, usize)> = passages
        .iter()
        .enumerate()
        .flat_map(|(p, passage)| (0..passage.sentence_spans.len()).map(move |s| (p, s)))
        .collect();
    let outcomes: Vec<Result<SentenceOutcome, IngestError>> = jobs
        .par_iter()
        .map(|&(p, s)| process_sentence(gateway, &passages[p], s, cfg))
        .collect();

    let mut irs = Vec::new();
    let mut skipped = Vec::new();
    for outcome in outcomes {
        match outcome? {
            SentenceOutcome::Ir(ir) => irs.push(ir),
            SentenceOutcome::Skipped(s) => skipped.push(s),
        }
    }
    let mut anchors = BTreeMap::new();
    for passage in &passages {
        let own: Vec<SemanticIr> = irs
            .iter()
            .filter(|ir| ir.source.passage_id == passage.passage_id)
            .cloned()
            .collect();
        let anchor = match distill_csa(&own, passage) {
            Ok(csa) => Anchor::Csa(csa),
            Err(IngestError::NoAnchor { .. }) => Anchor::NoAnchor,
            Err(e) => return Err(e),
        };
        anchors.insert(passage.passage_id.clone(), anchor);
    }
    Ok(Corpus {
        passages,
        irs,
        anchors,
        skipped,
    })
}

fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<(), IngestError> {
    let err = |e: std::io::Error| IngestError::CorpusFile {
        path: path.display().to_string(),
        reason: e.to_string(),
    };
    let mut w = BufWriter::new(File::create(path).map_err(err)?);
    for item in items {
        serde_json::to_writer(&mut w, item).expect("corpus records serialize");
        w.write_all(b"\n").map_err(err)?;
    }
    w.flush().map_err(err)
}

fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>, IngestError> {
    let err = |reason: String| IngestError::CorpusFile {
        path: path.display().to_string(),
        reason,
    };
    let file = File::open(path).map_err(|e| err(e.to_string()))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| err(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| err(format!("line {}: {e}", n + 1)))?);
    }
    Ok(out)
}

/// Writes `passages.jsonl` and `ir.jsonl` into `dir`.
pub fn write_corpus_files(dir: &Path, corpus: &Corpus) -> Result<(), IngestError> {
    write_jsonl(&dir.join("passages.jsonl"), &corpus.passages)?;
    write_jsonl(&dir.join("ir.jsonl"), &corpus.irs)
}

pub fn read_passages(path: &Path) -> Result<Vec<Passage>, IngestError> {
    read_jsonl(path)
}

pub fn read_irs(path: &Path) -> Result<Vec<SemanticIr>, IngestError> {
    read_jsonl(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn passage() -> Passage {
        Passage {
            passage_id: "d:p000".into(),
            doc_id: "d".into(),
            section_path: vec![],
            text: "x".into(),
            sentence_spans: vec![Span { start: 0, end: 1 }],
            token_estimate: 1,
        }
    }

    fn decl(entity: &str) -> SemanticIr {
        SemanticIr {
            sentence_id: "s".into(),
            payload: IrPayload::Declarative {
                central_entity: entity.into(),
                attributes: vec![],
            },
            source: IrSource {
                passage_id: "d:p000".into(),
                span: Span { start: 0, end: 1 },
            },
            low_content: true,
        }
    }

    fn proc_(subject: &str) -> SemanticIr {
        SemanticIr {
            payload: IrPayload::Procedural {
                trigger: "t".into(),
                condition: String::new(),
                action: Action {
                    subject: subject.into(),
                    verb: "v".into(),
                    object: "o".into(),
                },
            },
            ..decl(subject)
        }
    }

    #[test]
    fn unanimous_declarative_anchor() {
        let irs = vec![decl("CTRL register"), decl("the CTRL register"), decl("CTRL  Register")];
        let csa = distill_csa(&irs, &passage()).unwrap();
        assert_eq!(csa, CircuitSemanticAnchor::new(SentenceKind::Declarative, "ctrl register"));
    }

    #[test]
    fn majority_and_tie_break() {
        let csa = distill_csa(&[proc_("FSM"), proc_("FSM"), decl("FSM")], &passage()).unwrap();
        assert_eq!(csa.csa_type, SentenceKind::Procedural);
        let csa = distill_csa(&[decl("FSM"), proc_("FSM")], &passage()).unwrap();
        assert_eq!(csa.csa_type, SentenceKind::Procedural);
        let csa = distill_csa(&[decl("A"), decl("B"), decl("B")], &passage()).unwrap();
        assert_eq!(csa.entity, "b");
        let csa = distill_csa(&[decl("A"), decl("B")], &passage()).unwrap();
        assert_eq!(csa.entity, "a");
    }

    #[test]
    fn no_irs_means_no_anchor() {
        assert!(matches!(distill_csa(&[], &passage()), Err(IngestError::NoAnchor { .. })));
    }

    #[test]
    fn ir_serializes_with_flat_kind() {
        let ir = proc_("FSM");
        let v = serde_json::to_value(&ir).unwrap();
        assert_eq!(v["kind"], "procedural");
        assert_eq!(v["action"]["subject"], "FSM");
        assert!(v.get("central_entity").is_none());
        let back: SemanticIr = serde_json::from_value(v).unwrap();
        assert_eq!(back, ir);
        let d = serde_json::to_value(decl("x")).unwrap();
        assert_eq!(d["low_content"], true);
    }
}
