//! Gap-driven reasoning loop: reason, detect a gap, acquire evidence for a
//! targeted sub-query, repeat, then synthesize a grounded answer.

use std::collections::{BTreeSet, HashSet};

use serde::{Deserialize, Serialize};

use crate::gateway::schema::{GapReply, GapStatus};
use crate::gateway::{tasks, ChatRequest, Gateway, GatewayError, SchemaId};
use crate::ingest::CircuitSemanticAnchor;
use crate::kg::ChipKg;
use crate::prompts::{render_passage, Prompt};
use crate::retrieval::{retrieve, GraphView, RetrievalConfig, RetrievalError, StopReason};

#[derive(Debug, thiserror::Error)]
pub enum ReasoningError {
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("synthesis failed after {} gap round(s): {reason}", .context.round)]
    SynthesisFailed {
        reason: String,
        context: Box<ReasoningContext>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReasoningParams {
    pub max_rounds: usize,
    /// Consecutive barren rounds that end the loop.
    pub stall_limit: usize,
    pub temperature: f64,
}

impl Default for ReasoningParams {
    fn default() -> Self {
        Self {
            max_rounds: 12,
            stall_limit: 2,
            temperature: 0.7,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Flag {
    BudgetExhausted,
    Stalled,
    DegradedConfidence,
    FilterBypassed,
    ExpansionAborted,
    PprNotConverged,
    Error,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextItem {
    pub passage_id: String,
    pub text: String,
    /// Gap round that added the item, from 1.
    pub round: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalLogEntry {
    pub round: usize,
    pub sub_query: String,
    pub target: CircuitSemanticAnchor,
    pub accepted: Vec<String>,
    pub filtered: Vec<String>,
    /// Filtered ids that were new to the context.
    pub added: Vec<String>,
    pub mig_trace: Vec<f64>,
    pub stop: StopReason,
    pub filter_bypassed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapAssessment {
    pub status: GapStatus,
    pub gap_description: Option<String>,
    pub sub_query: Option<String>,
    pub target_anchor: Option<CircuitSemanticAnchor>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReasoningContext {
    pub question: String,
    pub context_items: Vec<ContextItem>,
    pub thoughts: Vec<String>,
    pub retrieval_log: Vec<RetrievalLogEntry>,
    pub round: usize,
    pub flags: BTreeSet<Flag>,
}

impl ReasoningContext {
    pub fn new(question: &str) -> Self {
        Self {
            question: question.to_string(),
            context_items: Vec::new(),
            thoughts: Vec::new(),
            retrieval_log: Vec::new(),
            round: 0,
            flags: BTreeSet::new(),
        }
    }

    fn context_block(&self, kg: &ChipKg) -> String {
        self.context_items
            .iter()
            .map(|item| {
                let section = kg.passages.get(&item.passage_id).map(|p| p.passage.section_path.clone()).unwrap_or_default();
                render_passage(&item.passage_id, &section, &item.text)
            })
            .collect::<Vec<_>>()
            .join("\n")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnswerRecord {
    pub question: String,
    pub answer: String,
    /// Context passage ids in the order they entered the context.
    pub provenance: Vec<String>,
    pub retrieval_log: Vec<RetrievalLogEntry>,
    pub rounds_used: usize,
    pub flags: BTreeSet<Flag>,
    pub thoughts: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl AnswerRecord {
    fn from_context(ctx: ReasoningContext, answer: String, error: Option<String>) -> Self {
        AnswerRecord {
            question: ctx.question,
            answer,
            provenance: ctx.context_items.iter().map(|c| c.passage_id.clone()).collect(),
            retrieval_log: ctx.retrieval_log,
            rounds_used: ctx.round,
            flags: ctx.flags,
            thoughts: ctx.thoughts,
            error,
        }
    }
}

const REASON_SYSTEM: &str = "You answer questions about an integrated-circuit specification using only the supplied context. \
Think about what the context establishes. If something needed to answer is missing, describe the gap, \
write one focused sub-query for it and name the anchor the missing passage should carry: \
its type (declarative for static definitions, procedural for behavior) and its central entity. Reply with JSON only.";

const SYNTHESIZE_SYSTEM: &str = "You answer questions about an integrated-circuit specification. \
Use only facts stated in the context passages and answer in short declarative sentences.";

fn numbered(items: &[String]) -> String {
    items.iter().enumerate().map(|(i, t)| format!("{}. {t}", i + 1)).collect::<Vec<_>>().join("\n")
}

/// One structured call: a thought plus a gap assessment. An unusable reply
/// counts as sufficient with degraded confidence.
pub fn reason_step(
    gateway: &Gateway,
    kg: &ChipKg,
    ctx: &mut ReasoningContext,
    params: &ReasoningParams,
    sample_index: u32,
) -> Result<GapAssessment, ReasoningError> {
    let mut prompt = Prompt::new().section("Question", &ctx.question);
    if !ctx.thoughts.is_empty() {
        prompt = prompt.section("Previous thoughts", &numbered(&ctx.thoughts));
    }
    let prompt = prompt
        .section("Context", &ctx.context_block(kg))
        .section("Round", &ctx.round.to_string())
        .section("Reply format", SchemaId::GapAssessment.format_hint())
        .build();
    let req = ChatRequest::new(tasks::REASON, REASON_SYSTEM, prompt)
        .temperature(params.temperature)
        .schema(SchemaId::GapAssessment)
        .sample(sample_index);
    match gateway.chat_structured::<GapReply>(&req) {
        Ok(reply) => {
            ctx.thoughts.push(reply.thought);
            Ok(GapAssessment {
                status: reply.status,
                gap_description: reply.gap_description,
                sub_query: reply.sub_query,
                target_anchor: reply.target_anchor.map(|a| CircuitSemanticAnchor::new(a.csa_type, &a.entity)),
            })
        }
        Err(GatewayError::MalformedReply { reason, .. }) => {
            tracing::warn!(%reason, round = ctx.round, "gap assessment unusable; synthesizing");
            ctx.flags.insert(Flag::DegradedConfidence);
            Ok(GapAssessment {
                status: GapStatus::Sufficient,
                gap_description: None,
                sub_query: None,
                target_anchor: None,
            })
        }
        Err(e) => Err(e.into()),
    }
}

/// Retrieves for one sub-query and integrates the new filtered passages.
/// Returns how many items were added; zero means a barren round.
#[allow(clippy::too_many_arguments)]
pub fn acquire(
    gateway: &Gateway,
    kg: &ChipKg,
    view: &GraphView,
    ctx: &mut ReasoningContext,
    sub_query: &str,
    target: &CircuitSemanticAnchor,
    cfg: &RetrievalConfig,
    sample_index: u32,
) -> Result<usize, ReasoningError> {
    let outcome = retrieve(gateway, kg, view, sub_query, target, cfg, sample_index)?;
    let round = ctx.round + 1;
    if outcome.filter.bypassed {
        ctx.flags.insert(Flag::FilterBypassed);
    }
    if matches!(outcome.stop, StopReason::Aborted(_)) {
        ctx.flags.insert(Flag::ExpansionAborted);
    }
    if !outcome.ppr_converged {
        ctx.flags.insert(Flag::PprNotConverged);
    }
    let present: HashSet<String> = ctx.context_items.iter().map(|c| c.passage_id.clone()).collect();
    let mut added = Vec::new();
    for id in &outcome.filter.kept {
        if present.contains(id) || added.contains(id) {
            continue;
        }
        if let Some(p) = kg.passages.get(id) {
            ctx.context_items.push(ContextItem {
                passage_id: id.clone(),
                text: p.passage.text.clone(),
                round,
            });
            added.push(id.clone());
        }
    }
    ctx.retrieval_log.push(RetrievalLogEntry {
        round,
        sub_query: sub_query.to_string(),
        target: target.clone(),
        accepted: outcome.accepted,
        filtered: outcome.filter.kept,
        added: added.clone(),
        mig_trace: outcome.mig_trace,
        stop: outcome.stop,
        filter_bypassed: outcome.filter.bypassed,
    });
    ctx.round = round;
    Ok(added.len())
}

pub fn synthesize(
    gateway: &Gateway,
    kg: &ChipKg,
    ctx: &ReasoningContext,
    params: &ReasoningParams,
    sample_index: u32,
) -> Result<String, ReasoningError> {
    let prompt = Prompt::new()
        .section("Question", &ctx.question)
        .section("Context", &ctx.context_block(kg))
        .build();
    let req = ChatRequest::new(tasks::SYNTHESIZE, SYNTHESIZE_SYSTEM, prompt)
        .temperature(params.temperature)
        .sample(sample_index);
    gateway.chat(&req).map(|r| r.text.trim().to_string()).map_err(|e| ReasoningError::SynthesisFailed {
        reason: e.to_string(),
        context: Box::new(ctx.clone()),
    })
}

fn run_loop(
    gateway: &Gateway,
    kg: &ChipKg,
    view: &GraphView,
    ctx: &mut ReasoningContext,
    params: &ReasoningParams,
    cfg: &RetrievalConfig,
    sample_index: u32,
) -> Result<(), ReasoningError> {
    let mut barren = 0;
    loop {
        if ctx.round >= params.max_rounds {
            ctx.flags.insert(Flag::BudgetExhausted);
            return Ok(());
        }
        let gap = reason_step(gateway, kg, ctx, params, sample_index)?;
        let (GapStatus::Gap, Some(sub_query), Some(target)) = (gap.status, gap.sub_query, gap.target_anchor) else {
            return Ok(());
        };
        tracing::debug!(round = ctx.round + 1, %sub_query, entity = %target.entity, "knowledge gap");
        let added = acquire(gateway, kg, view, ctx, &sub_query, &target, cfg, sample_index)?;
        barren = if added == 0 { barren + 1 } else { 0 };
        if barren >= params.stall_limit.max(1) {
            ctx.flags.insert(Flag::Stalled);
            return Ok(());
        }
    }
}

/// Full loop. Never fails: unrecoverable errors end in a record with the
/// `Error` flag and the partial log.
pub fn run(
    gateway: &Gateway,
    kg: &ChipKg,
    view: &GraphView,
    question: &str,
    params: &ReasoningParams,
    cfg: &RetrievalConfig,
    sample_index: u32,
) -> AnswerRecord {
    let mut ctx = ReasoningContext::new(question);
    if let Err(e) = run_loop(gateway, kg, view, &mut ctx, params, cfg, sample_index) {
        tracing::error!(error = %e, "reasoning failed");
        ctx.flags.insert(Flag::Error);
        return AnswerRecord::from_context(ctx, String::new(), Some(e.to_string()));
    }
    match synthesize(gateway, kg, &ctx, params, sample_index) {
        Ok(answer) => AnswerRecord::from_context(ctx, answer, None),
        Err(e) => {
            tracing::error!(error = %e, "synthesis failed");
            ctx.flags.insert(Flag::Error);
            AnswerRecord::from_context(ctx, String::new(), Some(e.to_string()))
        }
    }
}
