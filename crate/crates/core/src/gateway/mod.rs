//! Uniform access to chat-completion and embedding providers.
//!
//! Every model call in the pipeline goes through [`Gateway`]. The gateway
//! owns three concerns that downstream modules never see:
//!
//! - **Fixtures.** In `record` mode each reply is persisted under a content
//!   digest of the request; in `replay` mode replies are served from that
//!   store and a missing digest is a hard [`GatewayError::FixtureMiss`].
//! - **Schema gate.** Structured replies are validated against their
//!   [`SchemaId`]; one repair round-trip is attempted before the call fails
//!   with [`GatewayError::MalformedReply`].
//! - **Normalization.** Embeddings are L2-normalized here, so cosine
//!   similarity is a dot product everywhere else.

pub mod digest;
pub mod fixture;
pub mod http;
pub mod offline;
pub mod schema;

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;

pub use digest::{chat_digest, embed_digest, Digest};
pub use fixture::{FixtureRecord, FixtureStore};
pub use schema::SchemaId;

/// Task tags used by the pipeline. Model routing and fixture records key on these.
pub mod tasks {
    pub const CLASSIFY: &str = "classify";
    pub const IR_EXTRACT: &str = "ir-extract";
    pub const SUMMARIZE: &str = "summarize";
    pub const REASON: &str = "reason";
    pub const SYNTHESIZE: &str = "synthesize";
    pub const ATOM_DECOMPOSE: &str = "atom-decompose";
    pub const ATOM_MATCH: &str = "atom-match";
    pub const EMBED: &str = "embed";
}

#[derive(Debug, thiserror::Error)]
pub enum GatewayError {
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("provider call `{task_tag}` failed after {attempts} attempt(s): {last_error}")]
    RetryExhausted {
        task_tag: String,
        attempts: u32,
        last_error: String,
    },
    #[error("reply for `{task_tag}` does not satisfy schema `{schema}`: {reason}")]
    MalformedReply {
        task_tag: String,
        schema: String,
        reason: String,
    },
    #[error("no recorded reply for `{task_tag}` (digest {digest})")]
    FixtureMiss { task_tag: String, digest: String },
    #[error("fixture store {path}: {reason}")]
    FixtureStore { path: String, reason: String },
    #[error("gateway configuration: {0}")]
    Config(String),
}

/// Failure reported by a [`Provider`]. Only transient failures are retried.
#[derive(Debug, Clone)]
pub enum ProviderError {
    Transient(String),
    Fatal(String),
}

impl fmt::Display for ProviderError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ProviderError::Transient(m) => write!(f, "transient: {m}"),
            ProviderError::Fatal(m) => write!(f, "fatal: {m}"),
        }
    }
}

/// A backend that answers chat and embedding calls.
pub trait Provider: Send + Sync {
    fn chat(&self, model: &str, req: &ChatRequest) -> Result<String, ProviderError>;
    fn embed(&self, model: &str, texts: &[String]) -> Result<Vec<Vec<f32>>, ProviderError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum GatewayMode {
    #[default]
    Live,
    Record,
    Replay,
}

impl GatewayMode {
    pub fn as_str(self) -> &'static str {
        match self {
            GatewayMode::Live => "live",
            GatewayMode::Record => "record",
            GatewayMode::Replay => "replay",
        }
    }
}

impl std::str::FromStr for GatewayMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "live" => Ok(GatewayMode::Live),
            "record" => Ok(GatewayMode::Record),
            "replay" => Ok(GatewayMode::Replay),
            other => Err(format!("unknown gateway mode `{other}` (expected live|record|replay)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    /// Pipeline step issuing the call, e.g. `ir-extract`.
    pub task_tag: String,
    pub system_prompt: String,
    pub user_prompt: String,
    pub temperature: f64,
    pub response_schema_id: SchemaId,
    /// Distinguishes repeated samples of an otherwise identical request
    /// (benchmark run index, judge repetition).
    #[serde(default)]
    pub sample_index: u32,
}

impl ChatRequest {
    pub fn new(task_tag: &str, system_prompt: impl Into<String>, user_prompt: impl Into<String>) -> Self {
        Self {
            task_tag: task_tag.to_string(),
            system_prompt: system_prompt.into(),
            user_prompt: user_prompt.into(),
            temperature: 0.0,
            response_schema_id: SchemaId::Freeform,
            sample_index: 0,
        }
    }

    pub fn temperature(mut self, t: f64) -> Self {
        self.temperature = t;
        self
    }

    pub fn schema(mut self, schema: SchemaId) -> Self {
        self.response_schema_id = schema;
        self
    }

    pub fn sample(mut self, index: u32) -> Self {
        self.sample_index = index;
        self
    }

    fn validate(&self) -> Result<(), GatewayError> {
        if self.task_tag.trim().is_empty() {
            return Err(GatewayError::InvalidRequest("task_tag must be non-empty".into()));
        }
        if !self.temperature.is_finite() || !(0.0..=2.0).contains(&self.temperature) {
            return Err(GatewayError::InvalidRequest(format!(
                "temperature {} outside [0, 2]",
                self.temperature
            )));
        }
        Ok(())
    }
}

/// Reply crossing the gateway boundary. `structured` is set whenever the
/// request named a schema, and is guaranteed to validate against it.
#[derive(Debug, Clone, PartialEq)]
pub struct ChatReply {
    pub text: String,
    pub structured: Option<Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    pub values: Vec<f32>,
    pub dim: usize,
    pub model_id: String,
}

impl EmbeddingVector {
    /// Builds a unit-length vector. Fails on non-finite or all-zero input.
    pub fn normalized(raw: Vec<f32>, model_id: &str) -> Result<Self, String> {
        if raw.is_empty() {
            return Err("empty embedding".into());
        }
        if raw.iter().any(|v| !v.is_finite()) {
            return Err("embedding contains non-finite values".into());
        }
        let norm = raw.iter().map(|&v| f64::from(v) * f64::from(v)).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err("embedding has zero norm".into());
        }
        let values: Vec<f32> = raw.iter().map(|&v| (f64::from(v) / norm) as f32).collect();
        Ok(Self {
            dim: values.len(),
            values,
            model_id: model_id.to_string(),
        })
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|&v| f64::from(v) * f64::from(v)).sum::<f64>().sqrt()
    }

    /// Cosine similarity. Vectors from different models are never comparable.
    pub fn cosine(&self, other: &EmbeddingVector) -> Option<f64> {
        if self.model_id != other.model_id || self.dim != other.dim {
            return None;
        }
        Some(cosine(&self.values, &other.values))
    }
}

/// Cosine similarity of two equal-length slices, accumulated in f64.
pub fn cosine(a: &[f32], b: &[f32]) -> f64 {
    let mut dot = 0.0f64;
    let mut na = 0.0f64;
    let mut nb = 0.0f64;
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (f64::from(x), f64::from(y));
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    dot / (na.sqrt() * nb.sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub attempts: u32,
    pub initial_backoff: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            attempts: 3,
            initial_backoff: Duration::from_secs(1),
        }
    }
}

/// Which model serves which task.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ModelRouting {
    pub chat_model: String,
    pub embedding_model: String,
    pub per_task: BTreeMap<String, String>,
}

impl ModelRouting {
    pub fn chat_model_for(&self, task_tag: &str) -> &str {
        self.per_task
            .get(task_tag)
            .map(String::as_str)
            .unwrap_or(&self.chat_model)
    }
}

pub struct Gateway {
    mode: GatewayMode,
    provider: Option<Arc<dyn Provider>>,
    store: Option<FixtureStore>,
    routing: ModelRouting,
    retry: RetryPolicy,
}

impl fmt::Debug for Gateway {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Gateway")
            .field("mode", &self.mode)
            .field("routing", &self.routing)
            .field("has_provider", &self.provider.is_some())
            .field("store", &self.store.as_ref().map(|s| s.path().display().to_string()))
            .finish()
    }
}

impl Gateway {
    /// Live gateway calling `provider` directly.
    pub fn live(provider: Arc<dyn Provider>, routing: ModelRouting) -> Self {
        Self {
            mode: GatewayMode::Live,
            provider: Some(provider),
            store: None,
            routing,
            retry: RetryPolicy::default(),
        }
    }

    /// Record-mode gateway: provider replies are persisted into `store`.
    pub fn record(provider: Arc<dyn Provider>, store: FixtureStore, routing: ModelRouting) -> Self {
        Self {
            mode: GatewayMode::Record,
            provider: Some(provider),
            store: Some(store),
            routing,
            retry: RetryPolicy::default(),
        }
    }

    /// Replay-mode gateway. No provider is consulted.
    pub fn replay(store: FixtureStore, routing: ModelRouting) -> Self {
        Self {
            mode: GatewayMode::Replay,
            provider: None,
            store: Some(store),
            routing,
            retry: RetryPolicy::default(),
        }
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn mode(&self) -> GatewayMode {
        self.mode
    }

    pub fn routing(&self) -> &ModelRouting {
        &self.routing
    }

    pub fn store(&self) -> Option<&FixtureStore> {
        self.store.as_ref()
    }

    pub fn embedding_model(&self) -> &str {
        &self.routing.embedding_model
    }

    /// One chat call through fixtures, retries and the schema gate.
    pub fn chat(&self, req: &ChatRequest) -> Result<ChatReply, GatewayError> {
        req.validate()?;
        let model = self.routing.chat_model_for(&req.task_tag).to_string();
        let text = self.fetch_chat(&model, req)?;
        if req.response_schema_id == SchemaId::Freeform {
            return Ok(ChatReply { text, structured: None });
        }
        match schema::parse_and_validate(req.response_schema_id, &text) {
            Ok(value) => Ok(ChatReply {
                text,
                structured: Some(value),
            }),
            Err(first_reason) => {
                tracing::warn!(task = %req.task_tag, reason = %first_reason, "structured reply invalid, attempting repair");
                let repair = schema::repair_request(req, &text, &first_reason);
                let repaired = self.fetch_chat(&model, &repair)?;
                schema::parse_and_validate(req.response_schema_id, &repaired)
                    .map(|value| ChatReply {
                        text: repaired,
                        structured: Some(value),
                    })
                    .map_err(|reason| GatewayError::MalformedReply {
                        task_tag: req.task_tag.clone(),
                        schema: req.response_schema_id.as_str().to_string(),
                        reason,
                    })
            }
        }
    }

    /// Chat call whose structured reply is deserialized into `T`.
    pub fn chat_structured<T: serde::de::DeserializeOwned>(&self, req: &ChatRequest) -> Result<T, GatewayError> {
        let reply = self.chat(req)?;
        let value = reply.structured.ok_or_else(|| {
            GatewayError::InvalidRequest(format!("`{}` requested structured output without a schema", req.task_tag))
        })?;
        serde_json::from_value(value).map_err(|e| GatewayError::MalformedReply {
            task_tag: req.task_tag.clone(),
            schema: req.response_schema_id.as_str().to_string(),
            reason: e.to_string(),
        })
    }

    /// Embeds each text; output order matches input and every vector has unit norm.
    pub fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, GatewayError> {
        if texts.is_empty() {
            return Err(GatewayError::InvalidInput("embed called with no texts".into()));
        }
        if let Some(i) = texts.iter().position(|t| t.trim().is_empty()) {
            return Err(GatewayError::InvalidInput(format!("text #{i} is empty after trimming")));
        }
        let model = self.routing.embedding_model.clone();
        let digests: Vec<Digest> = texts.iter().map(|t| embed_digest(&model, t)).collect();

        let mut out: Vec<Option<Vec<f32>>> = vec![None; texts.len()];
        let mut pending: Vec<usize> = Vec::new();
        for (i, d) in digests.iter().enumerate() {
            let cached = match (self.mode, &self.store) {
                (GatewayMode::Replay | GatewayMode::Record, Some(store)) => store.get(d),
                _ => None,
            };
            match cached {
                Some(rec) => out[i] = Some(decode_embedding(&rec.reply, &model)?),
                None if self.mode == GatewayMode::Replay => {
                    return Err(GatewayError::FixtureMiss {
                        task_tag: tasks::EMBED.into(),
                        digest: d.to_string(),
                    })
                }
                None => pending.push(i),
            }
        }

        if !pending.is_empty() {
            let batch: Vec<String> = pending.iter().map(|&i| texts[i].clone()).collect();
            let provider = self.provider()?;
            let raw = self.with_retries(tasks::EMBED, || provider.embed(&model, &batch))?;
            if raw.len() != batch.len() {
                return Err(GatewayError::MalformedReply {
                    task_tag: tasks::EMBED.into(),
                    schema: "embedding".into(),
                    reason: format!("expected {} vectors, provider returned {}", batch.len(), raw.len()),
                });
            }
            for (&i, vector) in pending.iter().zip(raw) {
                if self.mode == GatewayMode::Record {
                    if let Some(store) = &self.store {
                        store.put(&digests[i], tasks::EMBED, encode_embedding(&vector, &model))?;
                    }
                }
                out[i] = Some(vector);
            }
        }

        let vectors: Vec<EmbeddingVector> = out
            .into_iter()
            .map(|v| {
                EmbeddingVector::normalized(v.expect("every slot filled"), &model).map_err(|reason| {
                    GatewayError::MalformedReply {
                        task_tag: tasks::EMBED.into(),
                        schema: "embedding".into(),
                        reason,
                    }
                })
            })
            .collect::<Result<_, _>>()?;
        let dim = vectors[0].dim;
        if vectors.iter().any(|v| v.dim != dim) {
            return Err(GatewayError::MalformedReply {
                task_tag: tasks::EMBED.into(),
                schema: "embedding".into(),
                reason: "vectors of mixed dimension".into(),
            });
        }
        Ok(vectors)
    }

    pub fn embed_one(&self, text: &str) -> Result<EmbeddingVector, GatewayError> {
        Ok(self.embed(&[text.to_string()])?.remove(0))
    }

    fn provider(&self) -> Result<&Arc<dyn Provider>, GatewayError> {
        self.provider
            .as_ref()
            .ok_or_else(|| GatewayError::Config(format!("no provider configured in {} mode", self.mode.as_str())))
    }

    fn fetch_chat(&self, model: &str, req: &ChatRequest) -> Result<String, GatewayError> {
        let digest = chat_digest(model, req);
        if let Some(store) = &self.store {
            if matches!(self.mode, GatewayMode::Replay | GatewayMode::Record) {
                if let Some(rec) = store.get(&digest) {
                    return rec.reply.as_str().map(str::to_string).ok_or_else(|| GatewayError::FixtureStore {
                        path: store.path().display().to_string(),
                        reason: format!("record {digest} holds a non-text chat reply"),
                    });
                }
            }
        }
        if self.mode == GatewayMode::Replay {
            return Err(GatewayError::FixtureMiss {
                task_tag: req.task_tag.clone(),
                digest: digest.to_string(),
            });
        }
        let provider = self.provider()?;
        let text = self.with_retries(&req.task_tag, || provider.chat(model, req))?;
        if self.mode == GatewayMode::Record {
            if let Some(store) = &self.store {
                store.put(&digest, &req.task_tag, Value::String(text.clone()))?;
            }
        }
        Ok(text)
    }

    fn with_retries<T>(
        &self,
        task_tag: &str,
        mut call: impl FnMut() -> Result<T, ProviderError>,
    ) -> Result<T, GatewayError> {
        let attempts = self.retry.attempts.max(1);
        let mut backoff = self.retry.initial_backoff;
        let mut last_error = String::new();
        for attempt in 1..=attempts {
            match call() {
                Ok(v) => return Ok(v),
                Err(ProviderError::Fatal(msg)) => {
                    return Err(GatewayError::RetryExhausted {
                        task_tag: task_tag.to_string(),
                        attempts: attempt,
                        last_error: msg,
                    })
                }
                Err(ProviderError::Transient(msg)) => {
                    tracing::warn!(task = task_tag, attempt, error = %msg, "provider call failed");
                    last_error = msg;
                    if attempt < attempts {
                        std::thread::sleep(backoff);
                        backoff *= 2;
                    }
                }
            }
        }
        Err(GatewayError::RetryExhausted {
            task_tag: task_tag.to_string(),
            attempts,
            last_error,
        })
    }
}

fn encode_embedding(values: &[f32], model: &str) -> Value {
    serde_json::json!({ "model_id": model, "values": values })
}

fn decode_embedding(reply: &Value, model: &str) -> Result<Vec<f32>, GatewayError> {
    #[derive(Deserialize)]
    struct Stored {
        model_id: String,
        values: Vec<f32>,
    }
    let stored: Stored = serde_json::from_value(reply.clone()).map_err(|e| GatewayError::MalformedReply {
        task_tag: tasks::EMBED.into(),
        schema: "embedding".into(),
        reason: e.to_string(),
    })?;
    if stored.model_id != model {
        return Err(GatewayError::MalformedReply {
            task_tag: tasks::EMBED.into(),
            schema: "embedding".into(),
            reason: format!("recorded model `{}` differs from configured `{model}`", stored.model_id),
        });
    }
    Ok(stored.values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicU32, Ordering};
    use std::sync::Mutex;

    /// Returns queued replies in order and counts calls.
    struct Scripted {
        replies: Mutex<Vec<Result<String, ProviderError>>>,
        calls: AtomicU32,
    }

    impl Scripted {
        fn new(replies: Vec<Result<String, ProviderError>>) -> Arc<Self> {
            Arc::new(Self {
                replies: Mutex::new(replies.into_iter().rev().collect()),
                calls: AtomicU32::new(0),
            })
        }
    }

    impl Provider for Scripted {
        fn chat(&self, _model: &str, _req: &ChatRequest) -> Result<String, ProviderError> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            self.replies.lock().unwrap().pop().unwrap_or(Err(ProviderError::Fatal("script exhausted".into())))
        }

        fn embed(&self, _model: &str, texts: &[String]) -> Result<Vec<Vec<f32>>, ProviderError> {
            Ok(texts.iter().map(|t| vec![t.len() as f32, 1.0, 2.0]).collect())
        }
    }

    fn routing() -> ModelRouting {
        ModelRouting {
            chat_model: "m".into(),
            embedding_model: "e".into(),
            per_task: BTreeMap::new(),
        }
    }

    fn fast(g: Gateway) -> Gateway {
        g.with_retry(RetryPolicy {
            attempts: 3,
            initial_backoff: Duration::ZERO,
        })
    }

    #[test]
    fn transient_failures_are_retried_three_times() {
        let p = Scripted::new(vec![
            Err(ProviderError::Transient("503".into())),
            Err(ProviderError::Transient("503".into())),
            Err(ProviderError::Transient("503".into())),
            Ok("late".into()),
        ]);
        let g = fast(Gateway::live(p.clone(), routing()));
        let err = g.chat(&ChatRequest::new("summarize", "s", "u").temperature(0.7)).unwrap_err();
        assert!(matches!(err, GatewayError::RetryExhausted { attempts: 3, .. }), "{err}");
        assert_eq!(p.calls.load(Ordering::SeqCst), 3);
    }

    #[test]
    fn retry_recovers_after_transient_failure() {
        let p = Scripted::new(vec![Err(ProviderError::Transient("timeout".into())), Ok("ok".into())]);
        let g = fast(Gateway::live(p, routing()));
        let reply = g.chat(&ChatRequest::new("summarize", "s", "u").temperature(0.7)).unwrap();
        assert_eq!(reply.text, "ok");
        assert!(reply.structured.is_none());
    }

    #[test]
    fn malformed_structured_reply_gets_one_repair() {
        let p = Scripted::new(vec![Ok("not json".into()), Ok(r#"{"kind": "procedural"}"#.into())]);
        let g = fast(Gateway::live(p.clone(), routing()));
        let req = ChatRequest::new("classify", "s", "u").temperature(0.2).schema(SchemaId::SentenceKind);
        let reply = g.chat(&req).unwrap();
        assert_eq!(reply.structured.unwrap()["kind"], "procedural");
        assert_eq!(p.calls.load(Ordering::SeqCst), 2);

        let p = Scripted::new(vec![Ok("nope".into()), Ok(r#"{"kind": "narrative"}"#.into())]);
        let g = fast(Gateway::live(p.clone(), routing()));
        let err = g.chat(&req).unwrap_err();
        assert!(matches!(err, GatewayError::MalformedReply { .. }), "{err}");
        assert_eq!(p.calls.load(Ordering::SeqCst), 2);
    }

    #[test]
    fn invalid_requests_are_rejected_before_any_call() {
        let p = Scripted::new(vec![]);
        let g = Gateway::live(p.clone(), routing());
        assert!(g.chat(&ChatRequest::new("", "s", "u")).is_err());
        assert!(g.chat(&ChatRequest::new("t", "s", "u").temperature(-0.1)).is_err());
        assert!(g.chat(&ChatRequest::new("t", "s", "u").temperature(2.5)).is_err());
        assert_eq!(p.calls.load(Ordering::SeqCst), 0);
    }

    #[test]
    fn embed_rejects_empty_inputs() {
        let g = Gateway::live(Scripted::new(vec![]), routing());
        assert!(matches!(g.embed(&[]), Err(GatewayError::InvalidInput(_))));
        assert!(matches!(
            g.embed(&["a".into(), "  ".into()]),
            Err(GatewayError::InvalidInput(_))
        ));
    }

    #[test]
    fn embed_normalizes_and_preserves_order() {
        let g = Gateway::live(Scripted::new(vec![]), routing());
        let v = g.embed(&["a".into(), "bbbb".into()]).unwrap();
        assert_eq!(v.len(), 2);
        assert_eq!(v[0].dim, v[1].dim);
        for e in &v {
            assert!((e.norm() - 1.0).abs() < 1e-6);
        }
        assert!(v[0].values[0] < v[1].values[0]);
        assert!((v[0].cosine(&v[0]).unwrap() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn cross_model_vectors_are_not_comparable() {
        let a = EmbeddingVector::normalized(vec![1.0, 0.0], "x").unwrap();
        let b = EmbeddingVector::normalized(vec![1.0, 0.0], "y").unwrap();
        assert!(a.cosine(&b).is_none());
        assert!(EmbeddingVector::normalized(vec![0.0, 0.0], "x").is_err());
        assert!(EmbeddingVector::normalized(vec![f32::NAN], "x").is_err());
    }

    #[test]
    fn record_then_replay_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("fixtures.jsonl");
        let req = ChatRequest::new("summarize", "sys", "user").temperature(0.7);
        {
            let store = FixtureStore::open(&path, GatewayMode::Record).unwrap();
            let g = Gateway::record(Scripted::new(vec![Ok("recorded reply".into())]), store, routing());
            assert_eq!(g.chat(&req).unwrap().text, "recorded reply");
            // second identical request is served from the session store
            assert_eq!(g.chat(&req).unwrap().text, "recorded reply");
            g.embed(&["x".into()]).unwrap();
        }
        let store = FixtureStore::open(&path, GatewayMode::Replay).unwrap();
        let g = Gateway::replay(store, routing());
        assert_eq!(g.chat(&req).unwrap().text, "recorded reply");
        let a = g.embed(&["x".into()]).unwrap();
        let b = g.embed(&["x".into()]).unwrap();
        assert_eq!(a, b);

        let miss = g.chat(&req.clone().temperature(0.2)).unwrap_err();
        assert!(matches!(miss, GatewayError::FixtureMiss { .. }), "{miss}");
        assert!(matches!(g.embed(&["y".into()]), Err(GatewayError::FixtureMiss { .. })));
    }

    #[test]
    fn per_task_routing_overrides_default_model() {
        let mut r = routing();
        r.per_task.insert("reason".into(), "reasoner".into());
        assert_eq!(r.chat_model_for("reason"), "reasoner");
        assert_eq!(r.chat_model_for("classify"), "m");
    }
}
