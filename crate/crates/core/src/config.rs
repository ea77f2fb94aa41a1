//! Run configuration: every knob with a default, loadable from TOML.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest as _, Sha256};

use crate::eval::EvalParams;
use crate::gateway::http::HttpProvider;
use crate::gateway::offline::{OfflineModel, OFFLINE_CHAT_MODEL, OFFLINE_EMBEDDING_MODEL};
use crate::gateway::{FixtureStore, Gateway, GatewayMode, ModelRouting, Provider, RetryPolicy};
use crate::ingest::IngestConfig;
use crate::reasoning::ReasoningParams;
use crate::retrieval::{ExpansionParams, FilterParams, PprParams, RetrievalConfig, RetrievalParams};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("config file {path}: {reason}")]
    File { path: String, reason: String },
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ProviderKind {
    /// OpenAI-compatible HTTP endpoint.
    Http,
    /// Deterministic rule-based model, no network.
    #[default]
    Offline,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GatewayConfig {
    pub mode: GatewayMode,
    pub provider: ProviderKind,
    pub endpoint: String,
    /// Name of the environment variable holding the API key.
    pub api_key_env: String,
    pub chat_model: String,
    pub embedding_model: String,
    /// Task tag → chat model.
    pub routing: BTreeMap<String, String>,
    pub fixture_path: Option<PathBuf>,
    /// Script of canned replies for the offline provider.
    pub script_path: Option<PathBuf>,
    pub timeout_secs: u64,
    pub retry_attempts: u32,
    pub retry_backoff_ms: u64,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        Self {
            mode: GatewayMode::Live,
            provider: ProviderKind::Offline,
            endpoint: String::new(),
            api_key_env: String::new(),
            chat_model: OFFLINE_CHAT_MODEL.into(),
            embedding_model: OFFLINE_EMBEDDING_MODEL.into(),
            routing: BTreeMap::new(),
            fixture_path: None,
            script_path: None,
            timeout_secs: 120,
            retry_attempts: 3,
            retry_backoff_ms: 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct RunMeta {
    pub corpus_sha256: Option<String>,
    pub config_sha256: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub run_dir: PathBuf,
    pub gateway: GatewayConfig,
    pub ingest: IngestConfig,
    pub retrieval: RetrievalParams,
    pub ppr: PprParams,
    pub filter: FilterParams,
    pub reasoning: ReasoningParams,
    pub eval: EvalParams,
    pub meta: RunMeta,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            run_dir: PathBuf::from("runs/latest"),
            gateway: GatewayConfig::default(),
            ingest: IngestConfig::default(),
            retrieval: RetrievalParams::default(),
            ppr: PprParams::default(),
            filter: FilterParams::default(),
            reasoning: ReasoningParams::default(),
            eval: EvalParams::default(),
            meta: RunMeta::default(),
        }
    }
}

fn absolutize(base: &Path, p: &mut Option<PathBuf>) {
    if let Some(path) = p {
        if path.is_relative() {
            *path = base.join(&*path);
        }
    }
}

impl RunConfig {
    /// Parses TOML; unknown keys are errors. Relative paths resolve against
    /// `base_dir`.
    pub fn from_toml(text: &str, base_dir: &Path) -> Result<Self, String> {
        let value: toml::Value = toml::from_str(text).map_err(|e| e.to_string())?;
        reject_unknown(&value, &toml::Value::try_from(RunConfig::default()).expect("defaults serialize"), "")?;
        let mut cfg: RunConfig = value.try_into().map_err(|e: toml::de::Error| e.to_string())?;
        absolutize(base_dir, &mut cfg.gateway.fixture_path);
        absolutize(base_dir, &mut cfg.gateway.script_path);
        if cfg.run_dir.is_relative() {
            cfg.run_dir = base_dir.join(&cfg.run_dir);
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let err = |reason: String| ConfigError::File {
            path: path.display().to_string(),
            reason,
        };
        let text = std::fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml(&text, base).map_err(err)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn retrieval_config(&self) -> RetrievalConfig {
        RetrievalConfig {
            retrieval: self.retrieval.clone(),
            ppr: self.ppr,
            filter: self.filter.clone(),
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: &str| Err(ConfigError::Invalid(m.to_string()));
        let g = &self.gateway;
        if g.mode != GatewayMode::Live && g.fixture_path.is_none() {
            return bad(&format!("gateway.mode = {} requires gateway.fixture_path", g.mode.as_str()));
        }
        if g.mode != GatewayMode::Replay && g.provider == ProviderKind::Http && g.endpoint.trim().is_empty() {
            return bad("gateway.provider = http requires gateway.endpoint");
        }
        if g.chat_model.trim().is_empty() || g.embedding_model.trim().is_empty() {
            return bad("gateway.chat_model and gateway.embedding_model must be set");
        }
        if g.retry_attempts == 0 {
            return bad("gateway.retry_attempts must be at least 1");
        }
        if self.ingest.max_passage_tokens == 0 {
            return bad("ingest.max_passage_tokens must be positive");
        }
        let ExpansionParams { k0, delta_k, k_max, tau } = self.retrieval.expansion;
        if k0 == 0 || delta_k == 0 || k_max == 0 {
            return bad("retrieval.k0, retrieval.delta_k and retrieval.k_max must be at least 1");
        }
        #[allow(clippy::neg_cmp_op_on_partial_ord)] // also rejects NaN
        if !(tau >= 0.0) {
            return bad("retrieval.tau must be nonnegative");
        }
        if self.retrieval.n_seeds == 0 {
            return bad("retrieval.n_seeds must be at least 1");
        }
        self.ppr.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        for (key, t) in [
            ("ingest.temperature", self.ingest.temperature),
            ("retrieval.temperature", self.retrieval.temperature),
            ("reasoning.temperature", self.reasoning.temperature),
            ("eval.temperature", self.eval.temperature),
        ] {
            if !(0.0..=2.0).contains(&t) {
                return bad(&format!("{key} must be in [0, 2]"));
            }
        }
        if self.eval.runs == 0 || self.eval.judge_reps == 0 || self.eval.recall_k == 0 {
            return bad("eval.runs, eval.judge_reps and eval.recall_k must be at least 1");
        }
        Ok(())
    }

    /// SHA-256 of the config with its metadata cleared.
    pub fn checksum(&self) -> String {
        let mut bare = self.clone();
        bare.meta = RunMeta::default();
        hex::encode(Sha256::digest(bare.to_toml().as_bytes()))
    }

    /// Writes `config.toml` into the run directory.
    pub fn persist(&self, corpus: Option<&[u8]>) -> Result<PathBuf, ConfigError> {
        let mut cfg = self.clone();
        cfg.meta = RunMeta {
            corpus_sha256: corpus.map(|b| hex::encode(Sha256::digest(b))),
            config_sha256: Some(self.checksum()),
        };
        let path = self.run_dir.join("config.toml");
        let err = |e: std::io::Error| ConfigError::File {
            path: path.display().to_string(),
            reason: e.to_string(),
        };
        std::fs::create_dir_all(&self.run_dir).map_err(err)?;
        std::fs::write(&path, cfg.to_toml()).map_err(err)?;
        Ok(path)
    }

    /// Gateway for this configuration. Only the API key comes from the
    /// environment.
    pub fn build_gateway(&self) -> Result<Gateway, ConfigError> {
        self.validate()?;
        let g = &self.gateway;
        let routing = ModelRouting {
            chat_model: g.chat_model.clone(),
            embedding_model: g.embedding_model.clone(),
            per_task: g.routing.clone(),
        };
        let retry = RetryPolicy {
            attempts: g.retry_attempts,
            initial_backoff: Duration::from_millis(g.retry_backoff_ms),
        };
        let store = |mode| {
            let path = g.fixture_path.as_ref().expect("validated");
            FixtureStore::open(path, mode).map_err(|e| ConfigError::Invalid(e.to_string()))
        };
        let gateway = match g.mode {
            GatewayMode::Replay => Gateway::replay(store(GatewayMode::Replay)?, routing),
            GatewayMode::Record => Gateway::record(self.provider()?, store(GatewayMode::Record)?, routing),
            GatewayMode::Live => Gateway::live(self.provider()?, routing),
        };
        Ok(gateway.with_retry(retry))
    }

    fn provider(&self) -> Result<Arc<dyn Provider>, ConfigError> {
        let g = &self.gateway;
        match g.provider {
            ProviderKind::Offline => {
                let model = match &g.script_path {
                    Some(p) => OfflineModel::from_script_file(p).map_err(ConfigError::Invalid)?,
                    None => OfflineModel::new(),
                };
                Ok(Arc::new(model))
            }
            ProviderKind::Http => {
                let key = if g.api_key_env.is_empty() {
                    None
                } else {
                    std::env::var(&g.api_key_env).ok()
                };
                let p = HttpProvider::new(&g.endpoint, key, Duration::from_secs(g.timeout_secs)).map_err(ConfigError::Invalid)?;
                Ok(Arc::new(p))
            }
        }
    }
}

/// Rejects keys absent from the defaults. Free-form maps (model routing)
/// and optional paths are accepted as they are.
fn reject_unknown(value: &toml::Value, defaults: &toml::Value, prefix: &str) -> Result<(), String> {
    const OPEN: &[&str] = &["gateway.routing", "meta"];
    const OPTIONAL: &[&str] = &["gateway.fixture_path", "gateway.script_path"];
    let (Some(table), Some(known)) = (value.as_table(), defaults.as_table()) else {
        return Ok(());
    };
    for (key, v) in table {
        let path = if prefix.is_empty() { key.clone() } else { format!("{prefix}.{key}") };
        if OPEN.contains(&path.as_str()) || OPTIONAL.contains(&path.as_str()) {
            continue;
        }
        match known.get(key) {
            Some(d) => reject_unknown(v, d, &path)?,
            None => return Err(format!("unknown key `{path}`")),
        }
    }
    Ok(())
}
