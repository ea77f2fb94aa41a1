//! Content digests keying the fixture store.
//!
//! Prompts are hashed verbatim apart from trailing whitespace. Each field is
//! length-prefixed so no two distinct requests can share a byte stream.

use std::fmt;

use sha2::{Digest as _, Sha256};

use super::ChatRequest;

/// Hex-encoded SHA-256 over a request's fields (64 chars).
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Digest(String);

impl Digest {
    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn from_hex(hex: impl Into<String>) -> Self {
        Digest(hex.into())
    }
}

impl fmt::Display for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

struct FieldHasher(Sha256);

impl FieldHasher {
    fn new(kind: &str) -> Self {
        let mut h = FieldHasher(Sha256::new());
        h.field(kind.as_bytes());
        h
    }

    fn field(&mut self, bytes: &[u8]) {
        self.0.update((bytes.len() as u64).to_le_bytes());
        self.0.update(bytes);
    }

    fn finish(self) -> Digest {
        Digest(hex::encode(self.0.finalize()))
    }
}

pub fn chat_digest(model: &str, req: &ChatRequest) -> Digest {
    let mut h = FieldHasher::new("chat/v1");
    h.field(model.as_bytes());
    h.field(req.task_tag.as_bytes());
    h.field(req.system_prompt.trim_end().as_bytes());
    h.field(req.user_prompt.trim_end().as_bytes());
    h.field(&req.temperature.to_bits().to_le_bytes());
    h.field(req.response_schema_id.as_str().as_bytes());
    h.field(&req.sample_index.to_le_bytes());
    h.finish()
}

pub fn embed_digest(model: &str, text: &str) -> Digest {
    let mut h = FieldHasher::new("embed/v1");
    h.field(model.as_bytes());
    h.field(text.trim_end().as_bytes());
    h.finish()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::SchemaId;

    fn base() -> ChatRequest {
        ChatRequest::new("summarize", "system", "user prompt").temperature(0.7)
    }

    #[test]
    fn identical_requests_share_a_digest() {
        assert_eq!(chat_digest("m", &base()), chat_digest("m", &base()));
        assert_eq!(chat_digest("m", &base()).as_str().len(), 64);
    }

    #[test]
    fn every_field_changes_the_digest() {
        let d = chat_digest("m", &base());
        assert_ne!(d, chat_digest("m", &base().temperature(0.2)));
        let mut r = base();
        r.task_tag = "atom-match".into();
        assert_ne!(d, chat_digest("m", &r));
        assert_ne!(d, chat_digest("m", &base().schema(SchemaId::Atoms)));
        assert_ne!(d, chat_digest("m", &base().sample(1)));
        assert_ne!(d, chat_digest("other", &base()));
        let mut r = base();
        r.system_prompt = "System".into();
        assert_ne!(d, chat_digest("m", &r));
    }

    #[test]
    fn only_trailing_whitespace_is_ignored() {
        let mut r = base();
        r.user_prompt = "user prompt \n\n".into();
        assert_eq!(chat_digest("m", &base()), chat_digest("m", &r));
        r.user_prompt = " user prompt".into();
        assert_ne!(chat_digest("m", &base()), chat_digest("m", &r));
        r.user_prompt = "user  prompt".into();
        assert_ne!(chat_digest("m", &base()), chat_digest("m", &r));
    }

    #[test]
    fn field_boundaries_are_unambiguous() {
        let mut a = base();
        a.system_prompt = "ab".into();
        a.user_prompt = "c".into();
        let mut b = base();
        b.system_prompt = "a".into();
        b.user_prompt = "bc".into();
        assert_ne!(chat_digest("m", &a), chat_digest("m", &b));
        assert_ne!(embed_digest("m", "x"), embed_digest("m", "y"));
        assert_eq!(embed_digest("m", "x"), embed_digest("m", "x "));
    }
}
