//! Specification knowledge graph construction and gap-driven retrieval.

pub mod config;
pub mod eval;
pub mod gateway;
pub mod ingest;
pub mod kg;
pub mod prompts;
pub mod reasoning;
pub mod retrieval;
pub mod text;
