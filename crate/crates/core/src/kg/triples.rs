//! Hierarchical triple extraction from semantic IR.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use sha2::{Digest as _, Sha256};

use crate::ingest::{IrPayload, SemanticIr};
use crate::text::canonical_entity;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum TripleCategory {
    /// Central action or definition.
    #[serde(rename = "T_B")]
    Backbone,
    /// Condition or temporal qualifier.
    #[serde(rename = "T_A")]
    Auxiliary,
    /// Backbone statement qualified by an auxiliary statement.
    #[serde(rename = "T_L")]
    Linking,
    /// Variant entity mapped to its canonical form.
    #[serde(rename = "T_N")]
    Normalization,
}

impl TripleCategory {
    pub fn as_str(self) -> &'static str {
        match self {
            TripleCategory::Backbone => "T_B",
            TripleCategory::Auxiliary => "T_A",
            TripleCategory::Linking => "T_L",
            TripleCategory::Normalization => "T_N",
        }
    }

    /// Backbone and auxiliary triples become statement nodes.
    pub fn is_statement(self) -> bool {
        matches!(self, TripleCategory::Backbone | TripleCategory::Auxiliary)
    }
}

/// A triple endpoint. Entity keys are canonical.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(tag = "type", content = "value", rename_all = "lowercase")]
pub enum Term {
    Entity(String),
    Literal(String),
    Triple(String),
}

impl Term {
    pub fn entity(&self) -> Option<&str> {
        match self {
            Term::Entity(e) => Some(e),
            _ => None,
        }
    }

    fn tag(&self) -> (&'static str, &str) {
        match self {
            Term::Entity(v) => ("entity", v),
            Term::Literal(v) => ("literal", v),
            Term::Triple(v) => ("triple", v),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Triple {
    pub triple_id: String,
    pub category: TripleCategory,
    pub subject: Term,
    pub predicate: String,
    pub object: Term,
    /// Sentence the triple came from.
    pub source: String,
}

impl Triple {
    pub fn new(category: TripleCategory, subject: Term, predicate: &str, object: Term, source: &str) -> Self {
        let predicate = predicate.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase();
        let triple_id = triple_id(category, &subject, &predicate, &object, source);
        Triple {
            triple_id,
            category,
            subject,
            predicate,
            object,
            source: source.to_string(),
        }
    }

    /// Entity keys among subject and object.
    pub fn entities(&self) -> impl Iterator<Item = &str> {
        self.subject.entity().into_iter().chain(self.object.entity())
    }
}

/// SHA-256 over length-prefixed canonical fields, hex-encoded.
pub fn triple_id(category: TripleCategory, subject: &Term, predicate: &str, object: &Term, source: &str) -> String {
    let mut h = Sha256::new();
    let (st, sv) = subject.tag();
    let (ot, ov) = object.tag();
    for field in [category.as_str(), st, sv, predicate, ot, ov, source] {
        h.update((field.len() as u64).to_le_bytes());
        h.update(field.as_bytes());
    }
    hex::encode(h.finalize())
}

const LITERAL_WORDS: &[&str] = &[
    "true", "false", "high", "low", "enabled", "disabled", "set", "cleared", "asserted", "deasserted", "none",
    "reserved", "read-only", "write-only", "read-write", "rw", "ro", "wo", "w1c",
];

const STATE_WORDS: &[&str] = &[
    "asserted", "deasserted", "set", "cleared", "high", "low", "full", "empty", "enabled", "disabled", "written",
    "idle", "busy", "active", "inactive", "pending", "complete", "detected", "received", "valid", "reached",
    "sampled", "read", "expired", "overflows", "underflows",
];

const RELATION_WORDS: &[&str] = &[
    "reaches", "exceeds", "equals", "matches", "is", "are", "becomes", "contains", "holds", "enters", "leaves",
];

/// Values that are quantities, flags or prose rather than named things.
pub fn is_literal(value: &str) -> bool {
    let v = value.trim();
    let lower = v.to_lowercase();
    v.is_empty()
        || v.starts_with(|c: char| c.is_ascii_digit())
        || lower.starts_with("0x")
        || lower.starts_with("0b")
        || LITERAL_WORDS.contains(&lower.as_str())
        || v.split_whitespace().count() > 5
}

fn object_term(value: &str) -> Term {
    if is_literal(value) {
        Term::Literal(value.trim().to_string())
    } else {
        Term::Entity(canonical_entity(value))
    }
}

/// Turns one condition clause ("reset asserted", "RX FIFO reaches RXTH")
/// into subject, predicate and object.
fn qualifier(clause: &str) -> Option<(Term, String, Term)> {
    let words: Vec<&str> = clause.split_whitespace().collect();
    if words.is_empty() {
        return None;
    }
    if let Some(last) = words.last().map(|w| w.to_lowercase()) {
        if words.len() >= 2 && STATE_WORDS.contains(&last.as_str()) {
            let subject = words[..words.len() - 1].join(" ");
            return Some((Term::Entity(canonical_entity(&subject)), format!("{last}-when"), Term::Literal("true".into())));
        }
    }
    if let Some(i) = (1..words.len().saturating_sub(1)).find(|&i| RELATION_WORDS.contains(&words[i].to_lowercase().as_str())) {
        let subject = words[..i].join(" ");
        let object = words[i + 1..].join(" ");
        return Some((
            Term::Entity(canonical_entity(&subject)),
            format!("{}-when", words[i].to_lowercase()),
            object_term(&object),
        ));
    }
    Some((Term::Entity(canonical_entity(clause)), "holds-when".into(), Term::Literal("true".into())))
}

fn clauses(text: &str) -> Vec<String> {
    let t = text.trim();
    if t.is_empty() || t.eq_ignore_ascii_case("unconditional") {
        return Vec::new();
    }
    t.split(" and ").map(|c| c.trim().to_string()).filter(|c| !c.is_empty()).collect()
}

/// Backbone, auxiliary and linking triples for one IR. Normalization triples
/// need the whole corpus and come from [`normalization_triples`].
pub fn extract_triples(ir: &SemanticIr) -> Vec<Triple> {
    let src = ir.sentence_id.as_str();
    match &ir.payload {
        IrPayload::Declarative {
            central_entity,
            attributes,
        } => {
            let subject = Term::Entity(canonical_entity(central_entity));
            attributes
                .iter()
                .filter(|a| !a.name.trim().is_empty() && !a.value.trim().is_empty())
                .map(|a| Triple::new(TripleCategory::Backbone, subject.clone(), &a.name, object_term(&a.value), src))
                .collect()
        }
        IrPayload::Procedural {
            trigger,
            condition,
            action,
        } => {
            let object = if action.object.trim().is_empty() {
                Term::Literal("true".into())
            } else {
                object_term(&action.object)
            };
            let tb = Triple::new(
                TripleCategory::Backbone,
                Term::Entity(canonical_entity(&action.subject)),
                &action.verb,
                object,
                src,
            );
            let mut out = vec![tb.clone()];
            let mut seen = BTreeSet::new();
            for clause in clauses(trigger).into_iter().chain(clauses(condition)) {
                let Some((s, p, o)) = qualifier(&clause) else { continue };
                let ta = Triple::new(TripleCategory::Auxiliary, s, &p, o, src);
                if !seen.insert(ta.triple_id.clone()) {
                    continue;
                }
                let tl = Triple::new(
                    TripleCategory::Linking,
                    Term::Triple(tb.triple_id.clone()),
                    "qualified_by",
                    Term::Triple(ta.triple_id.clone()),
                    src,
                );
                out.push(ta);
                out.push(tl);
            }
            out
        }
    }
}

const ABBREVIATIONS: &[(&str, &str)] = &[
    ("reg", "register"),
    ("regs", "registers"),
    ("addr", "address"),
    ("intr", "interrupt"),
    ("cntr", "counter"),
    ("cfg", "configuration"),
];

fn expand_abbreviations(key: &str) -> String {
    key.split(' ')
        .map(|w| ABBREVIATIONS.iter().find(|(a, _)| *a == w).map_or(w, |(_, full)| full))
        .collect::<Vec<_>>()
        .join(" ")
}

fn is_token_suffix(short: &str, long: &str) -> bool {
    long.len() > short.len() && long.ends_with(short) && long.as_bytes()[long.len() - short.len() - 1] == b' '
}

/// Alias triples over the corpus entity set.
///
/// A variant maps to a longer form when (a) expanding abbreviations turns it
/// into another corpus entity, or (b) it is a strict token suffix of other
/// entities that all nest inside each other; the target is the longest one.
/// Each triple's source is the first sentence that mentions the variant.
pub fn normalization_triples(triples: &[Triple]) -> Vec<Triple> {
    let mut first_source: BTreeMap<&str, &str> = BTreeMap::new();
    for t in triples {
        for e in t.entities() {
            first_source.entry(e).or_insert(t.source.as_str());
        }
    }
    let entities: Vec<&str> = first_source.keys().copied().collect();
    let mut out = Vec::new();
    for &variant in &entities {
        let expanded = expand_abbreviations(variant);
        let target = if expanded != variant && first_source.contains_key(expanded.as_str()) {
            Some(expanded)
        } else {
            let mut containers: Vec<&str> = entities.iter().copied().filter(|e| is_token_suffix(variant, e)).collect();
            containers.sort_by_key(|e| e.len());
            let nested = containers.windows(2).all(|w| is_token_suffix(w[0], w[1]));
            match containers.last() {
                Some(longest) if nested && variant.contains(' ') => Some(longest.to_string()),
                _ => None,
            }
        };
        if let Some(canonical) = target {
            out.push(Triple::new(
                TripleCategory::Normalization,
                Term::Entity(variant.to_string()),
                "canonical_form",
                Term::Entity(canonical),
                first_source[variant],
            ));
        }
    }
    out
}
