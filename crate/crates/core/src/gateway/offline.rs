//! Deterministic offline provider.
//!
//! [`OfflineModel`] answers every pipeline task with rule-based text
//! processing, optionally overridden by a hand-authored script of canned
//! replies. Embeddings come from signed feature hashing. It is the backend
//! used to record the in-repo fixtures and lets the whole pipeline run with
//! no network.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest as _, Sha256};

use super::{tasks, ChatRequest, Provider, ProviderError};
use crate::ingest::split_sentences;
use crate::prompts::{parse_passages, section, sections, PassageBlock};
use crate::text::{canonical_entity, content_tokens};

pub const OFFLINE_CHAT_MODEL: &str = "offline-rules-v1";
pub const OFFLINE_EMBEDDING_MODEL: &str = "offline-hash-256";
const EMBED_DIM: usize = 256;

/// A canned reply used when every `all` needle occurs in the user prompt and
/// no `none` needle does. The first matching rule wins.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptRule {
    pub task: String,
    #[serde(default)]
    pub all: Vec<String>,
    #[serde(default)]
    pub none: Vec<String>,
    pub reply: Value,
}

impl ScriptRule {
    fn matches(&self, req: &ChatRequest) -> bool {
        self.task == req.task_tag
            && self.all.iter().all(|n| req.user_prompt.contains(n.as_str()))
            && !self.none.iter().any(|n| req.user_prompt.contains(n.as_str()))
    }

    fn reply_text(&self) -> String {
        match &self.reply {
            Value::String(s) => s.clone(),
            other => other.to_string(),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct OfflineModel {
    script: Vec<ScriptRule>,
}

impl OfflineModel {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_script(script: Vec<ScriptRule>) -> Self {
        Self { script }
    }

    /// Loads a JSON array of [`ScriptRule`]s.
    pub fn from_script_file(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        let script: Vec<ScriptRule> = serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))?;
        Ok(Self { script })
    }

    pub fn respond(&self, req: &ChatRequest) -> String {
        if let Some(rule) = self.script.iter().find(|r| r.matches(req)) {
            return rule.reply_text();
        }
        let s = sections(&req.user_prompt);
        match req.task_tag.as_str() {
            tasks::CLASSIFY => {
                let sentence = section(&s, "Sentence").unwrap_or("");
                json!({ "kind": classify(sentence) }).to_string()
            }
            tasks::IR_EXTRACT => {
                let sentence = section(&s, "Sentence").unwrap_or("");
                let passage = section(&s, "Passage").unwrap_or("");
                let kind = section(&s, "Kind").unwrap_or("declarative");
                extract(sentence, kind, passage).to_string()
            }
            tasks::SUMMARIZE => {
                let query = section(&s, "Query").unwrap_or("");
                let passages = parse_passages(section(&s, "Passages").unwrap_or(""));
                extractive_summary(query, &passages, 3).unwrap_or_else(|| "No relevant evidence.".into())
            }
            tasks::REASON => {
                let question = section(&s, "Question").unwrap_or("");
                let context = parse_passages(section(&s, "Context").unwrap_or(""));
                reason(question, &context).to_string()
            }
            tasks::SYNTHESIZE => {
                let question = section(&s, "Question").unwrap_or("");
                let context = parse_passages(section(&s, "Context").unwrap_or(""));
                extractive_summary(question, &context, 3)
                    .unwrap_or_else(|| "The available context does not answer the question.".into())
            }
            tasks::ATOM_DECOMPOSE => json!({ "atoms": decompose(section(&s, "Answer").unwrap_or("")) }).to_string(),
            tasks::ATOM_MATCH => {
                let candidate = section(&s, "Candidate fact").unwrap_or("");
                let refs = numbered_items(section(&s, "Reference facts").unwrap_or(""));
                judge(candidate, &refs).to_string()
            }
            _ => String::new(),
        }
    }
}

impl Provider for OfflineModel {
    fn chat(&self, _model: &str, req: &ChatRequest) -> Result<String, ProviderError> {
        Ok(self.respond(req))
    }

    fn embed(&self, _model: &str, texts: &[String]) -> Result<Vec<Vec<f32>>, ProviderError> {
        Ok(texts.iter().map(|t| hash_embedding(t)).collect())
    }
}

// ---------------------------------------------------------------------------
// embeddings

fn feature_slot(feature: &str) -> (usize, f32) {
    let h = Sha256::digest(feature.as_bytes());
    let idx = u32::from_le_bytes([h[0], h[1], h[2], h[3]]) as usize % (EMBED_DIM - 1) + 1;
    let sign = if h[4] & 1 == 0 { 1.0 } else { -1.0 };
    (idx, sign)
}

/// Signed feature hashing over content words (weight 1) and their character
/// trigrams (weight 0.25). Slot 0 carries a small constant so the vector is
/// never zero.
pub fn hash_embedding(text: &str) -> Vec<f32> {
    let mut v = vec![0f32; EMBED_DIM];
    v[0] = 0.01;
    let mut words = content_tokens(text);
    if words.is_empty() {
        words = crate::text::tokens(text);
    }
    for w in &words {
        let (i, s) = feature_slot(&format!("w:{w}"));
        v[i] += s;
        let padded: Vec<char> = format!("^{w}$").chars().collect();
        for tri in padded.windows(3) {
            let t: String = tri.iter().collect();
            let (i, s) = feature_slot(&format!("c:{t}"));
            v[i] += 0.25 * s;
        }
    }
    v
}

// ---------------------------------------------------------------------------
// sentence analysis

const TRIGGER_MARKERS: &[&str] = &["when", "whenever", "if", "once", "after", "upon", "while", "before", "on"];

const ACTION_VERBS: &[&str] = &[
    "asserts", "deasserts", "returns", "transitions", "enters", "leaves", "sets", "clears", "drives", "generates",
    "raises", "samples", "latches", "increments", "decrements", "resets", "loads", "stops", "starts", "signals",
    "wakes", "forwards", "shifts", "pushes", "pops", "transmits", "sends", "receives", "issues", "updates",
    "triggers", "propagates", "captures", "waits", "moves", "requests", "acknowledges", "flushes", "halts",
    "resumes", "restarts", "releases", "gates", "routes", "toggles", "writes", "reads", "outputs", "fires",
    "switches", "aborts", "discards",
];

const STATIC_VERBS: &[&str] = &[
    "is", "are", "has", "have", "contains", "holds", "provides", "comprises", "consists", "includes", "resides",
    "occupies", "defines", "selects", "controls", "reports", "indicates", "determines", "uses", "belongs", "equals",
    "stores", "connects", "feeds", "divides", "masks", "enables", "disables", "supports", "implements", "exposes",
    "measures", "specifies", "counts", "reaches", "exceeds", "becomes", "remains", "combines", "supplies",
    "receives", "depends", "serves", "requires", "allows", "produces", "limits", "sets",
];

const PARTICLES: &[&str] = &["to", "into", "from", "on", "at", "in", "of", "with", "for", "as", "by"];

const STATE_WORDS: &[&str] = &[
    "asserted", "deasserted", "set", "cleared", "high", "low", "full", "empty", "enabled", "disabled", "written",
    "idle", "busy", "active", "inactive", "pending", "complete", "detected", "received", "valid", "reached",
];

const ADVERBS: &[&str] = &["also", "then", "only", "still", "now", "always", "never", "immediately"];

const AUXILIARIES: &[&str] = &["is", "are", "was", "were", "becomes", "goes", "has", "been", "be", "gets"];

fn clean(tok: &str) -> &str {
    tok.trim_matches(|c: char| matches!(c, ',' | ';' | ':' | '.' | '!' | '?' | '(' | ')' | '"' | '`'))
}

fn is_verb(tok: &str) -> bool {
    let t = clean(tok).to_lowercase();
    ACTION_VERBS.contains(&t.as_str()) || STATIC_VERBS.contains(&t.as_str())
}

fn strip_article(words: &[&str]) -> String {
    let mut w = words;
    while let Some(first) = w.first() {
        if matches!(first.to_lowercase().as_str(), "the" | "a" | "an") {
            w = &w[1..];
        } else {
            break;
        }
    }
    w.iter().map(|t| clean(t)).filter(|t| !t.is_empty()).collect::<Vec<_>>().join(" ")
}

struct Clause {
    subject: String,
    verb: String,
    object: String,
}

/// Splits "the FSM returns to IDLE" into subject / verb phrase / object.
fn split_clause(text: &str) -> Option<Clause> {
    let words: Vec<&str> = text.split_whitespace().collect();
    let vi = (1..words.len()).find(|&i| is_verb(words[i]))?;
    let mut verb = clean(words[vi]).to_lowercase();
    let mut rest = vi + 1;
    // "is asserted", "is set to", "returns to"
    if AUXILIARIES.contains(&verb.as_str()) {
        if let Some(next) = words.get(rest) {
            let n = clean(next).to_lowercase();
            if n.ends_with("ed") || STATE_WORDS.contains(&n.as_str()) {
                if words.len() == rest + 1 {
                    // "reset is asserted": state is the object
                } else {
                    verb = format!("{verb} {n}");
                    rest += 1;
                }
            }
        }
    }
    if let Some(next) = words.get(rest) {
        let n = clean(next).to_lowercase();
        if PARTICLES.contains(&n.as_str()) && words.len() > rest + 1 {
            verb = format!("{verb} {n}");
            rest += 1;
        }
    }
    let mut head = &words[..vi];
    // "the aggregator also asserts"
    while let Some((last, init)) = head.split_last() {
        if init.is_empty() || !ADVERBS.contains(&clean(last).to_lowercase().as_str()) {
            break;
        }
        head = init;
    }
    let subject = strip_article(head);
    let object = strip_article(&words[rest..]);
    if subject.is_empty() {
        return None;
    }
    Some(Clause { subject, verb, object })
}

fn leading_marker(sentence: &str) -> Option<&'static str> {
    let first = sentence.split_whitespace().next()?.to_lowercase();
    let first = clean(&first).to_string();
    TRIGGER_MARKERS
        .iter()
        .copied()
        .find(|m| *m == first)
        .filter(|m| *m != "on" || sentence.contains(", "))
}

fn is_table_row(s: &str) -> bool {
    s.trim_start().starts_with('|')
}

fn classify(sentence: &str) -> &'static str {
    let s = sentence.trim();
    if is_table_row(s) || s.starts_with("```") {
        return "declarative";
    }
    if leading_marker(s).is_some() {
        return "procedural";
    }
    let lower = format!(" {} ", s.to_lowercase());
    if [" when ", " whenever ", " if ", " once ", " until "].iter().any(|m| lower.contains(m)) {
        return "procedural";
    }
    let words: Vec<&str> = s.split_whitespace().collect();
    match (1..words.len()).find(|&i| is_verb(words[i])) {
        Some(i) if ACTION_VERBS.contains(&clean(words[i]).to_lowercase().as_str()) => "procedural",
        _ => "declarative",
    }
}

fn normalize_condition(text: &str) -> String {
    text.split_whitespace()
        .map(clean)
        .filter(|w| !w.is_empty())
        .filter(|w| !AUXILIARIES.contains(&w.to_lowercase().as_str()))
        .filter(|w| !matches!(w.to_lowercase().as_str(), "the" | "a" | "an"))
        .collect::<Vec<_>>()
        .join(" ")
}

fn skip(reason: &str) -> Value {
    json!({ "kind": "skip", "reason": reason })
}

fn table_cells(row: &str) -> Vec<String> {
    let t = row.trim().trim_matches('|');
    t.split('|').map(|c| c.trim().trim_matches('`').to_string()).collect()
}

fn extract_table_row(row: &str, passage_text: &str) -> Value {
    let lines: Vec<&str> = passage_text.lines().map(str::trim).collect();
    let Some(pos) = lines.iter().position(|l| *l == row.trim()) else {
        return skip("row not found in passage");
    };
    let is_rule = |l: &str| l.starts_with('|') && l.chars().all(|c| matches!(c, '|' | '-' | ':' | ' '));
    if lines.get(pos + 1).is_some_and(|l| is_rule(l)) {
        return skip("table header");
    }
    // header = the row directly above the rule that precedes this row
    let header = (0..pos)
        .rev()
        .find(|&i| is_rule(lines[i]))
        .and_then(|r| r.checked_sub(1))
        .map(|h| table_cells(lines[h]));
    let cells = table_cells(row);
    let Some(entity) = cells.first().filter(|c| !c.is_empty()) else {
        return skip("empty row");
    };
    let attributes: Vec<Value> = cells
        .iter()
        .enumerate()
        .skip(1)
        .filter(|(_, v)| !v.is_empty())
        .map(|(i, v)| {
            let name = header
                .as_ref()
                .and_then(|h| h.get(i))
                .map(|h| h.to_lowercase())
                .unwrap_or_else(|| format!("column {i}"));
            json!({ "name": name, "value": v })
        })
        .collect();
    json!({ "kind": "declarative", "central_entity": entity, "attributes": attributes })
}

fn extract_declarative(sentence: &str) -> Value {
    let s = sentence.trim().trim_end_matches('.');
    // "`NAME`: description" list items
    if let Some((head, tail)) = s.split_once(": ") {
        if head.split_whitespace().count() <= 4 && !head.is_empty() {
            return json!({
                "kind": "declarative",
                "central_entity": head.trim_matches('`'),
                "attributes": [{ "name": "description", "value": tail.trim() }],
            });
        }
    }
    let Some(first) = split_clause(s) else {
        return skip("no verb found");
    };
    let mut attributes = Vec::new();
    // "is 32 bits wide and resides at offset 0x00"
    let mut pieces: Vec<String> = Vec::new();
    let mut cur: Vec<&str> = Vec::new();
    let words: Vec<&str> = s.split_whitespace().collect();
    let verb_at = (1..words.len()).find(|&i| is_verb(words[i])).unwrap_or(0);
    let mut i = verb_at;
    while i < words.len() {
        if words[i] == "and" && words.get(i + 1).is_some_and(|w| is_verb(w)) {
            pieces.push(cur.join(" "));
            cur.clear();
        } else {
            cur.push(words[i]);
        }
        i += 1;
    }
    pieces.push(cur.join(" "));
    for (n, piece) in pieces.iter().enumerate() {
        let clause = if n == 0 {
            Some(Clause {
                subject: first.subject.clone(),
                verb: first.verb.clone(),
                object: first.object.clone(),
            })
        } else {
            split_clause(&format!("{} {piece}", first.subject))
        };
        if let Some(c) = clause {
            let object = if n == 0 && pieces.len() > 1 {
                // the first clause's object stops at the split point
                split_clause(&format!("{} {}", first.subject, pieces[0]))
                    .map(|c| c.object)
                    .unwrap_or(c.object)
            } else {
                c.object
            };
            if !object.is_empty() {
                attributes.push(json!({ "name": c.verb, "value": object }));
            }
        }
    }
    json!({ "kind": "declarative", "central_entity": first.subject, "attributes": attributes })
}

fn extract_procedural(sentence: &str) -> Value {
    let s = sentence.trim().trim_end_matches('.');
    let (trigger_text, main) = if let Some(marker) = leading_marker(s) {
        let body = s.split_whitespace().skip(1).collect::<Vec<_>>().join(" ");
        match body.split_once(", ") {
            Some((t, m)) => (t.to_string(), m.to_string()),
            None => return skip(&format!("no main clause after `{marker}`")),
        }
    } else {
        let lower = s.to_lowercase();
        let found = [" when ", " whenever ", " if ", " once ", " after ", " until "]
            .iter()
            .filter_map(|m| lower.find(m).map(|p| (p, m.len())))
            .min();
        match found {
            Some((p, len)) => (s[p + len..].to_string(), s[..p].trim_end_matches(',').to_string()),
            None => ("unconditional".to_string(), s.to_string()),
        }
    };
    let mut parts = trigger_text.splitn(2, " and ");
    let trigger = normalize_condition(parts.next().unwrap_or(""));
    let condition = parts.next().map(normalize_condition).unwrap_or_default();
    // keep only the first action of a chained main clause
    let first_action = main.split(" and ").next().unwrap_or(&main);
    let Some(action) = split_clause(first_action) else {
        return skip("no action clause");
    };
    if trigger.is_empty() {
        return skip("empty trigger");
    }
    json!({
        "kind": "procedural",
        "trigger": trigger,
        "condition": condition,
        "action": { "subject": action.subject, "verb": action.verb, "object": action.object },
    })
}

fn extract(sentence: &str, kind: &str, passage: &str) -> Value {
    let s = sentence.trim();
    if s.is_empty() {
        return skip("empty sentence");
    }
    let first = s.split_whitespace().next().unwrap_or("").to_lowercase();
    if (first == "figure" || first == "table") && s.split_whitespace().nth(1).is_some_and(|w| w.starts_with(|c: char| c.is_ascii_digit())) {
        return skip("caption");
    }
    if s.starts_with("```") {
        return skip("code block");
    }
    let passage_text = parse_passages(passage).into_iter().next().map(|p| p.text).unwrap_or_default();
    if is_table_row(s) {
        return extract_table_row(s, &passage_text);
    }
    if s.split_whitespace().count() < 3 {
        return skip("too short");
    }
    match kind {
        "procedural" => match extract_procedural(s) {
            v if v["kind"] == "skip" => extract_declarative(s),
            v => v,
        },
        _ => extract_declarative(s),
    }
}

// ---------------------------------------------------------------------------
// summaries, reasoning, atoms

fn sentence_texts(text: &str) -> Vec<String> {
    text.split("\n\n")
        .flat_map(|para| {
            if para.lines().all(|l| l.trim_start().starts_with(['|', '-', '*'])) {
                para.lines().map(|l| l.trim().to_string()).collect::<Vec<_>>()
            } else {
                split_sentences(para, 0, para.len())
                    .into_iter()
                    .map(|sp| para[sp.start..sp.end].split_whitespace().collect::<Vec<_>>().join(" "))
                    .collect()
            }
        })
        .filter(|s| !s.is_empty())
        .collect()
}

/// Top-`n` sentences by distinct content-word overlap with `query`, highest
/// first, ties in document order.
fn extractive_summary(query: &str, passages: &[PassageBlock], n: usize) -> Option<String> {
    let q: std::collections::BTreeSet<String> = content_tokens(query).into_iter().collect();
    let mut scored: Vec<(usize, usize, String)> = Vec::new();
    let mut seen = std::collections::BTreeSet::new();
    for p in passages {
        for s in sentence_texts(&p.text) {
            if !seen.insert(s.clone()) {
                continue;
            }
            let toks: std::collections::BTreeSet<String> = content_tokens(&s).into_iter().collect();
            let score = toks.intersection(&q).count();
            if score > 0 {
                scored.push((score, scored.len(), s));
            }
        }
    }
    if scored.is_empty() {
        return None;
    }
    scored.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    Some(scored.into_iter().take(n).map(|(_, _, s)| s).collect::<Vec<_>>().join(" "))
}

fn guess_anchor(question: &str) -> Value {
    let kind = classify(question);
    let words: Vec<&str> = question.split_whitespace().map(clean).collect();
    let code_like = words
        .iter()
        .filter(|w| w.contains('_') || w.contains('.') || (w.len() >= 2 && w.chars().all(|c| c.is_ascii_uppercase() || c.is_ascii_digit())))
        .max_by_key(|w| w.len());
    let entity = code_like
        .map(|w| canonical_entity(w))
        .or_else(|| content_tokens(question).into_iter().next())
        .unwrap_or_else(|| "specification".into());
    json!({ "csa_type": kind, "entity": entity })
}

fn reason(question: &str, context: &[PassageBlock]) -> Value {
    if context.is_empty() {
        json!({
            "thought": "No specification evidence has been gathered yet.",
            "status": "gap",
            "gap_description": "The context holds no passages relevant to the question.",
            "sub_query": question,
            "target_anchor": guess_anchor(question),
        })
    } else {
        json!({
            "thought": format!("{} passage(s) in context address the question.", context.len()),
            "status": "sufficient",
        })
    }
}

fn subject_prefix(clause: &str) -> Option<String> {
    let words: Vec<&str> = clause.split_whitespace().collect();
    let vi = (1..words.len()).find(|&i| is_verb(words[i]))?;
    Some(words[..vi].join(" "))
}

fn normalize_atom(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

/// Splits an answer into single claims: sentences, then `; ` and
/// `and <verb>` coordination (the subject is carried over).
fn decompose(answer: &str) -> Vec<String> {
    let mut atoms: Vec<String> = Vec::new();
    let mut seen = std::collections::BTreeSet::new();
    for sentence in sentence_texts(answer) {
        for part in sentence.split("; ") {
            let part = part.trim().trim_end_matches(['.', '!']).trim();
            if part.is_empty() {
                continue;
            }
            let words: Vec<&str> = part.split_whitespace().collect();
            let subject = subject_prefix(part);
            let mut clauses: Vec<String> = Vec::new();
            let mut cur: Vec<&str> = Vec::new();
            for (i, w) in words.iter().enumerate() {
                let splits = (*w == "and" || *w == "and,")
                    && subject.is_some()
                    && words.get(i + 1).is_some_and(|n| is_verb(n));
                if splits {
                    clauses.push(cur.join(" ").trim_end_matches(',').to_string());
                    cur.clear();
                } else {
                    cur.push(w);
                }
            }
            clauses.push(cur.join(" "));
            for (i, c) in clauses.into_iter().enumerate() {
                let atom = match (&subject, i) {
                    (Some(sub), i) if i > 0 => format!("{sub} {c}"),
                    _ => c,
                };
                if seen.insert(normalize_atom(&atom)) {
                    atoms.push(atom);
                }
            }
        }
    }
    atoms
}

fn numbered_items(body: &str) -> Vec<(usize, String)> {
    body.lines()
        .filter_map(|l| {
            let (n, rest) = l.trim().split_once(". ")?;
            Some((n.parse().ok()?, rest.trim().to_string()))
        })
        .collect()
}

fn jaccard(a: &str, b: &str) -> f64 {
    let a: std::collections::BTreeSet<String> = content_tokens(a).into_iter().collect();
    let b: std::collections::BTreeSet<String> = content_tokens(b).into_iter().collect();
    if a.is_empty() && b.is_empty() {
        return 1.0;
    }
    let inter = a.intersection(&b).count() as f64;
    inter / a.union(&b).count() as f64
}

fn judge(candidate: &str, refs: &[(usize, String)]) -> Value {
    let best = refs
        .iter()
        .map(|(i, r)| (*i, jaccard(candidate, r)))
        .fold(None::<(usize, f64)>, |acc, (i, s)| match acc {
            Some((_, bs)) if bs >= s => acc,
            _ => Some((i, s)),
        });
    match best {
        Some((i, s)) if s >= 0.75 => json!({ "equivalent": true, "reference_index": i }),
        _ => json!({ "equivalent": false, "reference_index": null }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn classifies_reference_sentences() {
        assert_eq!(classify("The CTRL register contains an 8-bit prescaler field."), "declarative");
        assert_eq!(classify("When reset is asserted, the FSM returns to IDLE."), "procedural");
        assert_eq!(classify("| CTRL | 0x00 | Control |"), "declarative");
        assert_eq!(classify("The UART asserts rx_thr_irq."), "procedural");
    }

    #[test]
    fn procedural_ir_has_trigger_and_action() {
        let v = extract_procedural("When reset is asserted, the FSM returns to IDLE.");
        assert_eq!(
            v,
            json!({"kind": "procedural", "trigger": "reset asserted", "condition": "",
                   "action": {"subject": "FSM", "verb": "returns to", "object": "IDLE"}})
        );
        let v = extract_procedural("If IER.RXIE is set and rx_thr_irq is asserted, the interrupt controller asserts uart_irq.");
        assert_eq!(v["trigger"], "IER.RXIE set");
        assert_eq!(v["condition"], "rx_thr_irq asserted");
        assert_eq!(v["action"]["subject"], "interrupt controller");
        assert_eq!(v["action"]["object"], "uart_irq");
        let v = extract_procedural("The FSM enters STOP when the last data bit is sampled.");
        assert_eq!(v["trigger"], "last data bit sampled");
        assert_eq!(v["action"]["verb"], "enters");
    }

    #[test]
    fn declarative_ir_lists_attributes() {
        let v = extract_declarative("The CTRL register contains a prescaler field.");
        assert_eq!(
            v,
            json!({"kind": "declarative", "central_entity": "CTRL register",
                   "attributes": [{"name": "contains", "value": "prescaler field"}]})
        );
        let v = extract_declarative("The STATUS register is 32 bits wide and resides at offset 0x04.");
        assert_eq!(v["attributes"].as_array().unwrap().len(), 2);
        assert_eq!(v["attributes"][0]["value"], "32 bits wide");
        assert_eq!(v["attributes"][1], json!({"name": "resides at", "value": "offset 0x04"}));
    }

    #[test]
    fn table_rows_use_the_header() {
        let passage = "| Name | Offset | Reset |\n|---|---|---|\n| CTRL | 0x00 | 0x0000 |";
        assert_eq!(extract_table_row("| Name | Offset | Reset |", passage)["kind"], "skip");
        let v = extract_table_row("| CTRL | 0x00 | 0x0000 |", passage);
        assert_eq!(v["central_entity"], "CTRL");
        assert_eq!(v["attributes"][0], json!({"name": "offset", "value": "0x00"}));
        assert_eq!(v["attributes"][1], json!({"name": "reset", "value": "0x0000"}));
    }

    #[test]
    fn captions_and_fragments_are_skipped() {
        assert_eq!(extract("Figure 3: Block diagram.", "declarative", "")["kind"], "skip");
        assert_eq!(extract("", "declarative", "")["kind"], "skip");
        assert_eq!(extract("Overview.", "declarative", "")["kind"], "skip");
    }

    #[test]
    fn decomposition_splits_coordinated_claims() {
        assert_eq!(
            decompose("The FSM has 3 states and resets to IDLE."),
            vec!["The FSM has 3 states", "The FSM resets to IDLE"]
        );
        assert_eq!(decompose("The FSM has 3 states."), vec!["The FSM has 3 states"]);
        assert_eq!(
            decompose("The FSM has 3 states. The FSM has 3 states."),
            vec!["The FSM has 3 states"]
        );
    }

    #[test]
    fn judge_matches_near_identical_atoms_only() {
        let refs = vec![(0, "The FSM has 3 states".to_string()), (1, "The FSM resets to IDLE".to_string())];
        assert_eq!(judge("the FSM resets to IDLE", &refs), json!({"equivalent": true, "reference_index": 1}));
        assert_eq!(judge("The DMA engine is idle", &refs)["equivalent"], false);
    }

    #[test]
    fn hash_embedding_is_deterministic_and_never_zero() {
        assert_eq!(hash_embedding("uart_irq"), hash_embedding("uart_irq"));
        assert!(hash_embedding("the").iter().any(|&x| x != 0.0));
        assert!(hash_embedding("??").iter().any(|&x| x != 0.0));
        let a = hash_embedding("RX FIFO threshold interrupt");
        let b = hash_embedding("RX FIFO threshold");
        let c = hash_embedding("power manager wake");
        assert!(crate::gateway::cosine(&a, &b) > crate::gateway::cosine(&a, &c));
    }

    #[test]
    fn script_rules_take_precedence() {
        let m = OfflineModel::with_script(vec![ScriptRule {
            task: "synthesize".into(),
            all: vec!["cpu_wake".into()],
            none: vec!["never".into()],
            reply: Value::String("scripted".into()),
        }]);
        let req = ChatRequest::new("synthesize", "s", "## Question\nwho drives cpu_wake?");
        assert_eq!(m.respond(&req), "scripted");
        let req = ChatRequest::new("synthesize", "s", "## Question\nnever cpu_wake");
        assert_ne!(m.respond(&req), "scripted");
    }
}
