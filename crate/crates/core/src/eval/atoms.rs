//! Atomic-fact decomposition and judged matching.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::metrics::score;
use crate::gateway::schema::{AtomsReply, VerdictReply};
use crate::gateway::{tasks, ChatRequest, Gateway, GatewayError, SchemaId};
use crate::prompts::Prompt;

const DECOMPOSE_SYSTEM: &str = "Split the answer into minimal, self-contained atomic facts. \
Each fact is one declarative claim that names its subject explicitly. Reply with JSON only.";

const JUDGE_SYSTEM: &str = "Decide whether the candidate fact states the same thing as one of the reference facts. \
Paraphrases count; a fact that adds, drops or changes a detail does not. Reply with JSON only.";

fn normalized(atom: &str) -> String {
    atom.split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .trim_end_matches(['.', ';'])
        .to_lowercase()
}

/// Atomic facts of `answer`, deduplicated by normalized text. An empty
/// answer has no atoms.
pub fn decompose(gateway: &Gateway, answer: &str, temperature: f64, sample_index: u32) -> Result<Vec<String>, GatewayError> {
    if answer.trim().is_empty() {
        return Ok(Vec::new());
    }
    let prompt = Prompt::new()
        .section("Answer", answer)
        .section("Reply format", SchemaId::Atoms.format_hint())
        .build();
    let req = ChatRequest::new(tasks::ATOM_DECOMPOSE, DECOMPOSE_SYSTEM, prompt)
        .temperature(temperature)
        .schema(SchemaId::Atoms)
        .sample(sample_index);
    let reply: AtomsReply = gateway.chat_structured(&req)?;
    let mut seen = BTreeSet::new();
    Ok(reply
        .atoms
        .into_iter()
        .map(|a| a.trim().to_string())
        .filter(|a| !a.is_empty() && seen.insert(normalized(a)))
        .collect())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub atom: String,
    /// Index into the reference atoms.
    pub reference: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub judge_error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AtomicScore {
    pub a_gen: Vec<String>,
    /// Indices into `a_gen`.
    pub matched: Vec<usize>,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub judge_log: Vec<Verdict>,
}

/// Judges generated atoms in order. Each sees only the reference atoms not
/// yet claimed, so a reference validates at most one generated atom. A
/// failed or out-of-range verdict leaves the atom unmatched.
pub fn match_atoms(
    gateway: &Gateway,
    a_gen: &[String],
    a_ref: &[String],
    temperature: f64,
    sample_index: u32,
) -> (Vec<usize>, Vec<Verdict>) {
    let mut used = vec![false; a_ref.len()];
    let mut matched = Vec::new();
    let mut log = Vec::new();
    for (gi, atom) in a_gen.iter().enumerate() {
        let open: Vec<usize> = (0..a_ref.len()).filter(|&i| !used[i]).collect();
        if open.is_empty() {
            log.push(Verdict {
                atom: atom.clone(),
                reference: None,
                judge_error: None,
            });
            continue;
        }
        let refs = open.iter().map(|&i| format!("{}. {}", i + 1, a_ref[i])).collect::<Vec<_>>().join("\n");
        let prompt = Prompt::new()
            .section("Candidate fact", atom)
            .section("Reference facts", &refs)
            .section("Reply format", SchemaId::AtomVerdict.format_hint())
            .build();
        let req = ChatRequest::new(tasks::ATOM_MATCH, JUDGE_SYSTEM, prompt)
            .temperature(temperature)
            .schema(SchemaId::AtomVerdict)
            .sample(sample_index);
        let verdict = match gateway.chat_structured::<VerdictReply>(&req) {
            Ok(VerdictReply {
                equivalent: true,
                reference_index: Some(n),
            }) => match n.checked_sub(1).filter(|i| open.contains(i)) {
                Some(i) => Verdict {
                    atom: atom.clone(),
                    reference: Some(i),
                    judge_error: None,
                },
                None => Verdict {
                    atom: atom.clone(),
                    reference: None,
                    judge_error: Some(format!("reference {n} is not an open reference")),
                },
            },
            Ok(_) => Verdict {
                atom: atom.clone(),
                reference: None,
                judge_error: None,
            },
            Err(e) => Verdict {
                atom: atom.clone(),
                reference: None,
                judge_error: Some(e.to_string()),
            },
        };
        if let Some(i) = verdict.reference {
            used[i] = true;
            matched.push(gi);
        }
        log.push(verdict);
    }
    (matched, log)
}

/// Decompose, match, score.
pub fn atomic_rouge(
    gateway: &Gateway,
    answer: &str,
    a_ref: &[String],
    temperature: f64,
    sample_index: u32,
) -> Result<AtomicScore, GatewayError> {
    let a_gen = decompose(gateway, answer, temperature, sample_index)?;
    let (matched, judge_log) = match_atoms(gateway, &a_gen, a_ref, temperature, sample_index);
    let (precision, recall, f1) = score(matched.len(), a_gen.len(), a_ref.len());
    Ok(AtomicScore {
        a_gen,
        matched,
        precision,
        recall,
        f1,
        judge_log,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::offline::{OfflineModel, ScriptRule};
    use crate::gateway::ModelRouting;
    use serde_json::json;
    use std::sync::Arc;

    fn gw(script: Vec<ScriptRule>) -> Gateway {
        Gateway::live(Arc::new(OfflineModel::with_script(script)), ModelRouting::default())
    }

    fn strings(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn decomposes_and_dedups() {
        let g = gw(vec![]);
        assert_eq!(
            decompose(&g, "The FSM has 3 states and resets to IDLE.", 0.2, 0).unwrap(),
            strings(&["The FSM has 3 states", "The FSM resets to IDLE"])
        );
        assert!(decompose(&g, "  ", 0.2, 0).unwrap().is_empty());
    }

    #[test]
    fn identical_sets_match_fully() {
        let g = gw(vec![]);
        let atoms = strings(&["The FSM has 3 states", "The FSM resets to IDLE"]);
        let s = atomic_rouge(&g, "The FSM has 3 states and resets to IDLE.", &atoms, 0.2, 0).unwrap();
        assert_eq!(s.matched, vec![0, 1]);
        assert_eq!((s.precision, s.recall, s.f1), (1.0, 1.0, 1.0));
    }

    #[test]
    fn paraphrase_verdict_and_one_to_one() {
        let paraphrase = ScriptRule {
            task: tasks::ATOM_MATCH.into(),
            all: vec!["returns to the IDLE state".into(), "1. The FSM resets to IDLE".into()],
            none: vec![],
            reply: json!({"equivalent": true, "reference_index": 1}),
        };
        let g = gw(vec![paraphrase]);
        let refs = strings(&["The FSM resets to IDLE"]);
        let gen = strings(&["The FSM returns to the IDLE state", "The FSM returns to the IDLE state after reset"]);
        let (matched, log) = match_atoms(&g, &gen, &refs, 0.2, 0);
        assert_eq!(matched, vec![0]);
        // the second atom saw no open references
        assert_eq!(log[1].reference, None);
    }

    #[test]
    fn bad_judge_index_is_a_judge_error() {
        let liar = ScriptRule {
            task: tasks::ATOM_MATCH.into(),
            all: vec![],
            none: vec![],
            reply: json!({"equivalent": true, "reference_index": 7}),
        };
        let (matched, log) = match_atoms(&gw(vec![liar]), &strings(&["x y z"]), &strings(&["a b c"]), 0.2, 0);
        assert!(matched.is_empty());
        assert!(log[0].judge_error.is_some());
    }
}
