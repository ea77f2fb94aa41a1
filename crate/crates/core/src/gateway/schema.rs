//! Structured-output schemas and their validators.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::ChatRequest;
use crate::ingest::{CircuitSemanticAnchor, SentenceKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SchemaId {
    Freeform,
    SentenceKind,
    SemanticIr,
    GapAssessment,
    Atoms,
    AtomVerdict,
}

impl SchemaId {
    pub fn as_str(self) -> &'static str {
        match self {
            SchemaId::Freeform => "freeform",
            SchemaId::SentenceKind => "sentence-kind",
            SchemaId::SemanticIr => "semantic-ir",
            SchemaId::GapAssessment => "gap-assessment",
            SchemaId::Atoms => "atoms",
            SchemaId::AtomVerdict => "atom-verdict",
        }
    }

    /// Reply format description appended to prompts for this schema.
    pub fn format_hint(self) -> &'static str {
        match self {
            SchemaId::Freeform => "",
            SchemaId::SentenceKind => r#"{"kind": "declarative" | "procedural"}"#,
            SchemaId::SemanticIr => concat!(
                r#"{"kind": "declarative", "central_entity": str, "attributes": [{"name": str, "value": str}]}"#,
                " or ",
                r#"{"kind": "procedural", "trigger": str, "condition": str, "action": {"subject": str, "verb": str, "object": str}}"#,
                " or ",
                r#"{"kind": "skip", "reason": str}"#
            ),
            SchemaId::GapAssessment => concat!(
                r#"{"thought": str, "status": "sufficient" | "gap", "gap_description": str, "sub_query": str, "#,
                r#""target_anchor": {"csa_type": "declarative" | "procedural", "entity": str}} "#,
                "(gap_description, sub_query and target_anchor only when status is gap)"
            ),
            SchemaId::Atoms => r#"{"atoms": [str]}"#,
            SchemaId::AtomVerdict => r#"{"equivalent": bool, "reference_index": int | null}"#,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KindReply {
    pub kind: SentenceKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttributeWire {
    pub name: String,
    pub value: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionWire {
    pub subject: String,
    pub verb: String,
    pub object: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum IrReply {
    Declarative {
        central_entity: String,
        #[serde(default)]
        attributes: Vec<AttributeWire>,
    },
    Procedural {
        trigger: String,
        #[serde(default)]
        condition: String,
        action: ActionWire,
    },
    Skip {
        #[serde(default)]
        reason: String,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GapStatus {
    Sufficient,
    Gap,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapReply {
    pub thought: String,
    pub status: GapStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gap_description: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sub_query: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_anchor: Option<CircuitSemanticAnchor>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AtomsReply {
    pub atoms: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerdictReply {
    pub equivalent: bool,
    #[serde(default)]
    pub reference_index: Option<usize>,
}

/// Pulls the JSON object out of a reply, tolerating code fences and prose
/// around it.
pub fn extract_json(text: &str) -> Option<&str> {
    let start = text.find('{')?;
    let end = text.rfind('}')?;
    (end > start).then(|| &text[start..=end])
}

/// Parses `text` and checks it against `schema`. Returns the parsed value.
pub fn parse_and_validate(schema: SchemaId, text: &str) -> Result<Value, String> {
    if schema == SchemaId::Freeform {
        return Ok(Value::String(text.to_string()));
    }
    let json = extract_json(text).ok_or_else(|| "reply contains no JSON object".to_string())?;
    let value: Value = serde_json::from_str(json).map_err(|e| format!("invalid JSON: {e}"))?;
    validate(schema, &value)?;
    Ok(value)
}

pub fn validate(schema: SchemaId, value: &Value) -> Result<(), String> {
    fn typed<T: serde::de::DeserializeOwned>(v: &Value) -> Result<T, String> {
        serde_json::from_value(v.clone()).map_err(|e| e.to_string())
    }
    fn non_empty(field: &str, s: &str) -> Result<(), String> {
        if s.trim().is_empty() {
            Err(format!("`{field}` must be non-empty"))
        } else {
            Ok(())
        }
    }
    match schema {
        SchemaId::Freeform => Ok(()),
        SchemaId::SentenceKind => typed::<KindReply>(value).map(|_| ()),
        SchemaId::SemanticIr => match typed::<IrReply>(value)? {
            IrReply::Declarative {
                central_entity,
                attributes,
            } => {
                non_empty("central_entity", &central_entity)?;
                for a in &attributes {
                    non_empty("attributes[].name", &a.name)?;
                    non_empty("attributes[].value", &a.value)?;
                }
                Ok(())
            }
            IrReply::Procedural { trigger, action, .. } => {
                non_empty("trigger", &trigger)?;
                non_empty("action.subject", &action.subject)?;
                non_empty("action.verb", &action.verb)
            }
            IrReply::Skip { .. } => Ok(()),
        },
        SchemaId::GapAssessment => {
            let g: GapReply = typed(value)?;
            non_empty("thought", &g.thought)?;
            match g.status {
                GapStatus::Gap => {
                    non_empty("gap_description", g.gap_description.as_deref().unwrap_or(""))?;
                    non_empty("sub_query", g.sub_query.as_deref().unwrap_or(""))?;
                    let anchor = g.target_anchor.ok_or("`target_anchor` required when status is gap")?;
                    non_empty("target_anchor.entity", &anchor.entity)
                }
                GapStatus::Sufficient => {
                    if g.gap_description.is_some() || g.sub_query.is_some() || g.target_anchor.is_some() {
                        Err("gap fields present while status is sufficient".into())
                    } else {
                        Ok(())
                    }
                }
            }
        }
        SchemaId::Atoms => {
            let a: AtomsReply = typed(value)?;
            a.atoms.iter().try_for_each(|s| non_empty("atoms[]", s))
        }
        SchemaId::AtomVerdict => {
            let v: VerdictReply = typed(value)?;
            if v.equivalent && v.reference_index.is_none() {
                Err("`reference_index` required when equivalent is true".into())
            } else {
                Ok(())
            }
        }
    }
}

/// Follow-up request asking the model to fix an unusable structured reply.
pub fn repair_request(original: &ChatRequest, bad_reply: &str, reason: &str) -> ChatRequest {
    let mut req = original.clone();
    req.user_prompt = format!(
        "{}\n\n## Repair\nYour previous reply could not be used: {reason}\nPrevious reply:\n{bad_reply}\n\nReply again with only a JSON object of the form {}",
        original.user_prompt.trim_end(),
        original.response_schema_id.format_hint()
    );
    req
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn fenced_json_is_accepted() {
        let v = parse_and_validate(SchemaId::SentenceKind, "```json\n{\"kind\": \"declarative\"}\n```").unwrap();
        assert_eq!(v["kind"], "declarative");
    }

    #[test]
    fn ir_payload_must_match_kind() {
        let ok = json!({"kind": "procedural", "trigger": "reset asserted", "condition": "",
                        "action": {"subject": "FSM", "verb": "returns to", "object": "IDLE"}});
        assert!(validate(SchemaId::SemanticIr, &ok).is_ok());
        let mixed = json!({"kind": "procedural", "central_entity": "FSM", "attributes": []});
        assert!(validate(SchemaId::SemanticIr, &mixed).is_err());
        let empty_trigger = json!({"kind": "procedural", "trigger": " ",
                                   "action": {"subject": "FSM", "verb": "v", "object": ""}});
        assert!(validate(SchemaId::SemanticIr, &empty_trigger).is_err());
        let no_entity = json!({"kind": "declarative", "central_entity": "", "attributes": []});
        assert!(validate(SchemaId::SemanticIr, &no_entity).is_err());
    }

    #[test]
    fn gap_fields_present_exactly_when_gap() {
        let gap = json!({"thought": "t", "status": "gap", "gap_description": "d", "sub_query": "q",
                         "target_anchor": {"csa_type": "procedural", "entity": "fsm"}});
        assert!(validate(SchemaId::GapAssessment, &gap).is_ok());
        let missing = json!({"thought": "t", "status": "gap", "sub_query": "q"});
        assert!(validate(SchemaId::GapAssessment, &missing).is_err());
        let extra = json!({"thought": "t", "status": "sufficient", "sub_query": "q"});
        assert!(validate(SchemaId::GapAssessment, &extra).is_err());
        let ok = json!({"thought": "t", "status": "sufficient"});
        assert!(validate(SchemaId::GapAssessment, &ok).is_ok());
        let bad_type = json!({"thought": "t", "status": "gap", "gap_description": "d", "sub_query": "q",
                              "target_anchor": {"csa_type": "register", "entity": "fsm"}});
        assert!(validate(SchemaId::GapAssessment, &bad_type).is_err());
    }

    #[test]
    fn verdicts_and_atoms() {
        assert!(validate(SchemaId::AtomVerdict, &json!({"equivalent": true})).is_err());
        assert!(validate(SchemaId::AtomVerdict, &json!({"equivalent": true, "reference_index": 0})).is_ok());
        assert!(validate(SchemaId::AtomVerdict, &json!({"equivalent": false})).is_ok());
        assert!(validate(SchemaId::Atoms, &json!({"atoms": ["a", ""]})).is_err());
        assert!(parse_and_validate(SchemaId::Atoms, "no json here").is_err());
    }
}
