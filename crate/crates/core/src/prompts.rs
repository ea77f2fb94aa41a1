//! Prompt layout shared by every pipeline step.
//!
//! User prompts are a sequence of `## Label` sections. Passages are wrapped
//! in `<passage id=".." section="..">` tags so both a hosted model and the
//! offline model can find their boundaries.

use std::fmt::Write as _;

#[derive(Debug, Default)]
pub struct Prompt {
    out: String,
}

impl Prompt {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn section(mut self, label: &str, body: &str) -> Self {
        if !self.out.is_empty() {
            self.out.push_str("\n\n");
        }
        let _ = write!(self.out, "## {label}\n{}", body.trim_end());
        self
    }

    pub fn build(self) -> String {
        self.out
    }
}

/// Splits a prompt into `(label, body)` pairs in order.
pub fn sections(prompt: &str) -> Vec<(String, String)> {
    let mut out: Vec<(String, String)> = Vec::new();
    for line in prompt.lines() {
        if let Some(label) = line.strip_prefix("## ") {
            out.push((label.trim().to_string(), String::new()));
        } else if let Some((_, body)) = out.last_mut() {
            if !body.is_empty() {
                body.push('\n');
            }
            body.push_str(line);
        }
    }
    for (_, body) in &mut out {
        let trimmed = body.trim().to_string();
        *body = trimmed;
    }
    out
}

pub fn section<'a>(sections: &'a [(String, String)], label: &str) -> Option<&'a str> {
    sections.iter().find(|(l, _)| l == label).map(|(_, b)| b.as_str())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PassageBlock {
    pub id: String,
    pub section: String,
    pub text: String,
}

fn escape_attr(s: &str) -> String {
    s.replace('"', "'").replace('>', "&gt;")
}

fn unescape_attr(s: &str) -> String {
    s.replace("&gt;", ">")
}

pub fn render_passage(id: &str, section_path: &[String], text: &str) -> String {
    format!(
        "<passage id=\"{}\" section=\"{}\">\n{}\n</passage>",
        escape_attr(id),
        escape_attr(&section_path.join(" > ")),
        text.trim()
    )
}

pub fn parse_passages(body: &str) -> Vec<PassageBlock> {
    let mut out = Vec::new();
    let mut rest = body;
    while let Some(open) = rest.find("<passage ") {
        let after = &rest[open..];
        let Some(tag_end) = after.find('>') else { break };
        let tag = &after[..tag_end];
        let Some(close) = after.find("</passage>") else { break };
        let attr = |name: &str| -> String {
            let key = format!("{name}=\"");
            tag.find(&key)
                .map(|i| {
                    let v = &tag[i + key.len()..];
                    unescape_attr(&v[..v.find('"').unwrap_or(v.len())])
                })
                .unwrap_or_default()
        };
        out.push(PassageBlock {
            id: attr("id"),
            section: attr("section"),
            text: after[tag_end + 1..close].trim().to_string(),
        });
        rest = &after[close + "</passage>".len()..];
    }
    out
}
