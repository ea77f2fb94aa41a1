//! Markdown/plain-text block parsing, sentence segmentation and passage packing.

use super::{IngestError, Passage, Span};
use crate::text::token_estimate;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum BlockKind {
    Paragraph,
    ListItem,
    TableRow,
    TableRule,
    Code,
}

#[derive(Debug, Clone)]
struct Block {
    kind: BlockKind,
    /// Byte range of the block in the document.
    start: usize,
    end: usize,
    /// Byte range of the block's content (list marker excluded).
    content_start: usize,
    section: usize,
}

/// Abbreviations that never end a sentence.
const ABBREVIATIONS: &[&str] = &[
    "e.g", "i.e", "etc", "vs", "fig", "figs", "sec", "no", "approx", "cf", "al", "eq", "ref", "max", "min", "reg",
    "resp", "incl",
];

fn heading(line: &str) -> Option<(usize, &str)> {
    let trimmed = line.trim_start();
    let level = trimmed.chars().take_while(|&c| c == '#').count();
    if (1..=6).contains(&level) {
        let rest = &trimmed[level..];
        if rest.is_empty() || rest.starts_with([' ', '\t']) {
            return Some((level, rest.trim().trim_end_matches('#').trim()));
        }
    }
    None
}

/// Byte length of a list marker (`- `, `* `, `+ `, `1. `, `2) `) including
/// leading indentation, if the line starts one.
fn list_marker(line: &str) -> Option<usize> {
    let indent = line.len() - line.trim_start().len();
    let t = &line[indent..];
    let bytes = t.as_bytes();
    if bytes.len() >= 2 && matches!(bytes[0], b'-' | b'*' | b'+') && bytes[1] == b' ' {
        return Some(indent + 2);
    }
    let digits = t.chars().take_while(|c| c.is_ascii_digit()).count();
    if digits > 0 && bytes.len() > digits + 1 && matches!(bytes[digits], b'.' | b')') && bytes[digits + 1] == b' ' {
        return Some(indent + digits + 2);
    }
    None
}

fn is_table_line(line: &str) -> bool {
    line.trim_start().starts_with('|')
}

fn is_table_rule(line: &str) -> bool {
    let t = line.trim();
    t.starts_with('|') && t.chars().all(|c| matches!(c, '|' | '-' | ':' | ' '))
}

struct Parsed {
    sections: Vec<Vec<String>>,
    blocks: Vec<Block>,
}

fn parse_blocks(doc: &str) -> Parsed {
    let mut sections: Vec<Vec<String>> = vec![Vec::new()];
    let mut stack: Vec<(usize, String)> = Vec::new();
    let mut blocks: Vec<Block> = Vec::new();
    let mut open: Option<Block> = None;
    let mut in_code = false;

    let mut offset = 0usize;
    for raw in doc.split_inclusive('\n') {
        let line_start = offset;
        offset += raw.len();
        let line = raw.trim_end_matches(['\n', '\r']);
        let line_end = line_start + line.len();
        let section = sections.len() - 1;

        if in_code {
            if let Some(b) = open.as_mut() {
                b.end = line_end;
            }
            if line.trim_start().starts_with("```") {
                in_code = false;
                blocks.extend(open.take());
            }
            continue;
        }
        if line.trim_start().starts_with("```") {
            blocks.extend(open.take());
            in_code = true;
            open = Some(Block {
                kind: BlockKind::Code,
                start: line_start,
                end: line_end,
                content_start: line_start,
                section,
            });
            continue;
        }
        if line.trim().is_empty() {
            blocks.extend(open.take());
            continue;
        }
        if let Some((level, title)) = heading(line) {
            blocks.extend(open.take());
            while stack.last().is_some_and(|(l, _)| *l >= level) {
                stack.pop();
            }
            stack.push((level, title.to_string()));
            sections.push(stack.iter().map(|(_, t)| t.clone()).collect());
            continue;
        }
        let indent = line.len() - line.trim_start().len();
        if is_table_line(line) {
            blocks.extend(open.take());
            blocks.push(Block {
                kind: if is_table_rule(line) { BlockKind::TableRule } else { BlockKind::TableRow },
                start: line_start + indent,
                end: line_end,
                content_start: line_start + indent,
                section,
            });
            continue;
        }
        if let Some(marker) = list_marker(line) {
            blocks.extend(open.take());
            open = Some(Block {
                kind: BlockKind::ListItem,
                start: line_start + indent,
                end: line_end,
                content_start: line_start + marker,
                section,
            });
            continue;
        }
        match open.as_mut() {
            // continuation of a paragraph or an indented list item
            Some(b) if b.kind == BlockKind::Paragraph || (b.kind == BlockKind::ListItem && indent > 0) => {
                b.end = line_end;
            }
            _ => {
                blocks.extend(open.take());
                open = Some(Block {
                    kind: BlockKind::Paragraph,
                    start: line_start + indent,
                    end: line_end,
                    content_start: line_start + indent,
                    section,
                });
            }
        }
    }
    blocks.extend(open);
    Parsed { sections, blocks }
}

/// Sentence spans (absolute byte offsets) inside `doc[start..end]`.
pub(crate) fn split_sentences(doc: &str, start: usize, end: usize) -> Vec<Span> {
    let text = &doc[start..end];
    let mut spans = Vec::new();
    let mut sent_start = 0usize;
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    let mut i = 0;
    while i < chars.len() {
        let (pos, c) = chars[i];
        if matches!(c, '.' | '!' | '?') {
            // swallow closing quotes/brackets
            let mut j = i + 1;
            while j < chars.len() && matches!(chars[j].1, '"' | '\'' | ')' | ']') {
                j += 1;
            }
            let at_end = j >= chars.len();
            let followed_by_space = !at_end && chars[j].1.is_whitespace();
            if at_end || followed_by_space {
                let boundary = if at_end { text.len() } else { chars[j].0 };
                let mut k = j;
                while k < chars.len() && chars[k].1.is_whitespace() {
                    k += 1;
                }
                let next = chars.get(k).map(|&(_, ch)| ch);
                let word_start = text[..pos]
                    .rfind(|ch: char| ch.is_whitespace() || ch == '(')
                    .map(|p| p + 1)
                    .unwrap_or(0);
                let word = text[word_start..pos].to_lowercase();
                let abbreviation = c == '.' && ABBREVIATIONS.contains(&word.as_str());
                let lower_next = next.is_some_and(|ch| ch.is_lowercase());
                if at_end || (!abbreviation && !lower_next) {
                    push_trimmed(&mut spans, text, start, sent_start, boundary);
                    sent_start = boundary;
                }
                i = j;
                continue;
            }
        }
        i += 1;
    }
    push_trimmed(&mut spans, text, start, sent_start, text.len());
    spans
}

fn push_trimmed(spans: &mut Vec<Span>, text: &str, base: usize, from: usize, to: usize) {
    let piece = &text[from..to];
    let lead = piece.len() - piece.trim_start().len();
    let trimmed = piece.trim();
    if !trimmed.is_empty() {
        let s = base + from + lead;
        spans.push(Span {
            start: s,
            end: s + trimmed.len(),
        });
    }
}

fn block_sentences(doc: &str, b: &Block) -> Vec<Span> {
    match b.kind {
        BlockKind::Paragraph => split_sentences(doc, b.start, b.end),
        BlockKind::ListItem => {
            let content = doc[b.content_start..b.end].trim();
            if content.is_empty() {
                Vec::new()
            } else {
                let s = b.content_start + (doc[b.content_start..b.end].len() - doc[b.content_start..b.end].trim_start().len());
                vec![Span { start: s, end: s + content.len() }]
            }
        }
        BlockKind::TableRow | BlockKind::Code => vec![Span {
            start: b.start,
            end: b.end,
        }],
        BlockKind::TableRule => Vec::new(),
    }
}

/// A unit that must not be split: one block, or one oversized sentence piece.
struct Unit {
    start: usize,
    end: usize,
    sentences: Vec<Span>,
    section: usize,
}

/// Splits a span at whitespace into pieces of at most `max_chars` bytes.
fn hard_split(doc: &str, span: Span, max_chars: usize) -> Vec<Span> {
    let mut out = Vec::new();
    let mut s = span.start;
    while s < span.end {
        let mut e = (s + max_chars).min(span.end);
        while !doc.is_char_boundary(e) {
            e -= 1;
        }
        if e < span.end {
            if let Some(ws) = doc[s..e].rfind(char::is_whitespace) {
                if ws > 0 {
                    e = s + ws;
                }
            }
        }
        let piece = &doc[s..e];
        let lead = piece.len() - piece.trim_start().len();
        let t = piece.trim();
        if !t.is_empty() {
            out.push(Span {
                start: s + lead,
                end: s + lead + t.len(),
            });
        }
        s = e.max(s + 1);
        while s < span.end && !doc.is_char_boundary(s) {
            s += 1;
        }
    }
    out
}

fn units_for(doc: &str, b: &Block, max_tokens: usize) -> Vec<Unit> {
    let sentences = block_sentences(doc, b);
    if token_estimate(&doc[b.start..b.end]) <= max_tokens {
        return vec![Unit {
            start: b.start,
            end: b.end,
            sentences,
            section: b.section,
        }];
    }
    let max_chars = max_tokens * 4;
    sentences
        .into_iter()
        .flat_map(|s| {
            if token_estimate(&doc[s.start..s.end]) <= max_tokens {
                vec![s]
            } else {
                hard_split(doc, s, max_chars)
            }
        })
        .map(|s| Unit {
            start: s.start,
            end: s.end,
            sentences: vec![s],
            section: b.section,
        })
        .collect()
}

pub fn chunk(doc_id: &str, doc: &str, max_passage_tokens: usize) -> Result<Vec<Passage>, IngestError> {
    if doc.trim().is_empty() {
        return Err(IngestError::InvalidInput("document is empty".into()));
    }
    if max_passage_tokens == 0 {
        return Err(IngestError::InvalidInput("max_passage_tokens must be positive".into()));
    }
    let parsed = parse_blocks(doc);
    let units: Vec<Unit> = parsed
        .blocks
        .iter()
        .flat_map(|b| units_for(doc, b, max_passage_tokens))
        .collect();
    if units.iter().all(|u| u.sentences.is_empty()) {
        return Err(IngestError::InvalidInput("document has no body text".into()));
    }

    let mut passages = Vec::new();
    let mut group: Vec<&Unit> = Vec::new();
    let flush = |group: &mut Vec<&Unit>, passages: &mut Vec<Passage>| {
        if group.is_empty() {
            return;
        }
        let start = group[0].start;
        let end = group.last().unwrap().end;
        let section = group[0].section;
        let spans: Vec<Span> = group
            .iter()
            .flat_map(|u| u.sentences.iter())
            .map(|s| Span {
                start: s.start - start,
                end: s.end - start,
            })
            .collect();
        group.clear();
        if spans.is_empty() {
            return;
        }
        let text = doc[start..end].to_string();
        let section_path = parsed.sections[section].clone();
        passages.push(Passage {
            passage_id: format!("{doc_id}:p{:03}", passages.len()),
            doc_id: doc_id.to_string(),
            section_path,
            token_estimate: token_estimate(&text),
            text,
            sentence_spans: spans,
        });
    };
    for u in &units {
        let same_section = group.first().is_none_or(|g| g.section == u.section);
        let fits = group
            .first()
            .is_none_or(|g| token_estimate(&doc[g.start..u.end]) <= max_passage_tokens);
        if !(same_section && fits) {
            flush(&mut group, &mut passages);
        }
        group.push(u);
    }
    flush(&mut group, &mut passages);
    Ok(passages)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sentences(text: &str) -> Vec<&str> {
        split_sentences(text, 0, text.len())
            .into_iter()
            .map(|s| &text[s.start..s.end])
            .collect()
    }

    #[test]
    fn splits_on_terminal_punctuation() {
        assert_eq!(
            sentences("The FSM has three states. When reset is asserted, it returns to IDLE! Is it done?"),
            vec![
                "The FSM has three states.",
                "When reset is asserted, it returns to IDLE!",
                "Is it done?"
            ]
        );
    }

    #[test]
    fn abbreviations_and_decimals_do_not_split() {
        assert_eq!(
            sentences("Use a divider, e.g. DIV4, at 1.8 V. See Fig. 3 for details. The TX FIFO status reg. holds flags."),
            vec![
                "Use a divider, e.g. DIV4, at 1.8 V.",
                "See Fig. 3 for details.",
                "The TX FIFO status reg. holds flags."
            ]
        );
    }

    #[test]
    fn lists_and_tables_yield_one_sentence_per_row() {
        let doc = "# Regs\n\n| Name | Offset |\n|------|--------|\n| CTRL | 0x00 |\n\n- first item. still first\n- second item\n";
        let ps = chunk("d", doc, 512).unwrap();
        assert_eq!(ps.len(), 1);
        let p = &ps[0];
        let texts: Vec<&str> = p.sentence_spans.iter().map(|s| &p.text[s.start..s.end]).collect();
        assert_eq!(
            texts,
            vec!["| Name | Offset |", "| CTRL | 0x00 |", "first item. still first", "second item"]
        );
    }

    #[test]
    fn oversized_paragraph_is_split_at_sentences() {
        let para = (0..40).map(|i| format!("Sentence number {i} is here.")).collect::<Vec<_>>().join(" ");
        let ps = chunk("d", &para, 32).unwrap();
        assert!(ps.len() > 1);
        for p in &ps {
            assert!(p.token_estimate <= 32, "{}", p.token_estimate);
        }
        let n: usize = ps.iter().map(|p| p.sentence_spans.len()).sum();
        assert_eq!(n, 40);
    }

    #[test]
    fn giant_sentence_is_hard_split() {
        let words = vec!["word"; 200].join(" ");
        let ps = chunk("d", &words, 16).unwrap();
        assert!(ps.iter().all(|p| p.token_estimate <= 16));
        let joined: Vec<&str> = ps.iter().flat_map(|p| p.text.split_whitespace()).collect();
        assert_eq!(joined.len(), 200);
    }

    #[test]
    fn empty_and_heading_only_documents_are_rejected() {
        assert!(matches!(chunk("d", "  \n", 512), Err(IngestError::InvalidInput(_))));
        assert!(matches!(chunk("d", "# Title\n## Sub\n", 512), Err(IngestError::InvalidInput(_))));
    }

    #[test]
    fn code_fences_stay_whole() {
        let doc = "Intro text.\n\n```\nfoo. Bar.\n\nbaz\n```\n";
        let ps = chunk("d", doc, 512).unwrap();
        let p = &ps[0];
        let last = p.sentence_spans.last().unwrap();
        assert!(p.text[last.start..last.end].starts_with("```"));
        assert!(p.text[last.start..last.end].ends_with("```"));
    }
}
