//! Small text utilities shared by ingestion, graph building and the offline model.

const ARTICLES: [&str; 3] = ["a", "an", "the"];

const STOPWORDS: &[&str] = &[
    "a", "an", "the", "is", "are", "was", "were", "be", "been", "being", "of", "to", "in", "on", "at", "by", "for",
    "with", "and", "or", "as", "it", "its", "this", "that", "these", "those", "which", "what", "when", "where", "who",
    "how", "does", "do", "did", "from", "into", "than", "then", "there", "their", "each", "any", "all", "if", "while",
    "after", "before", "once", "upon", "via", "through", "can", "will", "shall", "must", "should", "may", "also",
    "both", "until",
];

/// Canonical entity key: case-folded, internal whitespace collapsed, leading
/// articles and trailing punctuation removed.
pub fn canonical_entity(surface: &str) -> String {
    let lowered = surface.to_lowercase();
    let mut words: Vec<&str> = lowered
        .split_whitespace()
        .map(|w| w.trim_matches(|c: char| matches!(c, '`' | '"' | '\'' | ',' | ';' | ':' | '(' | ')')))
        .filter(|w| !w.is_empty())
        .collect();
    while words.len() > 1 && words.first().is_some_and(|w| ARTICLES.contains(w)) {
        words.remove(0);
    }
    let mut out = words.join(" ");
    while out.ends_with(['.', ',', ';', ':', '!', '?']) {
        out.pop();
    }
    out
}

pub fn is_stopword(word: &str) -> bool {
    STOPWORDS.contains(&word)
}

/// Lowercased alphanumeric tokens; `_` and `.` inside identifiers are kept
/// (`rx_thr_irq`, `ier.rxie`).
pub fn tokens(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    let chars: Vec<char> = text.chars().collect();
    for (i, &c) in chars.iter().enumerate() {
        let inner_dot = c == '.'
            && !cur.is_empty()
            && chars.get(i + 1).is_some_and(|n| n.is_alphanumeric());
        if c.is_alphanumeric() || c == '_' || inner_dot {
            cur.extend(c.to_lowercase());
        } else if !cur.is_empty() {
            out.push(std::mem::take(&mut cur));
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

/// Tokens with stopwords removed.
pub fn content_tokens(text: &str) -> Vec<String> {
    tokens(text).into_iter().filter(|t| !is_stopword(t)).collect()
}

/// `ceil(chars / 4)`.
pub fn token_estimate(text: &str) -> usize {
    text.chars().count().div_ceil(4)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_entity_folds_case_whitespace_and_articles() {
        assert_eq!(canonical_entity("The  CTRL\tRegister"), "ctrl register");
        assert_eq!(canonical_entity("FSM"), "fsm");
        assert_eq!(canonical_entity("an `RXTH` field."), "rxth field");
        assert_eq!(canonical_entity("TX FIFO status reg."), "tx fifo status reg");
        assert_eq!(canonical_entity("theory block"), "theory block");
        assert_eq!(canonical_entity("A"), "a");
    }

    #[test]
    fn tokens_keep_identifiers() {
        assert_eq!(tokens("IER.RXIE is set, rx_thr_irq fires."), vec!["ier.rxie", "is", "set", "rx_thr_irq", "fires"]);
        assert_eq!(content_tokens("When the FSM is idle"), vec!["fsm", "idle"]);
    }

    #[test]
    fn token_estimate_rounds_up() {
        assert_eq!(token_estimate(""), 0);
        assert_eq!(token_estimate("abcd"), 1);
        assert_eq!(token_estimate("abcde"), 2);
    }
}
