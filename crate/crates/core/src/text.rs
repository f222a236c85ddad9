//! Tokenization and sentence splitting shared by every module.
//!
//! All metrics, phrase-list extraction and cleaning go through the same
//! tokenizer so that scores stay comparable across runs.

/// Lowercase, split on whitespace, trim non-alphanumeric characters from the
/// edges of each piece and drop whatever ends up empty.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace()
        .filter_map(|raw| {
            let trimmed = raw.trim_matches(|c: char| !c.is_alphanumeric());
            if trimmed.is_empty() {
                None
            } else {
                Some(trimmed.to_lowercase())
            }
        })
        .collect()
}

fn is_terminator(c: char) -> bool {
    matches!(c, '.' | '!' | '?')
}

fn is_closer(c: char) -> bool {
    matches!(c, '"' | '\'' | '\u{201d}' | '\u{2019}' | ')' | ']')
}

/// Split prose into sentences on `.`, `!` or `?` followed by whitespace or
/// end of input. Terminators (and any closing quotes right after them) stay
/// attached to their sentence. Pieces are trimmed; empty pieces are dropped.
pub fn split_sentences(text: &str) -> Vec<String> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let mut current = String::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        current.push(c);
        i += 1;
        if !is_terminator(c) {
            continue;
        }
        while i < chars.len() && (is_terminator(chars[i]) || is_closer(chars[i])) {
            current.push(chars[i]);
            i += 1;
        }
        if i == chars.len() || chars[i].is_whitespace() {
            let piece = current.trim();
            if !piece.is_empty() {
                out.push(piece.to_string());
            }
            current.clear();
        }
    }
    let piece = current.trim();
    if !piece.is_empty() {
        out.push(piece.to_string());
    }
    out
}

/// Collapse runs of whitespace into single spaces and trim.
pub fn normalize_whitespace(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}
