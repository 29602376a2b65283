//! Reference tokenizer and sentence segmentation.
//!
//! The tokenizer defines prompt length everywhere in the crate: lowercase,
//! split on whitespace, and peel leading/trailing ASCII punctuation off each
//! chunk as individual tokens. Interior punctuation (hyphens, decimal
//! points) stays inside the token, so "2.5" and "drug-drug" are single
//! tokens. The rule is context-free: the token count of a rendered prompt
//! equals the sum over its space-joined parts.

/// Tokenize `text` with the reference rule.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for chunk in text.split_whitespace() {
        push_chunk(chunk, &mut out);
    }
    out
}

/// Number of reference tokens in `text`.
pub fn token_count(text: &str) -> usize {
    tokenize(text).len()
}

fn push_chunk(chunk: &str, out: &mut Vec<String>) {
    let mut rest = chunk;
    while let Some(c) = rest.chars().next() {
        if !c.is_ascii_punctuation() {
            break;
        }
        out.push(c.to_string());
        rest = &rest[c.len_utf8()..];
    }
    let mut tail = Vec::new();
    while let Some(c) = rest.chars().last() {
        if !c.is_ascii_punctuation() {
            break;
        }
        tail.push(c);
        rest = &rest[..rest.len() - c.len_utf8()];
    }
    if !rest.is_empty() {
        out.push(rest.to_lowercase());
    }
    out.extend(tail.into_iter().rev().map(|c| c.to_string()));
}

/// Collapse all whitespace runs to single spaces and trim the ends.
pub fn normalize_whitespace(raw: &str) -> String {
    raw.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Split a raw description into sentences.
///
/// A sentence boundary is a '.', '!' or '?' that is either at end-of-text
/// or followed by whitespace and an uppercase letter. A period between two
/// digits never ends a sentence. Joining the result with single spaces
/// reproduces the whitespace-normalized input.
pub fn segment_sentences(raw: &str) -> Vec<String> {
    let norm = normalize_whitespace(raw);
    if norm.is_empty() {
        return Vec::new();
    }
    let chars: Vec<char> = norm.chars().collect();
    let mut sentences = Vec::new();
    let mut start = 0usize;
    let mut i = 0usize;
    while i < chars.len() {
        let c = chars[i];
        if matches!(c, '.' | '!' | '?') {
            let digit_joined = c == '.'
                && i > 0
                && chars[i - 1].is_ascii_digit()
                && i + 1 < chars.len()
                && chars[i + 1].is_ascii_digit();
            let at_end = i + 1 == chars.len();
            // After normalization every whitespace run is a single space.
            let before_upper = i + 2 < chars.len() && chars[i + 1] == ' ' && chars[i + 2].is_uppercase();
            if !digit_joined && (at_end || before_upper) {
                sentences.push(chars[start..=i].iter().collect::<String>());
                start = i + 2;
                i += 2;
                continue;
            }
        }
        i += 1;
    }
    if start < chars.len() {
        sentences.push(chars[start..].iter().collect::<String>());
    }
    sentences
}
