//! Extracting the chosen arm from a free-text answer.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("no valid arm among {valid:?} in response")]
pub struct ParseError {
    pub valid: Vec<i64>,
}

/// Standalone non-negative integers in order of appearance. Digits that are
/// part of a word, a signed number or a decimal are skipped.
fn standalone_integers(text: &str) -> Vec<i64> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        if !chars[i].is_ascii_digit() {
            i += 1;
            continue;
        }
        let start = i;
        while i < chars.len() && chars[i].is_ascii_digit() {
            i += 1;
        }
        let before = start.checked_sub(1).map(|j| chars[j]);
        let after = chars.get(i).copied();
        let after2 = chars.get(i + 1).copied();
        let glued_before = before.is_some_and(|c| c.is_alphanumeric() || c == '_' || c == '-' || c == '.' || c == '+');
        let decimal_after = matches!(after, Some('.') | Some(',')) && after2.is_some_and(|c| c.is_ascii_digit());
        let glued_after = after.is_some_and(|c| c.is_alphanumeric() || c == '_');
        if glued_before || decimal_after || glued_after {
            continue;
        }
        let digits: String = chars[start..i].iter().collect();
        if let Ok(v) = digits.parse() {
            out.push(v);
        }
    }
    out
}

/// The last standalone integer in `text` that is one of `valid`.
pub fn parse_choice(text: &str, valid: &[i64]) -> Result<i64, ParseError> {
    standalone_integers(text)
        .into_iter()
        .rev()
        .find(|v| valid.contains(v))
        .ok_or_else(|| ParseError { valid: valid.to_vec() })
}
