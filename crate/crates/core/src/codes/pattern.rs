//! Code-list patterns as they appear in published code tables.
//!
//! Supported forms:
//! - a single code: `309.81`, `V61`
//! - a full range: `303.0-303.9`, `E961-E977`
//! - an abbreviated range whose right side replaces the trailing digits of
//!   the left side: `V60.0-2` (= `V60.0-V60.2`), `995.50-54`, `430-438`
//!
//! Both ends of a range must share the prefix letter and digit layout.

use super::icd9::{CodeParts, Icd9Code};
use thiserror::Error;

/// Upper bound on codes produced by one pattern.
pub const MAX_EXPANSION: u64 = 10_000;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("pattern {pattern:?}: {reason}")]
pub struct PatternError {
    pub pattern: String,
    pub reason: String,
}

fn err(pattern: &str, reason: impl Into<String>) -> PatternError {
    PatternError {
        pattern: pattern.to_string(),
        reason: reason.into(),
    }
}

/// Expand a pattern into the concrete codes it names, in ascending order.
pub fn expand_pattern(pattern: &str) -> Result<Vec<Icd9Code>, PatternError> {
    let p = pattern.trim();
    let Some((left, right)) = p.split_once('-') else {
        return Icd9Code::parse(p)
            .map(|c| vec![c])
            .map_err(|e| err(pattern, e.reason));
    };
    let left = CodeParts::parse(left.trim()).map_err(|r| err(pattern, format!("left end: {r}")))?;
    let right = right.trim();
    if right.is_empty() {
        return Err(err(pattern, "empty right end"));
    }

    let right = if right.contains('.') || right.starts_with(|c: char| c.is_ascii_alphabetic()) {
        CodeParts::parse(right).map_err(|r| err(pattern, format!("right end: {r}")))?
    } else {
        // Abbreviated: replace the trailing digits of the left end.
        if !right.chars().all(|c| c.is_ascii_digit()) {
            return Err(err(pattern, "right end must be digits or a full code"));
        }
        let digits = format!("{}{}", left.int, left.dec);
        if right.len() > digits.len() {
            return Err(err(pattern, "abbreviated right end is longer than the left end"));
        }
        let merged = format!("{}{}", &digits[..digits.len() - right.len()], right);
        CodeParts {
            prefix: left.prefix,
            int: merged[..left.int.len()].to_string(),
            dec: merged[left.int.len()..].to_string(),
        }
    };

    if left.prefix != right.prefix {
        return Err(err(pattern, "range ends have different prefixes"));
    }
    if left.int.len() != right.int.len() || left.dec.len() != right.dec.len() {
        return Err(err(pattern, "range ends have different digit layouts"));
    }

    let dec_len = left.dec.len();
    let value = |parts: &CodeParts| -> u64 {
        format!("{}{}", parts.int, parts.dec)
            .parse::<u64>()
            .expect("digits only")
    };
    let (lo, hi) = (value(&left), value(&right));
    if lo > hi {
        return Err(err(pattern, "range is descending"));
    }
    if hi - lo + 1 > MAX_EXPANSION {
        return Err(err(pattern, "range expands to too many codes"));
    }
    let width = left.int.len() + dec_len;
    Ok((lo..=hi)
        .map(|v| {
            let digits = format!("{v:0width$}");
            let parts = CodeParts {
                prefix: left.prefix,
                int: digits[..left.int.len()].to_string(),
                dec: digits[left.int.len()..].to_string(),
            };
            Icd9Code::parse(&parts.render()).expect("rendered parts are valid")
        })
        .collect())
}
