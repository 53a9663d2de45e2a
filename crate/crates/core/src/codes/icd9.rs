//! ICD-9 code lexical grammar.
//!
//! A code is an optional `V` or `E` prefix, two or three digits, and an
//! optional `.` followed by one or two digits (`V62.5`, `296.2`, `E849.7`).

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid ICD-9 code {input:?}: {reason}")]
pub struct Icd9ParseError {
    pub input: String,
    pub reason: &'static str,
}

/// A lexically valid ICD-9 code, stored upper-cased.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Icd9Code(String);

/// Decomposed code: prefix letter, integer digits, decimal digits.
#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct CodeParts {
    pub prefix: Option<char>,
    pub int: String,
    pub dec: String,
}

impl CodeParts {
    pub(crate) fn parse(s: &str) -> Result<Self, &'static str> {
        let mut chars = s.chars().peekable();
        let prefix = match chars.peek() {
            Some(c) if c.eq_ignore_ascii_case(&'v') || c.eq_ignore_ascii_case(&'e') => {
                let c = c.to_ascii_uppercase();
                chars.next();
                Some(c)
            }
            _ => None,
        };
        let mut int = String::new();
        while let Some(c) = chars.peek().copied() {
            if c.is_ascii_digit() {
                int.push(c);
                chars.next();
            } else {
                break;
            }
        }
        if !(2..=3).contains(&int.len()) {
            return Err("expected 2-3 digits before the decimal point");
        }
        let mut dec = String::new();
        match chars.next() {
            None => {}
            Some('.') => {
                for c in chars.by_ref() {
                    if !c.is_ascii_digit() {
                        return Err("non-digit after decimal point");
                    }
                    dec.push(c);
                }
                if !(1..=2).contains(&dec.len()) {
                    return Err("expected 1-2 digits after the decimal point");
                }
            }
            Some(_) => return Err("unexpected character"),
        }
        Ok(Self { prefix, int, dec })
    }

    pub(crate) fn render(&self) -> String {
        let mut s = String::with_capacity(8);
        if let Some(p) = self.prefix {
            s.push(p);
        }
        s.push_str(&self.int);
        if !self.dec.is_empty() {
            s.push('.');
            s.push_str(&self.dec);
        }
        s
    }
}

impl Icd9Code {
    pub fn parse(s: &str) -> Result<Self, Icd9ParseError> {
        let trimmed = s.trim();
        CodeParts::parse(trimmed)
            .map(|p| Self(p.render()))
            .map_err(|reason| Icd9ParseError {
                input: s.to_string(),
                reason,
            })
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    /// The code itself followed by its shorter ancestors:
    /// `296.21` -> `296.21`, `296.2`, `296`.
    pub fn ancestors(&self) -> impl Iterator<Item = &str> {
        let s = self.0.as_str();
        let dot = s.find('.');
        let mut cuts = vec![s];
        if let Some(dot) = dot {
            let dec_len = s.len() - dot - 1;
            if dec_len == 2 {
                cuts.push(&s[..s.len() - 1]);
            }
            cuts.push(&s[..dot]);
        }
        cuts.into_iter()
    }
}

impl FromStr for Icd9Code {
    type Err = Icd9ParseError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::parse(s)
    }
}

impl fmt::Display for Icd9Code {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl Serialize for Icd9Code {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.0)
    }
}

impl<'de> Deserialize<'de> for Icd9Code {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Icd9Code::parse(&s).map_err(serde::de::Error::custom)
    }
}
