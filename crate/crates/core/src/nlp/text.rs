//! Character-offset sentence splitting and tokenization.
//!
//! All offsets are in Unicode scalar values (chars), never bytes.

use std::ops::Range;

/// A note's text with a char-to-byte offset table.
pub struct CharText<'a> {
    text: &'a str,
    bytes: Vec<usize>,
}

impl<'a> CharText<'a> {
    pub fn new(text: &'a str) -> Self {
        let mut bytes: Vec<usize> = text.char_indices().map(|(b, _)| b).collect();
        bytes.push(text.len());
        Self { text, bytes }
    }

    pub fn len(&self) -> usize {
        self.bytes.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn as_str(&self) -> &'a str {
        self.text
    }

    /// Slice by char range. Panics when out of bounds.
    pub fn slice(&self, r: Range<usize>) -> &'a str {
        &self.text[self.bytes[r.start]..self.bytes[r.end]]
    }

    pub fn chars(&self) -> impl Iterator<Item = (usize, char)> + 'a {
        self.text.chars().enumerate()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub start: usize,
    pub end: usize,
    /// Lower-cased token text.
    pub norm: String,
}

impl Token {
    pub fn is_word(&self) -> bool {
        self.norm.chars().next().is_some_and(char::is_alphanumeric)
    }
}

/// Words are maximal alphanumeric runs (an apostrophe between letters stays
/// inside the word); every other non-space char is a one-char token.
pub fn tokenize(text: &str) -> Vec<Token> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            i += 1;
        } else if c.is_alphanumeric() {
            let start = i;
            while i < chars.len()
                && (chars[i].is_alphanumeric()
                    || (chars[i] == '\'' && i + 1 < chars.len() && chars[i + 1].is_alphanumeric() && i > start))
            {
                i += 1;
            }
            out.push(Token {
                start,
                end: i,
                norm: chars[start..i].iter().flat_map(|c| c.to_lowercase()).collect(),
            });
        } else {
            out.push(Token {
                start: i,
                end: i + 1,
                norm: c.to_lowercase().collect(),
            });
            i += 1;
        }
    }
    out
}

/// Lower-cased token strings of a phrase.
pub fn phrase_tokens(phrase: &str) -> Vec<String> {
    tokenize(phrase).into_iter().map(|t| t.norm).collect()
}

const ABBREVIATIONS: &[&str] = &["dr", "mr", "mrs", "ms", "pt", "vs", "st", "jr", "sr", "e.g", "i.e", "etc", "approx"];

/// Sentence spans, trimmed of surrounding whitespace. A sentence ends at a
/// newline or at `.`, `!` or `?` followed by whitespace or end of text,
/// except after a short list of abbreviations.
pub fn split_sentences(text: &str) -> Vec<Range<usize>> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let mut start = 0;
    let push = |s: usize, e: usize, out: &mut Vec<Range<usize>>| {
        let mut s = s;
        let mut e = e;
        while s < e && chars[s].is_whitespace() {
            s += 1;
        }
        while e > s && chars[e - 1].is_whitespace() {
            e -= 1;
        }
        if s < e {
            out.push(s..e);
        }
    };
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c == '\n' || c == '\r' {
            push(start, i, &mut out);
            start = i + 1;
        } else if matches!(c, '.' | '!' | '?') {
            let mut j = i + 1;
            while j < chars.len() && matches!(chars[j], '.' | '!' | '?' | '"' | '\'' | ')') {
                j += 1;
            }
            let at_break = j == chars.len() || chars[j].is_whitespace();
            if at_break && !(c == '.' && ends_with_abbreviation(&chars[start..i])) {
                push(start, j, &mut out);
                start = j;
                i = j;
                continue;
            }
        }
        i += 1;
    }
    push(start, chars.len(), &mut out);
    out
}

fn ends_with_abbreviation(before: &[char]) -> bool {
    let word: String = before
        .iter()
        .rev()
        .take_while(|c| c.is_alphanumeric() || **c == '.')
        .collect::<Vec<_>>()
        .into_iter()
        .rev()
        .flat_map(|c| c.to_lowercase())
        .collect();
    ABBREVIATIONS.contains(&word.as_str())
}
