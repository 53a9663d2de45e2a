use super::text::phrase_tokens;
use super::FactorLabel;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeSet, HashMap};
use thiserror::Error;

pub const DEFAULT_LEXICON: &str = include_str!("../../data/lexicon/default.json");

#[derive(Debug, Error)]
pub enum LexiconError {
    #[error("invalid lexicon: {0}")]
    Syntax(#[from] serde_json::Error),
    #[error("label {0} listed twice")]
    DuplicateLabel(FactorLabel),
    #[error("label {label}: phrase {phrase:?} has no tokens")]
    EmptyPhrase { label: String, phrase: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// One label's trigger phrases and its own extra cues.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LexiconEntry {
    pub label: FactorLabel,
    pub triggers: Vec<String>,
    #[serde(default)]
    pub negation_cues: Vec<String>,
    #[serde(default)]
    pub past_cues: Vec<String>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct LexiconFile {
    #[serde(default)]
    name: Option<String>,
    #[serde(default)]
    clause_breaks: Vec<String>,
    #[serde(default)]
    negation_cues: Vec<String>,
    #[serde(default)]
    past_cues: Vec<String>,
    entries: Vec<LexiconEntry>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
enum LexiconShape {
    Full(LexiconFile),
    Bare(Vec<LexiconEntry>),
}

pub(crate) type Phrase = Vec<String>;

#[derive(Debug, Clone)]
pub(crate) struct CompiledEntry {
    pub negation: Vec<Phrase>,
    pub past: Vec<Phrase>,
}

/// Compiled lexicon. Shared cues apply to every label in addition to the
/// label's own.
#[derive(Debug, Clone)]
pub struct Lexicon {
    pub name: String,
    entries: Vec<LexiconEntry>,
    compiled: HashMap<FactorLabel, CompiledEntry>,
    /// Trigger phrases by first token, longest first.
    triggers: HashMap<String, Vec<(Phrase, FactorLabel)>>,
    clause_breaks: BTreeSet<String>,
}

fn compile_phrases(label: &str, phrases: &[String]) -> Result<Vec<Phrase>, LexiconError> {
    phrases
        .iter()
        .map(|p| {
            let toks = phrase_tokens(p);
            if toks.is_empty() {
                Err(LexiconError::EmptyPhrase {
                    label: label.to_string(),
                    phrase: p.clone(),
                })
            } else {
                Ok(toks)
            }
        })
        .collect()
}

impl Lexicon {
    pub fn from_json(text: &str) -> Result<Self, LexiconError> {
        let file = match serde_json::from_str::<LexiconShape>(text)? {
            LexiconShape::Full(f) => f,
            LexiconShape::Bare(entries) => LexiconFile {
                name: None,
                clause_breaks: vec![],
                negation_cues: vec![],
                past_cues: vec![],
                entries,
            },
        };
        let shared_neg = compile_phrases("*", &file.negation_cues)?;
        let shared_past = compile_phrases("*", &file.past_cues)?;
        let mut compiled = HashMap::new();
        let mut triggers: HashMap<String, Vec<(Phrase, FactorLabel)>> = HashMap::new();
        for e in &file.entries {
            let name = e.label.as_str();
            let mut negation = shared_neg.clone();
            negation.extend(compile_phrases(name, &e.negation_cues)?);
            let mut past = shared_past.clone();
            past.extend(compile_phrases(name, &e.past_cues)?);
            if compiled.insert(e.label, CompiledEntry { negation, past }).is_some() {
                return Err(LexiconError::DuplicateLabel(e.label));
            }
            for t in compile_phrases(name, &e.triggers)? {
                triggers.entry(t[0].clone()).or_default().push((t, e.label));
            }
        }
        for list in triggers.values_mut() {
            list.sort_by(|a, b| b.0.len().cmp(&a.0.len()).then(a.1.cmp(&b.1)));
            list.dedup();
        }
        Ok(Self {
            name: file.name.unwrap_or_else(|| "lexicon".into()),
            entries: file.entries,
            compiled,
            triggers,
            clause_breaks: file.clause_breaks.iter().flat_map(|b| phrase_tokens(b)).collect(),
        })
    }

    pub fn from_file(path: &std::path::Path) -> Result<Self, LexiconError> {
        let text = std::fs::read_to_string(path).map_err(|source| LexiconError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn entries(&self) -> &[LexiconEntry] {
        &self.entries
    }

    pub fn labels(&self) -> impl Iterator<Item = FactorLabel> + '_ {
        self.entries.iter().map(|e| e.label)
    }

    pub(crate) fn entry(&self, label: FactorLabel) -> Option<&CompiledEntry> {
        self.compiled.get(&label)
    }

    pub(crate) fn triggers_starting(&self, token: &str) -> &[(Phrase, FactorLabel)] {
        self.triggers.get(token).map(Vec::as_slice).unwrap_or(&[])
    }

    pub(crate) fn is_clause_break(&self, token: &str) -> bool {
        self.clause_breaks.contains(token)
    }
}

pub fn default_lexicon() -> Lexicon {
    Lexicon::from_json(DEFAULT_LEXICON).expect("bundled lexicon is valid")
}
