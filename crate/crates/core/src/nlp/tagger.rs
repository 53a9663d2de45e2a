use super::lexicon::{Lexicon, Phrase};
use super::text::{split_sentences, tokenize, CharText, Token};
use super::{FactorLabel, FactorMention, Period, Presence};
use crate::ehr::{ClinicalNote, NoteId};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeSet, HashMap};
use std::io::{BufRead, BufReader, Write};
use std::ops::Range;
use std::process::{Command, Stdio};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MentionError {
    #[error("mention [{start}, {end}) outside text of length {len}")]
    OutOfBounds { start: usize, end: usize, len: usize },
    #[error("mention [{start}, {end}) is empty")]
    Empty { start: usize, end: usize },
    #[error("mention [{start}, {end}) does not fall on token boundaries")]
    NotOnTokenBoundary { start: usize, end: usize },
    #[error("mention note id {found:?} does not match {expected:?}")]
    WrongNote { expected: String, found: String },
}

#[derive(Debug, Error)]
pub enum TaggerError {
    #[error("failed to run tagger: {0}")]
    Spawn(#[from] std::io::Error),
    #[error("tagger output line {line}: {message}")]
    Protocol { line: usize, message: String },
    #[error("tagger exited with {status}: {stderr}")]
    Exit { status: String, stderr: String },
    #[error(transparent)]
    Mention(#[from] MentionError),
}

/// Text in, mentions out. Offsets in returned mentions are chars into the
/// given text and `note_id` is echoed from the input.
pub trait Tagger: Send + Sync {
    fn name(&self) -> &str;

    fn tag(&self, note_id: &NoteId, text: &str) -> Result<Vec<FactorMention>, TaggerError>;

    fn tag_batch(&self, items: &[(NoteId, String)]) -> Vec<Result<Vec<FactorMention>, TaggerError>> {
        items.par_iter().map(|(id, text)| self.tag(id, text)).collect()
    }
}

/// Checks the mention invariants against the text they point into.
pub fn validate_mentions(note_id: &NoteId, text: &str, mentions: &[FactorMention]) -> Result<(), MentionError> {
    let len = text.chars().count();
    let tokens = tokenize(text);
    let starts: BTreeSet<usize> = tokens.iter().map(|t| t.start).collect();
    let ends: BTreeSet<usize> = tokens.iter().map(|t| t.end).collect();
    for m in mentions {
        let (start, end) = (m.start, m.end);
        if m.note_id != *note_id {
            return Err(MentionError::WrongNote {
                expected: note_id.0.clone(),
                found: m.note_id.0.clone(),
            });
        }
        if start >= end {
            return Err(MentionError::Empty { start, end });
        }
        if end > len {
            return Err(MentionError::OutOfBounds { start, end, len });
        }
        if !starts.contains(&start) || !ends.contains(&end) {
            return Err(MentionError::NotOnTokenBoundary { start, end });
        }
    }
    Ok(())
}

/// Up to three contiguous sentences around a keyword hit.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Paragraph {
    pub note_id: NoteId,
    /// Char span in the note covering all sentences.
    pub start: usize,
    pub end: usize,
    pub sentences: Vec<Range<usize>>,
    /// Index into `sentences` of the sentence with the hit.
    pub hit: usize,
}

struct Sentence<'t> {
    tokens: &'t [Token],
}

fn sentence_tokens<'t>(tokens: &'t [Token], spans: &[Range<usize>]) -> Vec<Sentence<'t>> {
    spans
        .iter()
        .map(|s| {
            let lo = tokens.partition_point(|t| t.start < s.start);
            let hi = tokens.partition_point(|t| t.start < s.end);
            Sentence { tokens: &tokens[lo..hi] }
        })
        .collect()
}

fn phrase_at(tokens: &[Token], i: usize, phrase: &Phrase) -> bool {
    tokens.len() >= i + phrase.len() && tokens[i..i + phrase.len()].iter().zip(phrase).all(|(t, p)| t.norm == *p)
}

/// Leftmost-longest trigger matches as (first token, token count, label).
fn find_triggers(lex: &Lexicon, tokens: &[Token]) -> Vec<(usize, usize, FactorLabel)> {
    let mut out = Vec::new();
    let mut i = 0;
    while i < tokens.len() {
        let hit = lex
            .triggers_starting(&tokens[i].norm)
            .iter()
            .find(|(p, _)| phrase_at(tokens, i, p));
        match hit {
            Some((p, label)) => {
                out.push((i, p.len(), *label));
                i += p.len();
            }
            None => i += 1,
        }
    }
    out
}

/// One paragraph per sentence containing a trigger of `lexicon`.
pub fn prescreen(note_id: &NoteId, text: &str, lexicon: &Lexicon) -> Vec<Paragraph> {
    let spans = split_sentences(text);
    let tokens = tokenize(text);
    let sentences = sentence_tokens(&tokens, &spans);
    let mut out = Vec::new();
    for (i, s) in sentences.iter().enumerate() {
        if find_triggers(lexicon, s.tokens).is_empty() {
            continue;
        }
        let lo = i.saturating_sub(1);
        let hi = (i + 1).min(spans.len() - 1);
        out.push(Paragraph {
            note_id: note_id.clone(),
            start: spans[lo].start,
            end: spans[hi].end,
            sentences: spans[lo..=hi].to_vec(),
            hit: i - lo,
        });
    }
    out
}

/// Keyword tagger. A negation cue ending before the trigger within the
/// same clause makes presence `not_yes`; a past cue anywhere else in the
/// clause makes period `not_current`.
pub struct LexiconTagger {
    lexicon: Lexicon,
}

impl LexiconTagger {
    pub fn new(lexicon: Lexicon) -> Self {
        Self { lexicon }
    }

    pub fn lexicon(&self) -> &Lexicon {
        &self.lexicon
    }

    fn tag_clause(&self, note_id: &NoteId, clause: &[Token], out: &mut Vec<FactorMention>) {
        for (i, n, label) in find_triggers(&self.lexicon, clause) {
            let Some(entry) = self.lexicon.entry(label) else { continue };
            let negated = (0..i).any(|j| entry.negation.iter().any(|c| j + c.len() <= i && phrase_at(clause, j, c)));
            let past = (0..clause.len()).any(|j| {
                entry.past.iter().any(|c| {
                    let outside = j + c.len() <= i || j >= i + n;
                    outside && phrase_at(clause, j, c)
                })
            });
            out.push(FactorMention {
                note_id: note_id.clone(),
                start: clause[i].start,
                end: clause[i + n - 1].end,
                label,
                presence: if negated { Presence::NotYes } else { Presence::Yes },
                period: if past { Period::NotCurrent } else { Period::Current },
            });
        }
    }
}

impl Tagger for LexiconTagger {
    fn name(&self) -> &str {
        &self.lexicon.name
    }

    fn tag(&self, note_id: &NoteId, text: &str) -> Result<Vec<FactorMention>, TaggerError> {
        let spans = split_sentences(text);
        let tokens = tokenize(text);
        let mut out = Vec::new();
        for s in sentence_tokens(&tokens, &spans) {
            for clause in s.tokens.split(|t| self.lexicon.is_clause_break(&t.norm)) {
                self.tag_clause(note_id, clause, &mut out);
            }
        }
        Ok(out)
    }
}

#[derive(Serialize)]
struct ExternalRequest<'a> {
    note_id: &'a str,
    text: &'a str,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ExternalMention {
    note_id: NoteId,
    start: usize,
    end: usize,
    label: FactorLabel,
    presence: Presence,
    period: Period,
}

/// Runs an external program once per batch. It reads JSON lines
/// `{"note_id", "text"}` on stdin and writes mention JSON lines
/// `{"note_id", "start", "end", "label", "presence", "period"}` to stdout.
pub struct ExternalTagger {
    pub program: String,
    pub args: Vec<String>,
}

impl ExternalTagger {
    pub fn new(program: impl Into<String>, args: Vec<String>) -> Self {
        Self { program: program.into(), args }
    }

    fn run(&self, items: &[(NoteId, String)]) -> Result<Vec<Vec<FactorMention>>, TaggerError> {
        let mut child = Command::new(&self.program)
            .args(&self.args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()?;
        let mut stdin = child.stdin.take().expect("piped stdin");
        let payload: Vec<u8> = items
            .iter()
            .flat_map(|(id, text)| {
                let mut line = serde_json::to_vec(&ExternalRequest { note_id: &id.0, text }).expect("serializable");
                line.push(b'\n');
                line
            })
            .collect();
        let writer = std::thread::spawn(move || stdin.write_all(&payload));
        let stdout = child.stdout.take().expect("piped stdout");
        let index: HashMap<&str, usize> = items.iter().enumerate().map(|(i, (id, _))| (id.0.as_str(), i)).collect();
        let mut out = vec![Vec::new(); items.len()];
        let mut protocol_error = None;
        for (n, line) in BufReader::new(stdout).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() || protocol_error.is_some() {
                continue;
            }
            let parsed: Result<ExternalMention, _> = serde_json::from_str(&line);
            match parsed {
                Ok(m) => match index.get(m.note_id.0.as_str()) {
                    Some(&i) => out[i].push(FactorMention {
                        note_id: m.note_id,
                        start: m.start,
                        end: m.end,
                        label: m.label,
                        presence: m.presence,
                        period: m.period,
                    }),
                    None => {
                        protocol_error = Some(TaggerError::Protocol {
                            line: n + 1,
                            message: format!("unknown note id {:?}", m.note_id.0),
                        })
                    }
                },
                Err(e) => {
                    protocol_error = Some(TaggerError::Protocol {
                        line: n + 1,
                        message: e.to_string(),
                    })
                }
            }
        }
        let write_result = writer.join().expect("writer thread");
        let output = child.wait_with_output()?;
        if !output.status.success() {
            return Err(TaggerError::Exit {
                status: output.status.to_string(),
                stderr: String::from_utf8_lossy(&output.stderr).trim().to_string(),
            });
        }
        if let Some(e) = protocol_error {
            return Err(e);
        }
        write_result?;
        Ok(out)
    }
}

impl Tagger for ExternalTagger {
    fn name(&self) -> &str {
        &self.program
    }

    fn tag(&self, note_id: &NoteId, text: &str) -> Result<Vec<FactorMention>, TaggerError> {
        let mut all = self.run(&[(note_id.clone(), text.to_string())])?;
        Ok(all.pop().unwrap_or_default())
    }

    fn tag_batch(&self, items: &[(NoteId, String)]) -> Vec<Result<Vec<FactorMention>, TaggerError>> {
        match self.run(items) {
            Ok(all) => all.into_iter().map(Ok).collect(),
            Err(e) => {
                let msg = e.to_string();
                items
                    .iter()
                    .map(|_| Err(TaggerError::Protocol { line: 0, message: msg.clone() }))
                    .collect()
            }
        }
    }
}

/// Result of tagging a batch of notes.
#[derive(Debug, Default)]
pub struct NoteTagging {
    pub mentions: Vec<FactorMention>,
    pub failed_paragraphs: usize,
}

/// Prescreens `notes`, tags every paragraph, maps offsets back to the
/// note, validates and deduplicates. Paragraphs whose tagging fails or
/// violates the mention invariants are logged and contribute nothing.
pub fn tag_note(notes: &[&ClinicalNote], tagger: &dyn Tagger, prescreen_lexicon: &Lexicon) -> NoteTagging {
    let mut items = Vec::new();
    let mut origin = Vec::new();
    for note in notes {
        let text = CharText::new(&note.text);
        for p in prescreen(&note.note_id, &note.text, prescreen_lexicon) {
            items.push((NoteId(items.len().to_string()), text.slice(p.start..p.end).to_string()));
            origin.push((*note, p.start));
        }
    }
    let results = tagger.tag_batch(&items);
    let mut out = NoteTagging::default();
    for (((item_id, para_text), (note, offset)), result) in items.iter().zip(&origin).zip(results) {
        let checked = result.and_then(|ms| {
            validate_mentions(item_id, para_text, &ms)?;
            Ok(ms)
        });
        match checked {
            Ok(ms) => out.mentions.extend(ms.into_iter().map(|m| FactorMention {
                note_id: note.note_id.clone(),
                start: m.start + offset,
                end: m.end + offset,
                ..m
            })),
            Err(e) => {
                log::warn!("tagger {} failed on a paragraph of note {}: {e}", tagger.name(), note.note_id.0);
                out.failed_paragraphs += 1;
            }
        }
    }
    out.mentions.sort();
    out.mentions.dedup_by(|a, b| a.note_id == b.note_id && a.start == b.start && a.end == b.end && a.label == b.label);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nlp::default_lexicon;

    fn tag(text: &str) -> Vec<(String, FactorLabel, Presence, Period)> {
        let t = LexiconTagger::new(default_lexicon());
        let chars = CharText::new(text);
        t.tag(&NoteId("n".into()), text)
            .unwrap()
            .into_iter()
            .map(|m| (chars.slice(m.start..m.end).to_string(), m.label, m.presence, m.period))
            .collect()
    }

    #[test]
    fn reference_rules() {
        use FactorLabel::*;
        assert_eq!(
            tag("patient is currently homeless"),
            [("homeless".into(), HousingInstability, Presence::Yes, Period::Current)]
        );
        assert_eq!(
            tag("denies homelessness"),
            [("homelessness".into(), HousingInstability, Presence::NotYes, Period::Current)]
        );
        assert_eq!(
            tag("history of incarceration in 1990"),
            [("incarceration".into(), LegalProblems, Presence::Yes, Period::NotCurrent)]
        );
    }

    #[test]
    fn clause_and_longest_match() {
        use FactorLabel::*;
        let got = tag("Denies pain but reports alcohol abuse; history of eviction.");
        assert_eq!(
            got,
            [
                ("pain".into(), Pain, Presence::NotYes, Period::Current),
                ("alcohol abuse".into(), SubstanceAbuse, Presence::Yes, Period::Current),
                ("eviction".into(), HousingInstability, Presence::Yes, Period::NotCurrent),
            ]
        );
        // a cue after the trigger does not negate it
        assert_eq!(tag("homeless, no job")[0].2, Presence::Yes);
    }

    #[test]
    fn prescreen_paragraphs() {
        let text = "One. Two. Three. Four. He is homeless. Six. Seven. Eight. Nine. Ten.";
        let ps = prescreen(&NoteId("n".into()), text, &default_lexicon());
        assert_eq!(ps.len(), 1);
        let c = CharText::new(text);
        assert_eq!(c.slice(ps[0].start..ps[0].end), "Four. He is homeless. Six.");
        assert_eq!(ps[0].hit, 1);

        let ps = prescreen(&NoteId("n".into()), "Homeless veteran. Two. Three.", &default_lexicon());
        assert_eq!(ps[0].sentences.len(), 2);
        assert_eq!(ps[0].hit, 0);
        assert!(prescreen(&NoteId("n".into()), "Routine visit. Vitals stable.", &default_lexicon()).is_empty());
    }

    #[test]
    fn validation() {
        let id = NoteId("n".into());
        let m = |start, end| FactorMention {
            note_id: id.clone(),
            start,
            end,
            label: FactorLabel::Pain,
            presence: Presence::Yes,
            period: Period::Current,
        };
        let text = "mild pain today";
        assert!(validate_mentions(&id, text, &[m(5, 9)]).is_ok());
        assert!(matches!(validate_mentions(&id, text, &[m(5, 8)]), Err(MentionError::NotOnTokenBoundary { .. })));
        assert!(matches!(validate_mentions(&id, text, &[m(9, 9)]), Err(MentionError::Empty { .. })));
        assert!(matches!(validate_mentions(&id, text, &[m(10, 40)]), Err(MentionError::OutOfBounds { .. })));
    }

    struct Broken;
    impl Tagger for Broken {
        fn name(&self) -> &str {
            "broken"
        }
        fn tag(&self, note_id: &NoteId, text: &str) -> Result<Vec<FactorMention>, TaggerError> {
            if text.contains("eviction") {
                return Err(TaggerError::Protocol { line: 1, message: "boom".into() });
            }
            Ok(vec![FactorMention {
                note_id: note_id.clone(),
                start: 0,
                end: 1000,
                label: FactorLabel::Pain,
                presence: Presence::Yes,
                period: Period::Current,
            }])
        }
    }

    fn note(text: &str) -> ClinicalNote {
        ClinicalNote {
            note_id: NoteId("n1".into()),
            patient_id: crate::ehr::PatientId::new("p"),
            date: crate::dates::parse_date("2012-01-01").unwrap(),
            note_type: crate::ehr::NoteType::PrimaryCare,
            text: text.into(),
        }
    }

    #[test]
    fn failures_are_isolated() {
        let n = note("He faces eviction. Filler one. Filler two. Filler three. Reports pain.");
        let got = tag_note(&[&n], &Broken, &default_lexicon());
        assert!(got.mentions.is_empty());
        assert_eq!(got.failed_paragraphs, 2);

        let t = LexiconTagger::new(default_lexicon());
        let got = tag_note(&[&n], &t, &default_lexicon());
        let labels: Vec<_> = got.mentions.iter().map(|m| (m.label, m.start)).collect();
        assert_eq!(labels, [(FactorLabel::HousingInstability, 9), (FactorLabel::Pain, 65)]);
    }

    #[test]
    fn paragraph_tagging_matches_whole_note() {
        let text = "Pt is homeless. He denies alcohol use. Filler. Filler. History of arrest; now on parole.\nPain 5/10.";
        let n = note(text);
        let lex = default_lexicon();
        let t = LexiconTagger::new(lex.clone());
        let mut whole = t.tag(&n.note_id, text).unwrap();
        whole.sort();
        assert_eq!(tag_note(&[&n], &t, &lex).mentions, whole);
    }
}
