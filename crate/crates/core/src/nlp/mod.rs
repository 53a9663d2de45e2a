//! Note-derived factors: prescreening, tagging, merging per window,
//! dichotomization and span-level evaluation.

pub mod eval;
mod lexicon;
mod merge;
mod tagger;
pub mod text;

pub use lexicon::{default_lexicon, Lexicon, LexiconEntry, LexiconError, DEFAULT_LEXICON};
pub use merge::{dichotomize, merge_window, MergedFactor, NlpFlags};
pub use tagger::{
    prescreen, tag_note, validate_mentions, ExternalTagger, LexiconTagger, MentionError, NoteTagging, Paragraph, Tagger,
    TaggerError,
};

use crate::ehr::NoteId;
use serde::{Deserialize, Serialize};
use std::io::{BufRead, Write};
use thiserror::Error;

string_enum! {
    pub enum FactorLabel {
        SocialIsolation => "social_isolation",
        TransitionOfCare => "transition_of_care",
        BarriersToCare => "barriers_to_care",
        FinancialInsecurity => "financial_insecurity",
        HousingInstability => "housing_instability",
        FoodInsecurity => "food_insecurity",
        Violence => "violence",
        LegalProblems => "legal_problems",
        SubstanceAbuse => "substance_abuse",
        PsychiatricSymptoms => "psychiatric_symptoms",
        Pain => "pain",
        PatientDisability => "patient_disability",
        SuicideOutcome => "suicide_outcome",
    }
}

impl FactorLabel {
    pub const COUNT: usize = 13;

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn is_sdoh(self) -> bool {
        self.index() < 8
    }

    pub fn sdoh() -> &'static [FactorLabel] {
        &Self::ALL[..8]
    }

    /// Note-derived covariates that are not SDOH.
    pub const NON_SDOH_COVARIATES: [FactorLabel; 4] = [
        FactorLabel::PsychiatricSymptoms,
        FactorLabel::SubstanceAbuse,
        FactorLabel::Pain,
        FactorLabel::PatientDisability,
    ];
}

string_enum! {
    pub enum Presence {
        Yes => "yes",
        NotYes => "not_yes",
        Missing => "missing",
    }
}

string_enum! {
    pub enum Period {
        Current => "current",
        NotCurrent => "not_current",
        Missing => "missing",
    }
}

/// A labeled span `[start, end)` in characters of the note text.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FactorMention {
    pub note_id: NoteId,
    pub start: usize,
    pub end: usize,
    pub label: FactorLabel,
    pub presence: Presence,
    pub period: Period,
}

impl FactorMention {
    pub fn overlaps(&self, other: &FactorMention) -> bool {
        self.start < other.end && other.start < self.end
    }
}

#[derive(Debug, Error)]
pub enum MentionIoError {
    #[error("line {line}: {source}")]
    Parse {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Reads JSON-lines mentions; blank lines are skipped.
pub fn read_mentions<R: BufRead>(reader: R) -> Result<Vec<FactorMention>, MentionIoError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|source| MentionIoError::Parse { line: i + 1, source })?);
    }
    Ok(out)
}

pub fn write_mentions<W: Write>(mut w: W, mentions: &[FactorMention]) -> std::io::Result<()> {
    for m in mentions {
        serde_json::to_writer(&mut w, m)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn label_roster() {
        assert_eq!(FactorLabel::ALL.len(), FactorLabel::COUNT);
        let sdoh: Vec<_> = FactorLabel::sdoh().iter().map(|l| l.as_str()).collect();
        assert_eq!(
            sdoh,
            [
                "social_isolation",
                "transition_of_care",
                "barriers_to_care",
                "financial_insecurity",
                "housing_instability",
                "food_insecurity",
                "violence",
                "legal_problems"
            ]
        );
        assert!(FactorLabel::NON_SDOH_COVARIATES.iter().all(|l| !l.is_sdoh()));
    }

    #[test]
    fn mentions_round_trip() {
        let m = FactorMention {
            note_id: NoteId("n1".into()),
            start: 3,
            end: 11,
            label: FactorLabel::Violence,
            presence: Presence::Yes,
            period: Period::NotCurrent,
        };
        let mut buf = Vec::new();
        write_mentions(&mut buf, &[m.clone()]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(
            text.trim(),
            r#"{"note_id":"n1","start":3,"end":11,"label":"violence","presence":"yes","period":"not_current"}"#
        );
        assert_eq!(read_mentions(text.as_bytes()).unwrap(), [m]);
        assert!(read_mentions("{\"note_id\":\"n\"}\n".as_bytes()).is_err());
    }
}
