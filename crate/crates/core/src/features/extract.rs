use super::{AssessmentWindows, Subject, WindowKind};
use crate::codes::{default_charlson, default_mental_health, default_structured_sdoh, CodeMapSet};
use crate::ehr::{ClinicalNote, Dataset, NoteId, PatientId};
use crate::nlp::{merge_window, tag_note, FactorLabel, FactorMention, Lexicon, Tagger};
use rayon::prelude::*;
use std::collections::{BTreeMap, HashMap};
use std::io::{Read, Write};
use thiserror::Error;

/// The three structured code maps used by the study.
#[derive(Debug, Clone)]
pub struct StudyMaps {
    pub structured_sdoh: CodeMapSet,
    pub mental_health: CodeMapSet,
    pub charlson: CodeMapSet,
}

impl Default for StudyMaps {
    fn default() -> Self {
        Self {
            structured_sdoh: default_structured_sdoh(),
            mental_health: default_mental_health(),
            charlson: default_charlson(),
        }
    }
}

impl StudyMaps {
    fn sources(&self) -> [(&'static str, &CodeMapSet); 3] {
        [("structured", &self.structured_sdoh), ("mh", &self.mental_health), ("charlson", &self.charlson)]
    }

    pub fn columns(&self) -> Vec<String> {
        self.sources()
            .iter()
            .flat_map(|(prefix, m)| m.factor_names().map(move |f| format!("{prefix}.{f}")))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FlagRow {
    pub set_id: usize,
    pub patient_id: PatientId,
    pub is_case: bool,
    pub window: WindowKind,
    pub bits: Vec<bool>,
}

/// Binary flags per subject and window, two rows per subject
/// (covariate then exposure).
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct FlagTable {
    pub columns: Vec<String>,
    pub rows: Vec<FlagRow>,
}

impl FlagTable {
    pub fn column(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    /// Row lookup keyed by (set, patient, case flag, window).
    pub fn index(&self) -> HashMap<(usize, &PatientId, bool, WindowKind), &FlagRow> {
        self.rows.iter().map(|r| ((r.set_id, &r.patient_id, r.is_case, r.window), r)).collect()
    }
}

fn rows_for<F>(subjects: &[Subject], windows: &[AssessmentWindows], f: F) -> Vec<FlagRow>
where
    F: Fn(&Subject, crate::dates::DateWindow) -> Vec<bool> + Sync,
{
    subjects
        .par_iter()
        .zip(windows)
        .flat_map_iter(|(s, w)| {
            WindowKind::ALL.iter().map(|&kind| FlagRow {
                set_id: s.set_id,
                patient_id: s.patient_id.clone(),
                is_case: s.is_case,
                window: kind,
                bits: f(s, w.get(kind)),
            }).collect::<Vec<_>>()
        })
        .collect()
}

/// Structured SDOH, mental-health and comorbidity flags for every
/// subject in both windows.
pub fn extract_structured(subjects: &[Subject], windows: &[AssessmentWindows], dataset: &Dataset, maps: &StudyMaps) -> FlagTable {
    assert_eq!(subjects.len(), windows.len());
    let sources = maps.sources();
    let rows = rows_for(subjects, windows, |s, w| {
        sources
            .iter()
            .flat_map(|(_, m)| {
                let flags = m.flags_in_window(&s.patient_id, dataset, w);
                m.factor_names().map(|f| flags.get(f)).collect::<Vec<_>>()
            })
            .collect()
    });
    FlagTable { columns: maps.columns(), rows }
}

#[derive(Debug, Clone, Default)]
pub struct NlpExtraction {
    pub mentions: Vec<FactorMention>,
    pub flags: FlagTable,
    pub notes_tagged: usize,
    pub failed_paragraphs: usize,
}

fn study_notes_in<'a>(dataset: &'a Dataset, id: &PatientId, w: crate::dates::DateWindow) -> impl Iterator<Item = &'a ClinicalNote> + 'a {
    dataset.notes_between(id, w.start, w.end).filter(|n| n.note_type.is_study_type())
}

/// Tags every study-type note that falls in some subject's window once,
/// then merges mentions per subject and window into 13 label bits.
pub fn extract_nlp(
    subjects: &[Subject],
    windows: &[AssessmentWindows],
    dataset: &Dataset,
    tagger: &dyn Tagger,
    lexicon: &Lexicon,
) -> NlpExtraction {
    assert_eq!(subjects.len(), windows.len());
    let mut notes: BTreeMap<&NoteId, &ClinicalNote> = BTreeMap::new();
    for (s, w) in subjects.iter().zip(windows) {
        for &kind in WindowKind::ALL {
            for n in study_notes_in(dataset, &s.patient_id, w.get(kind)) {
                notes.insert(&n.note_id, n);
            }
        }
    }
    let note_list: Vec<&ClinicalNote> = notes.values().copied().collect();
    let tagging = tag_note(&note_list, tagger, lexicon);
    let mut by_note: HashMap<&NoteId, Vec<&FactorMention>> = HashMap::new();
    for m in &tagging.mentions {
        by_note.entry(&m.note_id).or_default().push(m);
    }
    let rows = rows_for(subjects, windows, |s, w| {
        let merged = merge_window(
            study_notes_in(dataset, &s.patient_id, w)
                .filter_map(|n| by_note.get(&n.note_id))
                .flat_map(|v| v.iter().copied()),
        );
        FactorLabel::ALL.iter().map(|&l| merged.bit(l)).collect()
    });
    let columns = FactorLabel::ALL.iter().map(|l| format!("nlp.{l}")).collect();
    NlpExtraction {
        flags: FlagTable { columns, rows },
        notes_tagged: note_list.len(),
        failed_paragraphs: tagging.failed_paragraphs,
        mentions: tagging.mentions,
    }
}

const KEY_COLUMNS: [&str; 4] = ["set_id", "patient_id", "is_case", "window"];

#[derive(Debug, Error)]
pub enum FlagCsvError {
    #[error("flag table header must start with {expected:?}, found {found:?}")]
    Header { expected: String, found: String },
    #[error("flag table line {line}: {message}")]
    Malformed { line: u64, message: String },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub fn write_flags<W: Write>(w: W, table: &FlagTable) -> Result<(), FlagCsvError> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(KEY_COLUMNS.iter().copied().chain(table.columns.iter().map(String::as_str)))?;
    for r in &table.rows {
        let mut rec = vec![
            r.set_id.to_string(),
            r.patient_id.to_string(),
            u8::from(r.is_case).to_string(),
            r.window.to_string(),
        ];
        rec.extend(r.bits.iter().map(|&b| u8::from(b).to_string()));
        out.write_record(rec)?;
    }
    out.flush()?;
    Ok(())
}

pub(crate) fn parse_bit(s: &str) -> Option<bool> {
    match s {
        "0" => Some(false),
        "1" => Some(true),
        _ => None,
    }
}

pub fn read_flags<R: Read>(r: R) -> Result<FlagTable, FlagCsvError> {
    let mut rdr = csv::Reader::from_reader(r);
    let header = rdr.headers()?.clone();
    if header.len() < KEY_COLUMNS.len() || header.iter().take(KEY_COLUMNS.len()).ne(KEY_COLUMNS) {
        return Err(FlagCsvError::Header {
            expected: KEY_COLUMNS.join(","),
            found: header.iter().collect::<Vec<_>>().join(","),
        });
    }
    let columns: Vec<String> = header.iter().skip(KEY_COLUMNS.len()).map(String::from).collect();
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let bad = |message: String| FlagCsvError::Malformed { line, message };
        if rec.len() != header.len() {
            return Err(bad(format!("expected {} fields, found {}", header.len(), rec.len())));
        }
        let bits = rec
            .iter()
            .skip(KEY_COLUMNS.len())
            .map(|v| parse_bit(v).ok_or_else(|| bad(format!("flag {v:?} is not 0 or 1"))))
            .collect::<Result<_, _>>()?;
        rows.push(FlagRow {
            set_id: rec[0].parse().map_err(|_| bad(format!("bad set_id {:?}", &rec[0])))?,
            patient_id: PatientId::parse(&rec[1]).map_err(|e| bad(e.to_string()))?,
            is_case: parse_bit(&rec[2]).ok_or_else(|| bad(format!("bad is_case {:?}", &rec[2])))?,
            window: rec[3].parse().map_err(|e: crate::UnknownVariant| bad(e.to_string()))?,
            bits,
        });
    }
    Ok(FlagTable { columns, rows })
}
