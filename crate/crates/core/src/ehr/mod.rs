//! EHR-shaped data model.
//!
//! A [`Dataset`] is immutable once built. Construction validates
//! referential integrity and builds a per-patient index whose record lists
//! are sorted by date (stable, so same-day records keep input order).

mod io;
pub mod synth;

pub use io::{
    ingest_dataset, parse_deaths, parse_diagnoses, parse_encounters, parse_notes,
    parse_patients, write_dataset, DatasetPaths, IngestConfig, IngestError, IngestSummary, Table,
};

use crate::codes::Icd9Code;
use crate::dates::Date;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::fmt;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PatientId(pub String);

impl PatientId {
    pub fn new(s: impl Into<String>) -> Self {
        Self(s.into())
    }
    pub fn as_str(&self) -> &str {
        &self.0
    }

    /// Rejects empty or whitespace-only identifiers.
    pub fn parse(s: &str) -> Result<Self, crate::UnknownVariant> {
        if s.trim().is_empty() {
            Err(crate::UnknownVariant { kind: "patient_id", value: s.to_string() })
        } else {
            Ok(Self(s.to_string()))
        }
    }
}

impl fmt::Display for PatientId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NoteId(pub String);

impl fmt::Display for NoteId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

string_enum! {
    pub enum Sex { Male => "male", Female => "female", Unknown => "unknown" }
}

string_enum! {
    pub enum Race {
        White => "white",
        Black => "black",
        Asian => "asian",
        AmericanIndian => "american_indian",
        PacificIslander => "pacific_islander",
        Unknown => "unknown",
    }
}

string_enum! {
    pub enum MaritalStatus {
        Married => "married",
        Single => "single",
        Divorced => "divorced",
        Widowed => "widowed",
        Unknown => "unknown",
    }
}

string_enum! {
    pub enum NoteType {
        EmergencyDepartment => "emergency_department",
        NursingAssessment => "nursing_assessment",
        PrimaryCare => "primary_care",
        HospitalAdmission => "hospital_admission",
        InpatientProgress => "inpatient_progress",
        PainManagement => "pain_management",
        DischargeSummary => "discharge_summary",
        Other => "other",
    }
}

impl NoteType {
    /// The seven note types that feed factor extraction.
    pub fn is_study_type(self) -> bool {
        self != NoteType::Other
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatientRecord {
    pub patient_id: PatientId,
    /// `None` when the source had no usable birth date.
    pub birth_date: Option<Date>,
    pub sex: Sex,
    pub race: Race,
    pub marital_status: MaritalStatus,
}

/// VHA clinic stop code, 1..=999.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct StopCode(u16);

impl StopCode {
    pub fn new(code: u16) -> Option<Self> {
        (1..=999).contains(&code).then_some(Self(code))
    }
    pub fn get(self) -> u16 {
        self.0
    }
    pub fn parse(s: &str) -> Option<Self> {
        let s = s.trim();
        if s.is_empty() || s.len() > 3 || !s.bytes().all(|b| b.is_ascii_digit()) {
            return None;
        }
        s.parse().ok().and_then(Self::new)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Encounter {
    pub patient_id: PatientId,
    pub date: Date,
    pub stop_code: Option<StopCode>,
    /// Notes written for this patient on the same date; derived when the
    /// dataset is built.
    pub note_refs: Vec<NoteId>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiagnosisRecord {
    pub patient_id: PatientId,
    pub date: Date,
    pub code: Icd9Code,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClinicalNote {
    pub note_id: NoteId,
    pub patient_id: PatientId,
    pub date: Date,
    pub note_type: NoteType,
    pub text: String,
}

/// ICD-10 code as used for cause of death: letter, two digits, optional
/// `.` and up to four alphanumerics.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Icd10Code(String);

impl Icd10Code {
    pub fn parse(s: &str) -> Option<Self> {
        let s = s.trim().to_ascii_uppercase();
        let b = s.as_bytes();
        if b.len() < 3 || !b[0].is_ascii_uppercase() || !b[1].is_ascii_digit() || !b[2].is_ascii_digit() {
            return None;
        }
        match &b[3..] {
            [] => {}
            [b'.', rest @ ..] if (1..=4).contains(&rest.len()) && rest.iter().all(u8::is_ascii_alphanumeric) => {}
            _ => return None,
        }
        Some(Self(s))
    }
    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for Icd10Code {
    type Error = String;
    fn try_from(s: String) -> Result<Self, String> {
        Icd10Code::parse(&s).ok_or_else(|| format!("invalid ICD-10 code {s:?}"))
    }
}

impl From<Icd10Code> for String {
    fn from(c: Icd10Code) -> String {
        c.0
    }
}

impl fmt::Display for Icd10Code {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeathRecord {
    pub patient_id: PatientId,
    pub death_date: Date,
    pub underlying_cause: Icd10Code,
}

/// Referential-integrity failure; `row` is the 0-based position within its
/// table.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum IntegrityError {
    #[error("{table} row {row}: duplicate patient_id {patient_id}")]
    DuplicatePatient { table: Table, row: usize, patient_id: PatientId },
    #[error("{table} row {row}: patient_id {patient_id} is not in patients")]
    DanglingPatient { table: Table, row: usize, patient_id: PatientId },
    #[error("{table} row {row}: duplicate note_id {note_id}")]
    DuplicateNote { table: Table, row: usize, note_id: NoteId },
    #[error("{table} row {row}: {message}")]
    Invalid { table: Table, row: usize, message: String },
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
struct PatientIndex {
    encounters: Vec<usize>,
    diagnoses: Vec<usize>,
    notes: Vec<usize>,
    death: Option<usize>,
}

#[derive(Debug, Clone, Default)]
pub struct Dataset {
    patients: Vec<PatientRecord>,
    encounters: Vec<Encounter>,
    diagnoses: Vec<DiagnosisRecord>,
    notes: Vec<ClinicalNote>,
    deaths: Vec<DeathRecord>,
    by_id: HashMap<PatientId, usize>,
    index: Vec<PatientIndex>,
}

impl PartialEq for Dataset {
    fn eq(&self, other: &Self) -> bool {
        self.patients == other.patients
            && self.encounters == other.encounters
            && self.diagnoses == other.diagnoses
            && self.notes == other.notes
            && self.deaths == other.deaths
    }
}

impl Dataset {
    pub fn from_parts(
        patients: Vec<PatientRecord>,
        mut encounters: Vec<Encounter>,
        diagnoses: Vec<DiagnosisRecord>,
        notes: Vec<ClinicalNote>,
        deaths: Vec<DeathRecord>,
    ) -> Result<Self, IntegrityError> {
        let mut by_id = HashMap::with_capacity(patients.len());
        for (row, p) in patients.iter().enumerate() {
            if by_id.insert(p.patient_id.clone(), row).is_some() {
                return Err(IntegrityError::DuplicatePatient {
                    table: Table::Patients,
                    row,
                    patient_id: p.patient_id.clone(),
                });
            }
        }
        let mut index = vec![PatientIndex::default(); patients.len()];
        let lookup = |table: Table, row: usize, id: &PatientId| {
            by_id.get(id).copied().ok_or_else(|| IntegrityError::DanglingPatient {
                table,
                row,
                patient_id: id.clone(),
            })
        };

        for (row, e) in encounters.iter().enumerate() {
            index[lookup(Table::Encounters, row, &e.patient_id)?].encounters.push(row);
        }
        for (row, d) in diagnoses.iter().enumerate() {
            index[lookup(Table::Diagnoses, row, &d.patient_id)?].diagnoses.push(row);
        }
        let mut note_ids = HashMap::with_capacity(notes.len());
        for (row, n) in notes.iter().enumerate() {
            if note_ids.insert(n.note_id.clone(), row).is_some() {
                return Err(IntegrityError::DuplicateNote {
                    table: Table::Notes,
                    row,
                    note_id: n.note_id.clone(),
                });
            }
            index[lookup(Table::Notes, row, &n.patient_id)?].notes.push(row);
        }
        for (row, d) in deaths.iter().enumerate() {
            let slot = &mut index[lookup(Table::Deaths, row, &d.patient_id)?];
            if slot.death.replace(row).is_some() {
                return Err(IntegrityError::Invalid {
                    table: Table::Deaths,
                    row,
                    message: format!("second death record for {}", d.patient_id),
                });
            }
        }

        for slot in &mut index {
            slot.encounters.sort_by_key(|&i| encounters[i].date);
            slot.diagnoses.sort_by_key(|&i| diagnoses[i].date);
            slot.notes.sort_by_key(|&i| notes[i].date);
        }

        // Death may not precede the patient's first record.
        for slot in &index {
            if let Some(row) = slot.death {
                let first = [
                    slot.encounters.first().map(|&i| encounters[i].date),
                    slot.diagnoses.first().map(|&i| diagnoses[i].date),
                    slot.notes.first().map(|&i| notes[i].date),
                ]
                .into_iter()
                .flatten()
                .min();
                if let Some(first) = first {
                    if deaths[row].death_date < first {
                        return Err(IntegrityError::Invalid {
                            table: Table::Deaths,
                            row,
                            message: format!(
                                "death date {} precedes first record {first}",
                                deaths[row].death_date
                            ),
                        });
                    }
                }
            }
        }

        // Link each encounter to the same-day notes of its patient.
        for slot in &index {
            let mut n = 0;
            for &ei in &slot.encounters {
                let date = encounters[ei].date;
                while n < slot.notes.len() && notes[slot.notes[n]].date < date {
                    n += 1;
                }
                encounters[ei].note_refs = slot.notes[n..]
                    .iter()
                    .take_while(|&&ni| notes[ni].date == date)
                    .map(|&ni| notes[ni].note_id.clone())
                    .collect();
            }
        }

        Ok(Self {
            patients,
            encounters,
            diagnoses,
            notes,
            deaths,
            by_id,
            index,
        })
    }

    pub fn patients(&self) -> &[PatientRecord] {
        &self.patients
    }
    pub fn encounters(&self) -> &[Encounter] {
        &self.encounters
    }
    pub fn diagnoses(&self) -> &[DiagnosisRecord] {
        &self.diagnoses
    }
    pub fn notes(&self) -> &[ClinicalNote] {
        &self.notes
    }
    pub fn deaths(&self) -> &[DeathRecord] {
        &self.deaths
    }

    pub fn patient(&self, id: &PatientId) -> Option<&PatientRecord> {
        self.by_id.get(id).map(|&i| &self.patients[i])
    }

    fn slot(&self, id: &PatientId) -> Option<&PatientIndex> {
        self.by_id.get(id).map(|&i| &self.index[i])
    }

    /// Encounters of `id` in date order.
    pub fn encounters_of<'a>(&'a self, id: &PatientId) -> impl Iterator<Item = &'a Encounter> + 'a {
        self.slot(id)
            .into_iter()
            .flat_map(move |s| s.encounters.iter().map(move |&i| &self.encounters[i]))
    }

    pub fn diagnoses_of<'a>(&'a self, id: &PatientId) -> impl Iterator<Item = &'a DiagnosisRecord> + 'a {
        self.slot(id)
            .into_iter()
            .flat_map(move |s| s.diagnoses.iter().map(move |&i| &self.diagnoses[i]))
    }

    /// Notes of `id` in date order; same-day notes keep input order.
    pub fn notes_of<'a>(&'a self, id: &PatientId) -> impl Iterator<Item = &'a ClinicalNote> + 'a {
        self.slot(id)
            .into_iter()
            .flat_map(move |s| s.notes.iter().map(move |&i| &self.notes[i]))
    }

    pub fn death_of(&self, id: &PatientId) -> Option<&DeathRecord> {
        self.slot(id).and_then(|s| s.death).map(|i| &self.deaths[i])
    }

    /// Date-sorted slices are binary searchable; these return the
    /// sub-range of records dated in `[start, end)`.
    pub fn diagnoses_between<'a>(
        &'a self,
        id: &PatientId,
        start: Date,
        end: Date,
    ) -> impl Iterator<Item = &'a DiagnosisRecord> + 'a {
        let rows: &[usize] = self.slot(id).map(|s| s.diagnoses.as_slice()).unwrap_or(&[]);
        let lo = rows.partition_point(|&i| self.diagnoses[i].date < start);
        let hi = rows.partition_point(|&i| self.diagnoses[i].date < end);
        rows[lo..hi.max(lo)].iter().map(move |&i| &self.diagnoses[i])
    }

    pub fn encounters_between<'a>(
        &'a self,
        id: &PatientId,
        start: Date,
        end: Date,
    ) -> impl Iterator<Item = &'a Encounter> + 'a {
        let rows: &[usize] = self.slot(id).map(|s| s.encounters.as_slice()).unwrap_or(&[]);
        let lo = rows.partition_point(|&i| self.encounters[i].date < start);
        let hi = rows.partition_point(|&i| self.encounters[i].date < end);
        rows[lo..hi.max(lo)].iter().map(move |&i| &self.encounters[i])
    }

    pub fn notes_between<'a>(
        &'a self,
        id: &PatientId,
        start: Date,
        end: Date,
    ) -> impl Iterator<Item = &'a ClinicalNote> + 'a {
        let rows: &[usize] = self.slot(id).map(|s| s.notes.as_slice()).unwrap_or(&[]);
        let lo = rows.partition_point(|&i| self.notes[i].date < start);
        let hi = rows.partition_point(|&i| self.notes[i].date < end);
        rows[lo..hi.max(lo)].iter().map(move |&i| &self.notes[i])
    }

    /// Earliest dated encounter, diagnosis or note.
    pub fn first_record_date(&self, id: &PatientId) -> Option<Date> {
        let s = self.slot(id)?;
        [
            s.encounters.first().map(|&i| self.encounters[i].date),
            s.diagnoses.first().map(|&i| self.diagnoses[i].date),
            s.notes.first().map(|&i| self.notes[i].date),
        ]
        .into_iter()
        .flatten()
        .min()
    }

    pub fn last_record_date(&self, id: &PatientId) -> Option<Date> {
        let s = self.slot(id)?;
        [
            s.encounters.last().map(|&i| self.encounters[i].date),
            s.diagnoses.last().map(|&i| self.diagnoses[i].date),
            s.notes.last().map(|&i| self.notes[i].date),
        ]
        .into_iter()
        .flatten()
        .max()
    }
}
