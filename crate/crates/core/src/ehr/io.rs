//! Table readers and writers.
//!
//! CSV tables require a header row with exactly the documented columns.
//! Line numbers in errors are 1-based physical lines of the source file.

use super::*;
use crate::dates::parse_date;
use serde::Deserialize;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

string_enum! {
    pub enum Table {
        Patients => "patients",
        Encounters => "encounters",
        Diagnoses => "diagnoses",
        Notes => "notes",
        Deaths => "deaths",
    }
}

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("{table}: line {line}, column {column}: {message}")]
    Malformed {
        table: Table,
        line: u64,
        column: String,
        message: String,
    },
    #[error("{table}: line {line}, column {column}: unknown value {value:?}")]
    UnknownValue {
        table: Table,
        line: u64,
        column: String,
        value: String,
    },
    #[error("{table}: line {line}: expected header {expected:?}")]
    Header {
        table: Table,
        line: u64,
        expected: String,
    },
    #[error("{table}: line {line}: dangling patient_id {patient_id}")]
    DanglingPatient {
        table: Table,
        line: u64,
        patient_id: PatientId,
    },
    #[error("{table}: line {line}: duplicate patient_id {patient_id}")]
    DuplicatePatient {
        table: Table,
        line: u64,
        patient_id: PatientId,
    },
    #[error("{table}: line {line}: {message}")]
    Integrity {
        table: Table,
        line: u64,
        message: String,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Locations of the five input tables.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetPaths {
    pub patients: PathBuf,
    pub encounters: PathBuf,
    pub diagnoses: PathBuf,
    pub notes: PathBuf,
    pub deaths: PathBuf,
}

impl DatasetPaths {
    pub fn in_dir(dir: impl AsRef<Path>) -> Self {
        let dir = dir.as_ref();
        Self {
            patients: dir.join("patients.csv"),
            encounters: dir.join("encounters.csv"),
            diagnoses: dir.join("diagnoses.csv"),
            notes: dir.join("notes.jsonl"),
            deaths: dir.join("deaths.csv"),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestConfig {
    /// When set, birth dates after this day are rejected.
    pub study_end: Option<Date>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestSummary {
    pub patients: usize,
    pub encounters: usize,
    pub diagnoses: usize,
    pub notes: usize,
    pub deaths: usize,
}

type Rows<T> = Vec<(u64, T)>;

struct CsvTable<R: Read> {
    table: Table,
    reader: csv::Reader<R>,
}

impl<R: Read> CsvTable<R> {
    fn open(table: Table, input: R, columns: &[&str]) -> Result<Self, IngestError> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .flexible(true)
            .from_reader(input);
        let header_err = || IngestError::Header {
            table,
            line: 1,
            expected: columns.join(","),
        };
        let headers = reader.headers().map_err(|_| header_err())?;
        if headers.len() != columns.len() || headers.iter().zip(columns).any(|(h, c)| h.trim() != *c) {
            return Err(header_err());
        }
        Ok(Self { table, reader })
    }

    fn for_each(
        mut self,
        columns: &[&str],
        mut f: impl FnMut(u64, &csv::StringRecord) -> Result<(), IngestError>,
    ) -> Result<(), IngestError> {
        let mut record = csv::StringRecord::new();
        loop {
            let line = self.reader.position().line();
            match self.reader.read_record(&mut record) {
                Ok(false) => return Ok(()),
                Ok(true) => {}
                Err(e) => {
                    return Err(IngestError::Malformed {
                        table: self.table,
                        line: e.position().map(|p| p.line()).unwrap_or(line),
                        column: String::new(),
                        message: e.to_string(),
                    })
                }
            }
            let line = record.position().map(|p| p.line()).unwrap_or(line);
            if record.len() != columns.len() {
                return Err(IngestError::Malformed {
                    table: self.table,
                    line,
                    column: String::new(),
                    message: format!("expected {} fields, found {}", columns.len(), record.len()),
                });
            }
            f(line, &record)?;
        }
    }
}

fn malformed(table: Table, line: u64, column: &str, message: impl Into<String>) -> IngestError {
    IngestError::Malformed {
        table,
        line,
        column: column.to_string(),
        message: message.into(),
    }
}

fn field_patient(table: Table, line: u64, s: &str) -> Result<PatientId, IngestError> {
    let s = s.trim();
    if s.is_empty() {
        return Err(malformed(table, line, "patient_id", "empty patient_id"));
    }
    Ok(PatientId::new(s))
}

fn field_date(table: Table, line: u64, column: &str, s: &str) -> Result<Date, IngestError> {
    parse_date(s).ok_or_else(|| malformed(table, line, column, format!("invalid ISO-8601 date {s:?}")))
}

fn field_enum<T: std::str::FromStr>(table: Table, line: u64, column: &str, s: &str) -> Result<T, IngestError> {
    s.trim().parse().map_err(|_| IngestError::UnknownValue {
        table,
        line,
        column: column.to_string(),
        value: s.to_string(),
    })
}

const PATIENT_COLUMNS: &[&str] = &["patient_id", "birth_date", "sex", "race", "marital_status"];
const ENCOUNTER_COLUMNS: &[&str] = &["patient_id", "date", "stop_code"];
const DIAGNOSIS_COLUMNS: &[&str] = &["patient_id", "date", "icd9_code"];
const DEATH_COLUMNS: &[&str] = &["patient_id", "death_date", "underlying_cause_icd10"];

pub fn parse_patients<R: Read>(input: R) -> Result<Rows<PatientRecord>, IngestError> {
    let t = Table::Patients;
    let mut rows = Vec::new();
    CsvTable::open(t, input, PATIENT_COLUMNS)?.for_each(PATIENT_COLUMNS, |line, r| {
        let birth = r[1].trim();
        let birth_date = if birth.is_empty() {
            None
        } else {
            Some(field_date(t, line, "birth_date", birth)?)
        };
        rows.push((
            line,
            PatientRecord {
                patient_id: field_patient(t, line, &r[0])?,
                birth_date,
                sex: field_enum(t, line, "sex", &r[2])?,
                race: field_enum(t, line, "race", &r[3])?,
                marital_status: field_enum(t, line, "marital_status", &r[4])?,
            },
        ));
        Ok(())
    })?;
    Ok(rows)
}

pub fn parse_encounters<R: Read>(input: R) -> Result<Rows<Encounter>, IngestError> {
    let t = Table::Encounters;
    let mut rows = Vec::new();
    CsvTable::open(t, input, ENCOUNTER_COLUMNS)?.for_each(ENCOUNTER_COLUMNS, |line, r| {
        let stop = r[2].trim();
        let stop_code = if stop.is_empty() {
            None
        } else {
            Some(StopCode::parse(stop).ok_or_else(|| {
                malformed(t, line, "stop_code", format!("stop code must be 1-999 with at most 3 digits, got {stop:?}"))
            })?)
        };
        rows.push((
            line,
            Encounter {
                patient_id: field_patient(t, line, &r[0])?,
                date: field_date(t, line, "date", &r[1])?,
                stop_code,
                note_refs: Vec::new(),
            },
        ));
        Ok(())
    })?;
    Ok(rows)
}

pub fn parse_diagnoses<R: Read>(input: R) -> Result<Rows<DiagnosisRecord>, IngestError> {
    let t = Table::Diagnoses;
    let mut rows = Vec::new();
    CsvTable::open(t, input, DIAGNOSIS_COLUMNS)?.for_each(DIAGNOSIS_COLUMNS, |line, r| {
        let code = Icd9Code::parse(&r[2]).map_err(|e| malformed(t, line, "icd9_code", e.to_string()))?;
        rows.push((
            line,
            DiagnosisRecord {
                patient_id: field_patient(t, line, &r[0])?,
                date: field_date(t, line, "date", &r[1])?,
                code,
            },
        ));
        Ok(())
    })?;
    Ok(rows)
}

pub fn parse_deaths<R: Read>(input: R) -> Result<Rows<DeathRecord>, IngestError> {
    let t = Table::Deaths;
    let mut rows = Vec::new();
    CsvTable::open(t, input, DEATH_COLUMNS)?.for_each(DEATH_COLUMNS, |line, r| {
        let cause = Icd10Code::parse(&r[2]).ok_or_else(|| {
            malformed(t, line, "underlying_cause_icd10", format!("invalid ICD-10 code {:?}", &r[2]))
        })?;
        rows.push((
            line,
            DeathRecord {
                patient_id: field_patient(t, line, &r[0])?,
                death_date: field_date(t, line, "death_date", &r[1])?,
                underlying_cause: cause,
            },
        ));
        Ok(())
    })?;
    Ok(rows)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct NoteLine {
    #[serde(default)]
    note_id: Option<String>,
    patient_id: String,
    date: String,
    note_type: String,
    text: String,
}

/// One JSON object per line. Blank lines are skipped. A missing `note_id`
/// defaults to `note-<line>`.
pub fn parse_notes<R: Read>(input: R) -> Result<Rows<ClinicalNote>, IngestError> {
    let t = Table::Notes;
    let mut rows = Vec::new();
    let reader = BufReader::new(input);
    for (i, line) in reader.lines().enumerate() {
        let line_no = i as u64 + 1;
        let text = line.map_err(|e| malformed(t, line_no, "", e.to_string()))?;
        if text.trim().is_empty() {
            continue;
        }
        let raw: NoteLine = serde_json::from_str(&text).map_err(|e| {
            malformed(t, line_no, &format!("char {}", e.column()), e.to_string())
        })?;
        let note_id = match raw.note_id {
            Some(id) if !id.trim().is_empty() => id,
            Some(_) => return Err(malformed(t, line_no, "note_id", "empty note_id")),
            None => format!("note-{line_no}"),
        };
        rows.push((
            line_no,
            ClinicalNote {
                note_id: NoteId(note_id),
                patient_id: field_patient(t, line_no, &raw.patient_id)?,
                date: field_date(t, line_no, "date", &raw.date)?,
                note_type: field_enum(t, line_no, "note_type", &raw.note_type)?,
                text: raw.text,
            },
        ));
    }
    Ok(rows)
}

fn open(path: &Path) -> Result<BufReader<File>, IngestError> {
    File::open(path).map(BufReader::new).map_err(|source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn split<T>(rows: Rows<T>) -> (Vec<u64>, Vec<T>) {
    rows.into_iter().unzip()
}

/// Reads and validates all five tables.
pub fn ingest_dataset(paths: &DatasetPaths, config: &IngestConfig) -> Result<(Dataset, IngestSummary), IngestError> {
    let (p_lines, patients) = split(parse_patients(open(&paths.patients)?)?);
    let (e_lines, encounters) = split(parse_encounters(open(&paths.encounters)?)?);
    let (d_lines, diagnoses) = split(parse_diagnoses(open(&paths.diagnoses)?)?);
    let (n_lines, notes) = split(parse_notes(open(&paths.notes)?)?);
    let (x_lines, deaths) = split(parse_deaths(open(&paths.deaths)?)?);

    if let Some(end) = config.study_end {
        for (line, p) in p_lines.iter().zip(&patients) {
            if p.birth_date.is_some_and(|b| b > end) {
                return Err(malformed(Table::Patients, *line, "birth_date", format!("birth date after study end {end}")));
            }
        }
    }

    let summary = IngestSummary {
        patients: patients.len(),
        encounters: encounters.len(),
        diagnoses: diagnoses.len(),
        notes: notes.len(),
        deaths: deaths.len(),
    };
    let line_of = |table: Table, row: usize| -> u64 {
        let lines = match table {
            Table::Patients => &p_lines,
            Table::Encounters => &e_lines,
            Table::Diagnoses => &d_lines,
            Table::Notes => &n_lines,
            Table::Deaths => &x_lines,
        };
        lines.get(row).copied().unwrap_or(0)
    };
    let dataset = Dataset::from_parts(patients, encounters, diagnoses, notes, deaths).map_err(|e| match e {
        IntegrityError::DuplicatePatient { table, row, patient_id } => IngestError::DuplicatePatient {
            table,
            line: line_of(table, row),
            patient_id,
        },
        IntegrityError::DanglingPatient { table, row, patient_id } => IngestError::DanglingPatient {
            table,
            line: line_of(table, row),
            patient_id,
        },
        IntegrityError::DuplicateNote { table, row, note_id } => IngestError::Integrity {
            table,
            line: line_of(table, row),
            message: format!("duplicate note_id {note_id}"),
        },
        IntegrityError::Invalid { table, row, message } => IngestError::Integrity {
            table,
            line: line_of(table, row),
            message,
        },
    })?;
    Ok((dataset, summary))
}

fn create(path: &Path) -> std::io::Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new)
}

fn date_str(d: Option<Date>) -> String {
    d.map(|d| d.to_string()).unwrap_or_default()
}

#[derive(Serialize)]
struct NoteOut<'a> {
    note_id: &'a str,
    patient_id: &'a str,
    date: String,
    note_type: &'static str,
    text: &'a str,
}

/// Writes the five tables into `paths`. Output is a pure function of the
/// dataset contents.
pub fn write_dataset(dataset: &Dataset, paths: &DatasetPaths) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(create(&paths.patients)?);
    w.write_record(PATIENT_COLUMNS)?;
    for p in dataset.patients() {
        w.write_record([
            p.patient_id.as_str(),
            &date_str(p.birth_date),
            p.sex.as_str(),
            p.race.as_str(),
            p.marital_status.as_str(),
        ])?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_writer(create(&paths.encounters)?);
    w.write_record(ENCOUNTER_COLUMNS)?;
    for e in dataset.encounters() {
        let stop = e.stop_code.map(|s| s.get().to_string()).unwrap_or_default();
        w.write_record([e.patient_id.as_str(), &e.date.to_string(), &stop])?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_writer(create(&paths.diagnoses)?);
    w.write_record(DIAGNOSIS_COLUMNS)?;
    for d in dataset.diagnoses() {
        w.write_record([d.patient_id.as_str(), &d.date.to_string(), d.code.as_str()])?;
    }
    w.flush()?;

    let mut out = create(&paths.notes)?;
    for n in dataset.notes() {
        let line = NoteOut {
            note_id: &n.note_id.0,
            patient_id: n.patient_id.as_str(),
            date: n.date.to_string(),
            note_type: n.note_type.as_str(),
            text: &n.text,
        };
        serde_json::to_writer(&mut out, &line)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;

    let mut w = csv::Writer::from_writer(create(&paths.deaths)?);
    w.write_record(DEATH_COLUMNS)?;
    for d in dataset.deaths() {
        w.write_record([d.patient_id.as_str(), &d.death_date.to_string(), d.underlying_cause.as_str()])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn patients_header_is_required() {
        let err = parse_patients("id,birth\n1,1960-01-01\n".as_bytes()).unwrap_err();
        assert!(matches!(err, IngestError::Header { .. }));
    }

    #[test]
    fn unknown_enum_reports_line_and_column() {
        let csv = "patient_id,birth_date,sex,race,marital_status\np1,1960-01-01,male,white,married\np2,1970-01-01,mail,white,single\n";
        match parse_patients(csv.as_bytes()).unwrap_err() {
            IngestError::UnknownValue { line, column, value, .. } => {
                assert_eq!(line, 3);
                assert_eq!(column, "sex");
                assert_eq!(value, "mail");
            }
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn bad_icd9_is_a_grammar_error() {
        let csv = "patient_id,date,icd9_code\np1,2012-01-01,XYZ\n";
        match parse_diagnoses(csv.as_bytes()).unwrap_err() {
            IngestError::Malformed { line, column, message, .. } => {
                assert_eq!(line, 2);
                assert_eq!(column, "icd9_code");
                assert!(message.contains("ICD-9"), "{message}");
            }
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn notes_default_ids_and_reject_unknown_type() {
        let jsonl = "{\"patient_id\":\"p1\",\"date\":\"2012-01-01\",\"note_type\":\"primary_care\",\"text\":\"hi\"}\n\n";
        let rows = parse_notes(jsonl.as_bytes()).unwrap();
        assert_eq!(rows[0].1.note_id.0, "note-1");
        let bad = "{\"patient_id\":\"p1\",\"date\":\"2012-01-01\",\"note_type\":\"radiology\",\"text\":\"hi\"}\n";
        assert!(matches!(parse_notes(bad.as_bytes()).unwrap_err(), IngestError::UnknownValue { .. }));
    }

    #[test]
    fn wrong_field_count() {
        let csv = "patient_id,date,stop_code\np1,2012-01-01\n";
        assert!(matches!(parse_encounters(csv.as_bytes()).unwrap_err(), IngestError::Malformed { line: 2, .. }));
    }
}
