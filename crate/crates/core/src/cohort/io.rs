use super::{CohortMember, ExclusionReport};
use crate::dates::{days_between, parse_date};
use crate::ehr::PatientId;
use std::io::{Read, Write};
use thiserror::Error;

const COHORT_HEADER: [&str; 6] = ["patient_id", "entry_date", "exit_date", "exit_reason", "entry_fy", "followup_days"];
const EXCLUSION_HEADER: [&str; 2] = ["patient_id", "reason"];

#[derive(Debug, Error)]
pub enum CohortCsvError {
    #[error("{file}: expected header {expected:?}, found {found:?}")]
    Header {
        file: &'static str,
        expected: String,
        found: String,
    },
    #[error("{file} line {line}: {message}")]
    Malformed { file: &'static str, line: u64, message: String },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn check_header<R: Read>(rdr: &mut csv::Reader<R>, file: &'static str, expected: &[&str]) -> Result<(), CohortCsvError> {
    let header = rdr.headers()?.clone();
    if header.iter().ne(expected.iter().copied()) {
        return Err(CohortCsvError::Header {
            file,
            expected: expected.join(","),
            found: header.iter().collect::<Vec<_>>().join(","),
        });
    }
    Ok(())
}

pub fn write_cohort<W: Write>(w: W, members: &[CohortMember]) -> Result<(), CohortCsvError> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(COHORT_HEADER)?;
    for m in members {
        out.write_record([
            m.patient_id.to_string(),
            m.entry_date.to_string(),
            m.exit_date.to_string(),
            m.exit_reason.to_string(),
            m.entry_fiscal_year.to_string(),
            m.followup_days.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// Reads cohort.csv, checking that dates are ordered and follow-up agrees
/// with them.
pub fn read_cohort<R: Read>(r: R) -> Result<Vec<CohortMember>, CohortCsvError> {
    const FILE: &str = "cohort.csv";
    let mut rdr = csv::Reader::from_reader(r);
    check_header(&mut rdr, FILE, &COHORT_HEADER)?;
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let bad = |message: String| CohortCsvError::Malformed { file: FILE, line, message };
        if rec.len() != COHORT_HEADER.len() {
            return Err(bad(format!("expected {} fields, found {}", COHORT_HEADER.len(), rec.len())));
        }
        let date = |i: usize| parse_date(&rec[i]).ok_or_else(|| bad(format!("bad {} {:?}", COHORT_HEADER[i], &rec[i])));
        let m = CohortMember {
            patient_id: PatientId::parse(&rec[0]).map_err(|e| bad(e.to_string()))?,
            entry_date: date(1)?,
            exit_date: date(2)?,
            exit_reason: rec[3].parse().map_err(|e: crate::UnknownVariant| bad(e.to_string()))?,
            entry_fiscal_year: rec[4].parse().map_err(|_| bad(format!("bad entry_fy {:?}", &rec[4])))?,
            followup_days: rec[5].parse().map_err(|_| bad(format!("bad followup_days {:?}", &rec[5])))?,
        };
        if m.entry_date > m.exit_date || m.followup_days != days_between(m.entry_date, m.exit_date) {
            return Err(bad("entry, exit and follow-up disagree".into()));
        }
        out.push(m);
    }
    Ok(out)
}

pub fn write_exclusions<W: Write>(w: W, exclusions: &[ExclusionReport]) -> Result<(), CohortCsvError> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(EXCLUSION_HEADER)?;
    for e in exclusions {
        out.write_record([e.patient_id.as_str(), e.reason.as_str()])?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_exclusions<R: Read>(r: R) -> Result<Vec<ExclusionReport>, CohortCsvError> {
    const FILE: &str = "exclusions.csv";
    let mut rdr = csv::Reader::from_reader(r);
    check_header(&mut rdr, FILE, &EXCLUSION_HEADER)?;
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let bad = |message: String| CohortCsvError::Malformed { file: FILE, line, message };
        if rec.len() != 2 {
            return Err(bad(format!("expected 2 fields, found {}", rec.len())));
        }
        out.push(ExclusionReport {
            patient_id: PatientId::parse(&rec[0]).map_err(|e| bad(e.to_string()))?,
            reason: rec[1].parse().map_err(|e: crate::UnknownVariant| bad(e.to_string()))?,
        });
    }
    Ok(out)
}
