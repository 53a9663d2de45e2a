//! Base cohort: entry and exit dates, exclusions, suicide cases and crude
//! incidence.
//!
//! Entry is the latest of (first record + 2 years, 18th birthday, period
//! start). Exit is the earliest of (suicide, other death, last record,
//! period end), ties resolved suicide > other death > last record > period
//! end. A patient with a death record is treated as observed until death,
//! so `last_record` only applies to patients without one.

mod incidence;
mod io;

pub use incidence::{incidence, CiMethod, IncidenceError, IncidenceEstimate};
pub use io::{read_cohort, read_exclusions, write_cohort, write_exclusions, CohortCsvError};

use crate::codes::{default_suicide_attempt, CodeMapSet};
use crate::dates::{add_years, age_on, days_between, fiscal_year, fiscal_year_end, fiscal_year_start, sub_years, Date};
use crate::ehr::{Dataset, DeathRecord, Icd10Code, PatientId, PatientRecord, Sex};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;

pub const DAYS_PER_YEAR: f64 = 365.25;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StudyPeriod {
    pub start: Date,
    pub end: Date,
}

impl StudyPeriod {
    pub fn new(start: Date, end: Date) -> Option<Self> {
        (start < end).then_some(Self { start, end })
    }

    /// First day of `first_fy` through last day of `last_fy`.
    pub fn fiscal_years(first_fy: i32, last_fy: i32) -> Option<Self> {
        Self::new(fiscal_year_start(first_fy), fiscal_year_end(last_fy))
    }
}

impl Default for StudyPeriod {
    /// FY2011 through FY2015.
    fn default() -> Self {
        Self::fiscal_years(2011, 2015).expect("valid period")
    }
}

string_enum! {
    pub enum ExitReason {
        Suicide => "suicide",
        OtherDeath => "other_death",
        LastRecord => "last_record",
        StudyEnd => "study_end",
    }
}

string_enum! {
    pub enum ExclusionReason {
        PriorSuicideAttempt => "prior_suicide_attempt",
        NoNotesBeforeEntry => "no_notes_before_entry",
        MissingDemographics => "missing_demographics",
        Over100 => "over_100",
        NoOverlapWithStudy => "no_overlap_with_study",
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CohortMember {
    pub patient_id: PatientId,
    pub entry_date: Date,
    pub exit_date: Date,
    pub exit_reason: ExitReason,
    pub entry_fiscal_year: i32,
    pub followup_days: i64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExclusionReport {
    pub patient_id: PatientId,
    pub reason: ExclusionReason,
}

#[derive(Debug, Clone)]
pub struct CohortConfig {
    pub period: StudyPeriod,
    pub history_years: i32,
    pub adult_age: i32,
    pub max_age: i32,
    /// Years before entry searched for prior attempts; `None` searches all
    /// history.
    pub attempt_lookback_years: Option<i32>,
    pub attempt_codes: CodeMapSet,
}

impl Default for CohortConfig {
    fn default() -> Self {
        Self {
            period: StudyPeriod::default(),
            history_years: 2,
            adult_age: 18,
            max_age: 100,
            attempt_lookback_years: None,
            attempt_codes: default_suicide_attempt(),
        }
    }
}

/// X60-X84 (any extension), Y87.0, U03 (any extension).
pub fn is_suicide_cause(code: &Icd10Code) -> bool {
    let s = code.as_str();
    let (head, ext) = s.split_once('.').unwrap_or((s, ""));
    let letter = head.as_bytes()[0];
    let num: u32 = head[1..].parse().unwrap_or(u32::MAX);
    match letter {
        b'X' => (60..=84).contains(&num),
        b'U' => num == 3,
        b'Y' => num == 87 && ext == "0",
        _ => false,
    }
}

/// `None` when the patient has no records or entry falls after the period.
pub fn compute_entry_date(patient: &PatientRecord, dataset: &Dataset, config: &CohortConfig) -> Option<Date> {
    let first = dataset.first_record_date(&patient.patient_id)?;
    let mut entry = add_years(first, config.history_years).max(config.period.start);
    if let Some(birth) = patient.birth_date {
        entry = entry.max(add_years(birth, config.adult_age));
    }
    (entry <= config.period.end).then_some(entry)
}

/// Earliest exit event with its reason; `None` when that precedes `entry`.
pub fn compute_exit(
    patient: &PatientRecord,
    dataset: &Dataset,
    period: StudyPeriod,
    entry: Date,
) -> Option<(Date, ExitReason)> {
    let id = &patient.patient_id;
    let mut candidates: Vec<(Date, ExitReason)> = vec![(period.end, ExitReason::StudyEnd)];
    match dataset.death_of(id) {
        Some(death) => {
            let reason = if is_suicide_cause(&death.underlying_cause) {
                ExitReason::Suicide
            } else {
                ExitReason::OtherDeath
            };
            candidates.push((death.death_date, reason));
        }
        None => {
            if let Some(last) = dataset.last_record_date(id) {
                candidates.push((last, ExitReason::LastRecord));
            }
        }
    }
    // ExitReason's declaration order is the tie-break priority.
    let exit = candidates.into_iter().min_by_key(|&(d, r)| (d, r))?;
    (exit.0 >= entry).then_some(exit)
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct BaseCohort {
    pub members: Vec<CohortMember>,
    pub exclusions: Vec<ExclusionReport>,
}

impl BaseCohort {
    pub fn person_years(&self) -> f64 {
        self.members.iter().map(|m| m.followup_days as f64).sum::<f64>() / DAYS_PER_YEAR
    }

    pub fn excluded_patients(&self) -> usize {
        let mut ids: Vec<&PatientId> = self.exclusions.iter().map(|e| &e.patient_id).collect();
        ids.sort();
        ids.dedup();
        ids.len()
    }
}

fn evaluate(patient: &PatientRecord, dataset: &Dataset, config: &CohortConfig) -> Result<CohortMember, Vec<ExclusionReason>> {
    let id = &patient.patient_id;
    let mut reasons = Vec::new();
    let first = dataset.first_record_date(id);
    let demographics_ok = patient.sex != Sex::Unknown
        && match (patient.birth_date, first) {
            (Some(b), Some(f)) => b <= f,
            (Some(_), None) => true,
            (None, _) => false,
        };
    if !demographics_ok {
        reasons.push(ExclusionReason::MissingDemographics);
    }

    let entry = compute_entry_date(patient, dataset, config);
    let exit = entry.and_then(|e| compute_exit(patient, dataset, config.period, e));
    let (Some(entry), Some((exit_date, exit_reason))) = (entry, exit) else {
        reasons.push(ExclusionReason::NoOverlapWithStudy);
        return Err(reasons);
    };

    let lookback_start = config.attempt_lookback_years.map(|y| sub_years(entry, y));
    let prior_attempt = dataset
        .diagnoses_of(id)
        .take_while(|d| d.date < entry)
        .filter(|d| lookback_start.map_or(true, |s| d.date >= s))
        .any(|d| config.attempt_codes.factors_for_code(&d.code).next().is_some());
    if prior_attempt {
        reasons.push(ExclusionReason::PriorSuicideAttempt);
    }
    if !dataset.notes_of(id).any(|n| n.date < entry) {
        reasons.push(ExclusionReason::NoNotesBeforeEntry);
    }
    if patient.birth_date.is_some_and(|b| age_on(b, entry) > config.max_age) {
        reasons.push(ExclusionReason::Over100);
    }

    if reasons.is_empty() {
        Ok(CohortMember {
            patient_id: id.clone(),
            entry_date: entry,
            exit_date,
            exit_reason,
            entry_fiscal_year: fiscal_year(entry),
            followup_days: days_between(entry, exit_date),
        })
    } else {
        Err(reasons)
    }
}

/// Every patient ends up either as a member or with one exclusion row per
/// applicable reason. Output follows the dataset's patient order.
pub fn build_base_cohort(dataset: &Dataset, config: &CohortConfig) -> BaseCohort {
    let outcomes: Vec<_> = dataset
        .patients()
        .par_iter()
        .map(|p| evaluate(p, dataset, config))
        .collect();
    let mut cohort = BaseCohort::default();
    for (p, outcome) in dataset.patients().iter().zip(outcomes) {
        match outcome {
            Ok(m) => cohort.members.push(m),
            Err(reasons) => cohort.exclusions.extend(reasons.into_iter().map(|reason| ExclusionReport {
                patient_id: p.patient_id.clone(),
                reason,
            })),
        }
    }
    cohort
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Case {
    pub patient_id: PatientId,
    pub index_date: Date,
}

/// A suicide-coded death that did not produce a case.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaseDiagnostic {
    pub patient_id: PatientId,
    pub death_date: Date,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaseIdentification {
    pub cases: Vec<Case>,
    pub diagnostics: Vec<CaseDiagnostic>,
}

/// Cases are members whose follow-up ended in a qualifying suicide death
/// inside `[entry, period.end]`; the index date is the death date.
pub fn identify_cases(members: &[CohortMember], deaths: &[DeathRecord], period: StudyPeriod) -> CaseIdentification {
    let by_id: HashMap<&PatientId, &CohortMember> = members.iter().map(|m| (&m.patient_id, m)).collect();
    let mut out = CaseIdentification::default();
    for death in deaths.iter().filter(|d| is_suicide_cause(&d.underlying_cause)) {
        let diag = |message: String| CaseDiagnostic {
            patient_id: death.patient_id.clone(),
            death_date: death.death_date,
            message,
        };
        let Some(member) = by_id.get(&death.patient_id) else {
            out.diagnostics.push(diag("not a cohort member".into()));
            continue;
        };
        let in_followup = member.entry_date <= death.death_date
            && death.death_date <= period.end
            && member.exit_reason == ExitReason::Suicide
            && member.exit_date == death.death_date;
        if in_followup {
            out.cases.push(Case {
                patient_id: death.patient_id.clone(),
                index_date: death.death_date,
            });
        } else {
            out.diagnostics.push(diag(format!(
                "death outside follow-up [{}, {}] (exit {} {})",
                member.entry_date, member.exit_date, member.exit_reason, member.exit_date
            )));
        }
    }
    out.cases.sort_by(|a, b| a.patient_id.cmp(&b.patient_id));
    out
}
