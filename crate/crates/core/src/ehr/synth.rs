//! Deterministic synthetic EHR data with planted exposure effects.

use super::{
    ClinicalNote, Dataset, DeathRecord, DiagnosisRecord, Encounter, Icd10Code, MaritalStatus, NoteId, NoteType, PatientId,
    PatientRecord, Race, Sex, StopCode,
};
use crate::codes::{default_charlson, Icd9Code};
use crate::dates::{add_years, days_between, parse_date, sub_years, Date};
use crate::features::SdohGroup;
use chrono::Duration;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FactorProcess {
    /// A combined-group factor name.
    pub factor: String,
    /// Events per person-year.
    pub annual_rate: f64,
    /// Multiplier on the rate for patients with depression.
    #[serde(default = "one")]
    pub mdd_rate_ratio: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantedEffect {
    pub factor: String,
    pub odds_ratio: f64,
}

/// Generator parameters. Every field has a default, so a JSON file only
/// needs the fields it changes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub patients: usize,
    pub period_start: Date,
    pub period_end: Date,
    pub earliest_record: Date,
    /// Baseline suicide hazard per person-year.
    pub suicide_rate: f64,
    pub other_death_rate: f64,
    /// Hazard per person-year of leaving care after entry.
    pub dropout_rate: f64,
    pub visits_per_year: f64,
    /// Share of routine visits that produce a note.
    pub note_fraction: f64,
    pub mdd_prevalence: f64,
    pub mdd_log_or: f64,
    pub no_pre_entry_notes: f64,
    pub prior_attempt: f64,
    pub unknown_sex: f64,
    pub over_100: f64,
    pub comorbidity_prevalence: f64,
    /// Negated, historical or non-study-type factor notes per person-year.
    pub distractors_per_year: f64,
    pub factors: Vec<FactorProcess>,
    pub planted_effects: Vec<PlantedEffect>,
}

impl Default for SynthSpec {
    fn default() -> Self {
        let rate = |factor: &str, annual_rate: f64, mdd_rate_ratio: f64| FactorProcess {
            factor: factor.into(),
            annual_rate,
            mdd_rate_ratio,
        };
        Self {
            patients: 10_000,
            period_start: parse_date("2010-10-01").expect("literal"),
            period_end: parse_date("2015-09-30").expect("literal"),
            earliest_record: parse_date("2004-01-01").expect("literal"),
            suicide_rate: 0.008,
            other_death_rate: 0.01,
            dropout_rate: 0.05,
            visits_per_year: 3.0,
            note_fraction: 0.7,
            mdd_prevalence: 0.15,
            mdd_log_or: 0.7,
            no_pre_entry_notes: 0.03,
            prior_attempt: 0.01,
            unknown_sex: 0.005,
            over_100: 0.002,
            comorbidity_prevalence: 0.04,
            distractors_per_year: 0.15,
            factors: vec![
                rate("social_problems", 0.05, 1.5),
                rate("financial_problems", 0.05, 1.5),
                rate("housing_instability", 0.04, 1.5),
                rate("legal_problems", 0.06, 2.0),
                rate("violence", 0.03, 1.5),
                rate("barriers_to_care", 0.04, 1.0),
                rate("transition_of_care", 0.05, 1.0),
                rate("food_insecurity", 0.03, 1.0),
                rate("nonspecific_psychosocial", 0.03, 1.0),
            ],
            planted_effects: vec![PlantedEffect {
                factor: "legal_problems".into(),
                odds_ratio: 2.0,
            }],
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum SynthError {
    #[error("{field} = {value} is outside [0, 1]")]
    RateOutOfRange { field: String, value: f64 },
    #[error("{field} = {value} must be finite and non-negative")]
    Negative { field: String, value: f64 },
    #[error("study period {start}..{end} is empty")]
    EmptyPeriod { start: Date, end: Date },
    #[error("earliest record {0} is after the study start")]
    LateEarliestRecord(Date),
    #[error("{0:?} is not a combined SDOH factor")]
    UnknownFactor(String),
    #[error("odds ratio for {factor} must be positive and finite, got {value}")]
    OddsRatio { factor: String, value: f64 },
}

impl SynthSpec {
    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        if self.period_end <= self.period_start {
            return Err(SynthError::EmptyPeriod {
                start: self.period_start,
                end: self.period_end,
            });
        }
        if self.earliest_record > self.period_start {
            return Err(SynthError::LateEarliestRecord(self.earliest_record));
        }
        let unit = [
            ("suicide_rate", self.suicide_rate),
            ("other_death_rate", self.other_death_rate),
            ("dropout_rate", self.dropout_rate),
            ("note_fraction", self.note_fraction),
            ("mdd_prevalence", self.mdd_prevalence),
            ("no_pre_entry_notes", self.no_pre_entry_notes),
            ("prior_attempt", self.prior_attempt),
            ("unknown_sex", self.unknown_sex),
            ("over_100", self.over_100),
            ("comorbidity_prevalence", self.comorbidity_prevalence),
        ];
        let factor_rates = self.factors.iter().map(|f| (format!("factors.{}.annual_rate", f.factor), f.annual_rate));
        for (field, value) in unit.iter().map(|(f, v)| (f.to_string(), *v)).chain(factor_rates) {
            if !(0.0..=1.0).contains(&value) {
                return Err(SynthError::RateOutOfRange { field, value });
            }
        }
        let nonneg = [
            ("visits_per_year".to_string(), self.visits_per_year),
            ("distractors_per_year".to_string(), self.distractors_per_year),
        ];
        let ratios = self.factors.iter().map(|f| (format!("factors.{}.mdd_rate_ratio", f.factor), f.mdd_rate_ratio));
        for (field, value) in nonneg.into_iter().chain(ratios) {
            if !(value.is_finite() && value >= 0.0) {
                return Err(SynthError::Negative { field, value });
            }
        }
        if !self.mdd_log_or.is_finite() {
            return Err(SynthError::Negative {
                field: "mdd_log_or".into(),
                value: self.mdd_log_or,
            });
        }
        for name in self.factors.iter().map(|f| &f.factor).chain(self.planted_effects.iter().map(|e| &e.factor)) {
            if !SdohGroup::Combined.has_factor(name) {
                return Err(SynthError::UnknownFactor(name.clone()));
            }
        }
        for e in &self.planted_effects {
            if !(e.odds_ratio.is_finite() && e.odds_ratio > 0.0) {
                return Err(SynthError::OddsRatio {
                    factor: e.factor.clone(),
                    value: e.odds_ratio,
                });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordedEffect {
    pub group: SdohGroup,
    pub factor: String,
    pub odds_ratio: f64,
    pub log_odds: f64,
}

/// What was planted, written next to the dataset as planted_effects.json.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedEffects {
    pub seed: u64,
    pub effects: Vec<RecordedEffect>,
    pub confounder: String,
    pub confounder_log_odds: f64,
    pub suicides: usize,
    pub other_deaths: usize,
    pub spec: SynthSpec,
}

#[derive(Debug, Clone)]
pub struct SynthOutput {
    pub dataset: Dataset,
    pub planted: PlantedEffects,
}

struct Channels {
    icd9: &'static [&'static str],
    stops: &'static [u16],
    texts: &'static [&'static str],
}

fn channels(factor: &str) -> Channels {
    let c = |icd9, stops, texts| Channels { icd9, stops, texts };
    match factor {
        "social_problems" => c(
            &["V60.6", "V62.4"],
            &[],
            &["Patient lives alone and reports feeling lonely.", "He is estranged from his children and feels isolated."],
        ),
        "financial_problems" => c(
            &["V62.0"],
            &[222],
            &["He is unemployed and cannot afford his medications.", "Reports financial strain since he was laid off."],
        ),
        "housing_instability" => c(
            &["V60.0", "V60.1"],
            &[504, 508],
            &["Patient is homeless and sleeping in his car.", "She was evicted last month and is staying with a friend."],
        ),
        "legal_problems" => c(
            &["V62.5"],
            &[591, 592],
            &["Patient was arrested last month and has a court date next week.", "He is currently on probation after a felony charge."],
        ),
        "violence" => c(
            &["V15.41", "995.81"],
            &[524],
            &["Patient was assaulted outside his apartment this week.", "Reports ongoing domestic violence at home."],
        ),
        "barriers_to_care" => c(
            &[],
            &[],
            &["Reports lack of transportation to get to the clinic.", "Several missed appointments this quarter."],
        ),
        "transition_of_care" => c(
            &[],
            &[],
            &["Patient was discharged from the hospital yesterday.", "He was transferred from the community hospital."],
        ),
        "food_insecurity" => c(
            &[],
            &[],
            &["Patient relies on the food pantry and is often hungry.", "She is skipping meals to save money."],
        ),
        "nonspecific_psychosocial" => c(&["V62.9", "V62.81"], &[], &[]),
        _ => c(&[], &[], &[]),
    }
}

const DISTRACTORS: [&str; 10] = [
    "Denies legal problems.",
    "History of incarceration many years ago.",
    "Patient denies homelessness.",
    "No food insecurity reported.",
    "He is not unemployed.",
    "Denies any domestic violence.",
    "Previously homeless, now stably housed.",
    "Remote history of arrest as a teenager.",
    "Does not live alone.",
    "Former probation, completed long ago; no current legal issues.",
];

const NOISE: [&str; 8] = [
    "Reports chronic knee pain.",
    "Complains of low back pain.",
    "Screened positive for depression.",
    "He smokes a pack of cigarettes daily.",
    "Reports insomnia and anxiety.",
    "Uses a walker at home.",
    "Drinks alcohol on weekends.",
    "Service connected for hearing loss.",
];

const ROUTINE: [&str; 5] = [
    "Routine follow-up visit. Vitals stable.",
    "Patient seen for medication review. Continue current regimen.",
    "Annual wellness exam completed.",
    "Blood pressure well controlled on current regimen.",
    "Labs reviewed with patient. Plan unchanged.",
];

const ROUTINE_STOPS: [u16; 5] = [323, 301, 303, 350, 117];
const MDD_CODES: [&str; 3] = ["311", "296.20", "296.32"];
const OTHER_MH: [&str; 6] = ["303.90", "304.00", "300.02", "309.81", "295.30", "296.40"];
const SUICIDE_CAUSES: [&str; 5] = ["X72", "X70", "X64", "X74.9", "X80"];
const OTHER_CAUSES: [&str; 5] = ["I21.9", "C34.9", "J44.9", "E11.9", "I50.9"];
const ATTEMPT_CODE: &str = "E950.0";

const STUDY_NOTE_TYPES: [NoteType; 7] = [
    NoteType::PrimaryCare,
    NoteType::PrimaryCare,
    NoteType::NursingAssessment,
    NoteType::EmergencyDepartment,
    NoteType::InpatientProgress,
    NoteType::PainManagement,
    NoteType::DischargeSummary,
];

fn pick<'a, T>(rng: &mut ChaCha8Rng, xs: &'a [T]) -> &'a T {
    &xs[rng.gen_range(0..xs.len())]
}

fn weighted<T: Copy>(rng: &mut ChaCha8Rng, xs: &[(T, f64)]) -> T {
    let total: f64 = xs.iter().map(|x| x.1).sum();
    let mut u = rng.gen::<f64>() * total;
    for &(x, w) in xs {
        if u < w {
            return x;
        }
        u -= w;
    }
    xs[xs.len() - 1].0
}

fn plus_days(d: Date, days: i64) -> Date {
    d + Duration::days(days)
}

fn uniform_date(rng: &mut ChaCha8Rng, start: Date, end: Date) -> Date {
    let span = days_between(start, end);
    if span <= 0 {
        start
    } else {
        plus_days(start, rng.gen_range(0..span))
    }
}

/// Event dates of a homogeneous Poisson process on `[start, end)`.
fn poisson_dates(rng: &mut ChaCha8Rng, start: Date, end: Date, per_year: f64) -> Vec<Date> {
    let mut out = Vec::new();
    if per_year <= 0.0 {
        return out;
    }
    let span = days_between(start, end) as f64;
    let per_day = per_year / 365.25;
    let mut t = 0.0;
    loop {
        t += -(1.0 - rng.gen::<f64>()).ln() / per_day;
        if t >= span {
            return out;
        }
        out.push(plus_days(start, t as i64));
    }
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

struct PatientDraft {
    record: PatientRecord,
    encounters: Vec<Encounter>,
    diagnoses: Vec<DiagnosisRecord>,
    notes: Vec<ClinicalNote>,
    death: Option<DeathRecord>,
}

struct Generator<'a> {
    spec: &'a SynthSpec,
    seed: u64,
    charlson_codes: Vec<Icd9Code>,
    planted: Vec<(usize, f64)>,
}

impl Generator<'_> {
    fn patient(&self, index: usize) -> PatientDraft {
        let spec = self.spec;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(index as u64);
        let id = PatientId::new(format!("P{:06}", index + 1));

        let sex = if rng.gen_bool(spec.unknown_sex) {
            Sex::Unknown
        } else if rng.gen_bool(0.9) {
            Sex::Male
        } else {
            Sex::Female
        };
        let race = weighted(
            &mut rng,
            &[
                (Race::White, 0.70),
                (Race::Black, 0.18),
                (Race::Asian, 0.02),
                (Race::AmericanIndian, 0.01),
                (Race::PacificIslander, 0.01),
                (Race::Unknown, 0.08),
            ],
        );
        let marital_status = weighted(
            &mut rng,
            &[
                (MaritalStatus::Married, 0.45),
                (MaritalStatus::Single, 0.15),
                (MaritalStatus::Divorced, 0.25),
                (MaritalStatus::Widowed, 0.08),
                (MaritalStatus::Unknown, 0.07),
            ],
        );
        let age_at_start = if rng.gen_bool(spec.over_100) { rng.gen_range(101..105) } else { rng.gen_range(20..91) };
        let birth = plus_days(sub_years(spec.period_start, age_at_start), -rng.gen_range(0..365));

        let latest_first = plus_days(spec.period_end, -365).max(spec.earliest_record);
        let first = uniform_date(&mut rng, spec.earliest_record.max(birth), latest_first);
        let entry = add_years(first, 2).max(spec.period_start).max(add_years(birth, 18));
        let dropout_years = if spec.dropout_rate > 0.0 {
            -(1.0 - rng.gen::<f64>()).ln() / spec.dropout_rate
        } else {
            f64::INFINITY
        };
        let horizon = add_years(spec.period_end, 1);
        let care_end = if dropout_years.is_finite() {
            plus_days(entry, (dropout_years * 365.25).min(days_between(entry, horizon) as f64) as i64)
        } else {
            horizon
        }
        .max(first);
        let notes_before_entry = !rng.gen_bool(spec.no_pre_entry_notes);
        let mdd = rng.gen_bool(spec.mdd_prevalence);

        let mut d = PatientDraft {
            record: PatientRecord {
                patient_id: id.clone(),
                birth_date: Some(birth),
                sex,
                race,
                marital_status,
            },
            encounters: Vec::new(),
            diagnoses: Vec::new(),
            notes: Vec::new(),
            death: None,
        };
        let mut note_seq = 0usize;
        let mut add_note = |d: &mut PatientDraft, date: Date, note_type: NoteType, text: String| {
            if date < entry && !notes_before_entry {
                return;
            }
            note_seq += 1;
            d.notes.push(ClinicalNote {
                note_id: NoteId(format!("{id}-N{note_seq:04}")),
                patient_id: id.clone(),
                date,
                note_type,
                text,
            });
        };
        let encounter = |d: &mut PatientDraft, date: Date, stop: u16| {
            d.encounters.push(Encounter {
                patient_id: id.clone(),
                date,
                stop_code: StopCode::new(stop),
                note_refs: vec![],
            })
        };
        let diagnosis = |d: &mut PatientDraft, date: Date, code: &str| {
            d.diagnoses.push(DiagnosisRecord {
                patient_id: id.clone(),
                date,
                code: Icd9Code::parse(code).expect("generator codes are valid"),
            })
        };

        // Routine care, with a visit on the first and last day of care.
        let mut visits = poisson_dates(&mut rng, first, care_end, spec.visits_per_year);
        visits.push(first);
        visits.push(care_end);
        for date in visits {
            encounter(&mut d, date, *pick(&mut rng, &ROUTINE_STOPS));
            if rng.gen_bool(spec.note_fraction) || date == first {
                let mut text = pick(&mut rng, &ROUTINE).to_string();
                if rng.gen_bool(0.2) {
                    text.push(' ');
                    text.push_str(pick(&mut rng, &NOISE));
                }
                let ty = if rng.gen_bool(0.15) { NoteType::Other } else { *pick(&mut rng, &STUDY_NOTE_TYPES) };
                add_note(&mut d, date, ty, text);
            }
        }

        let covariate_start = sub_years(entry, 2).max(first);
        if mdd {
            diagnosis(&mut d, uniform_date(&mut rng, covariate_start, entry), pick(&mut rng, &MDD_CODES));
            for date in poisson_dates(&mut rng, entry, care_end, 0.5) {
                diagnosis(&mut d, date, pick(&mut rng, &MDD_CODES));
            }
        }
        for code in OTHER_MH {
            if rng.gen_bool(spec.comorbidity_prevalence) {
                diagnosis(&mut d, uniform_date(&mut rng, first, care_end), code);
            }
        }
        for code in &self.charlson_codes {
            if rng.gen_bool(spec.comorbidity_prevalence) {
                diagnosis(&mut d, uniform_date(&mut rng, first, care_end), code.as_str());
            }
        }
        if rng.gen_bool(spec.prior_attempt) && first < entry {
            diagnosis(&mut d, uniform_date(&mut rng, first, entry), ATTEMPT_CODE);
        }

        // SDOH events through their record channels; dates kept per factor.
        let mut events: Vec<Vec<Date>> = vec![Vec::new(); SdohGroup::Combined.roster().len()];
        for process in &spec.factors {
            let fi = SdohGroup::Combined.factor_names().position(|f| f == process.factor).expect("validated");
            let rate = process.annual_rate * if mdd { process.mdd_rate_ratio } else { 1.0 };
            let ch = channels(&process.factor);
            for date in poisson_dates(&mut rng, first, care_end, rate) {
                let mut options: Vec<(u8, f64)> = Vec::new();
                if !ch.icd9.is_empty() {
                    options.push((0, 0.35));
                }
                if !ch.stops.is_empty() {
                    options.push((1, 0.15));
                }
                if !ch.texts.is_empty() && (date >= entry || notes_before_entry) {
                    options.push((2, 0.5));
                }
                if options.is_empty() {
                    continue;
                }
                match weighted(&mut rng, &options) {
                    0 => diagnosis(&mut d, date, pick(&mut rng, ch.icd9)),
                    1 => encounter(&mut d, date, *pick(&mut rng, ch.stops)),
                    _ => {
                        let ty = *pick(&mut rng, &STUDY_NOTE_TYPES);
                        add_note(&mut d, date, ty, pick(&mut rng, ch.texts).to_string());
                    }
                }
                events[fi].push(date);
            }
        }
        for date in poisson_dates(&mut rng, first, care_end, spec.distractors_per_year) {
            if rng.gen_bool(0.25) {
                let text = *pick(&mut rng, channels("legal_problems").texts);
                add_note(&mut d, date, NoteType::Other, text.to_string());
            } else {
                let ty = *pick(&mut rng, &STUDY_NOTE_TYPES);
                add_note(&mut d, date, ty, pick(&mut rng, &DISTRACTORS).to_string());
            }
        }
        for e in &mut events {
            e.sort();
        }

        // Daily outcome hazard from entry to the end of care or the study.
        let base = logit(spec.suicide_rate / 365.25);
        let other = spec.other_death_rate / 365.25;
        let stop = care_end.min(spec.period_end);
        let mut day = entry;
        while day <= stop && spec.suicide_rate + spec.other_death_rate > 0.0 {
            let window_start = entry.max(sub_years(day, 2));
            let mut eta = base + if mdd { spec.mdd_log_or } else { 0.0 };
            for &(fi, beta) in &self.planted {
                if events[fi].iter().any(|&e| e >= window_start && e < day) {
                    eta += beta;
                }
            }
            let p_suicide = if spec.suicide_rate > 0.0 { 1.0 / (1.0 + (-eta).exp()) } else { 0.0 };
            let u: f64 = rng.gen();
            let cause = if u < p_suicide {
                Some(*pick(&mut rng, &SUICIDE_CAUSES))
            } else if u < p_suicide + other {
                Some(*pick(&mut rng, &OTHER_CAUSES))
            } else {
                None
            };
            if let Some(cause) = cause {
                d.death = Some(DeathRecord {
                    patient_id: id.clone(),
                    death_date: day,
                    underlying_cause: Icd10Code::parse(cause).expect("generator causes are valid"),
                });
                d.encounters.retain(|e| e.date <= day);
                d.diagnoses.retain(|x| x.date <= day);
                d.notes.retain(|n| n.date <= day);
                break;
            }
            day = plus_days(day, 1);
        }
        d.encounters.sort_by_key(|e| e.date);
        d.diagnoses.sort_by_key(|x| x.date);
        d.notes.sort_by_key(|n| n.date);
        d
    }
}

/// Builds a dataset from `spec`; the same `(spec, seed)` always yields
/// the same dataset.
pub fn generate_synthetic(spec: &SynthSpec, seed: u64) -> Result<SynthOutput, SynthError> {
    spec.validate()?;
    let planted: Vec<(usize, f64)> = spec
        .planted_effects
        .iter()
        .map(|e| {
            let fi = SdohGroup::Combined.factor_names().position(|f| f == e.factor).expect("validated");
            (fi, e.odds_ratio.ln())
        })
        .collect();
    let charlson_codes = default_charlson()
        .maps()
        .iter()
        .filter_map(|m| m.codes.iter().next().cloned())
        .collect();
    let gen = Generator {
        spec,
        seed,
        charlson_codes,
        planted,
    };
    let drafts: Vec<PatientDraft> = (0..spec.patients).into_par_iter().map(|i| gen.patient(i)).collect();

    let mut patients = Vec::with_capacity(drafts.len());
    let (mut encounters, mut diagnoses, mut notes, mut deaths) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for d in drafts {
        patients.push(d.record);
        encounters.extend(d.encounters);
        diagnoses.extend(d.diagnoses);
        notes.extend(d.notes);
        deaths.extend(d.death);
    }
    let suicides = deaths
        .iter()
        .filter(|d: &&DeathRecord| crate::cohort::is_suicide_cause(&d.underlying_cause))
        .count();
    let other_deaths = deaths.len() - suicides;
    let dataset = Dataset::from_parts(patients, encounters, diagnoses, notes, deaths).expect("generator keeps integrity");
    let planted = PlantedEffects {
        seed,
        effects: spec
            .planted_effects
            .iter()
            .map(|e| RecordedEffect {
                group: SdohGroup::Combined,
                factor: e.factor.clone(),
                odds_ratio: e.odds_ratio,
                log_odds: e.odds_ratio.ln(),
            })
            .collect(),
        confounder: "major_depressive_disorder".into(),
        confounder_log_odds: spec.mdd_log_or,
        suicides,
        other_deaths,
        spec: spec.clone(),
    };
    Ok(SynthOutput { dataset, planted })
}
