//! Risk-set sampling of matched controls.
//!
//! A control must share the case's entry fiscal year and sex, be born
//! within the birth-year tolerance, have at least the case's follow-up,
//! and be under observation on the case's index date. Controls are drawn
//! without duplication inside a set, but the same member may serve in many
//! sets, and a later case may serve as a control for an earlier one.

mod io;

pub use io::{read_matched_sets, write_matched_sets, MatchedSetsError};

use crate::cohort::{Case, CohortMember};
use crate::dates::Date;
use crate::ehr::{Dataset, PatientId, Sex};
use chrono::Datelike;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::{BTreeMap, HashMap};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MatchCriteria {
    pub birth_year_tolerance: i32,
    pub ratio: usize,
    pub require_same_entry_fy: bool,
    pub require_same_sex: bool,
}

impl Default for MatchCriteria {
    fn default() -> Self {
        Self {
            birth_year_tolerance: 3,
            ratio: 4,
            require_same_entry_fy: true,
            require_same_sex: true,
        }
    }
}

impl MatchCriteria {
    pub fn validate(&self) -> Result<(), String> {
        if self.birth_year_tolerance < 0 {
            return Err(format!("birth year tolerance must be >= 0, got {}", self.birth_year_tolerance));
        }
        if self.ratio < 1 {
            return Err("ratio must be >= 1".into());
        }
        Ok(())
    }
}

string_enum! {
    pub enum UnderfillPolicy {
        /// Keep a set with fewer controls than the ratio.
        Keep => "keep",
        /// Drop the case when fewer than `ratio` controls are eligible.
        Drop => "drop",
    }
}

impl Default for UnderfillPolicy {
    fn default() -> Self {
        UnderfillPolicy::Keep
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchedSet {
    pub set_id: usize,
    pub case_id: PatientId,
    pub index_date: Date,
    pub control_ids: Vec<PatientId>,
}

/// What the matcher needs to know about one cohort member.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MatchProfile {
    pub patient_id: PatientId,
    pub birth_year: i32,
    pub sex: Sex,
    pub entry_fy: i32,
    pub entry_date: Date,
    pub exit_date: Date,
    pub followup_days: i64,
    pub death_date: Option<Date>,
}

impl MatchProfile {
    /// `None` when the member has no birth date.
    pub fn new(member: &CohortMember, dataset: &Dataset) -> Option<Self> {
        let patient = dataset.patient(&member.patient_id)?;
        Some(Self {
            patient_id: member.patient_id.clone(),
            birth_year: patient.birth_date?.year(),
            sex: patient.sex,
            entry_fy: member.entry_fiscal_year,
            entry_date: member.entry_date,
            exit_date: member.exit_date,
            followup_days: member.followup_days,
            death_date: dataset.death_of(&member.patient_id).map(|d| d.death_date),
        })
    }

    /// Whether `self` may serve as a control for `case` at `index_date`.
    pub fn eligible_for(&self, case: &MatchProfile, index_date: Date, c: &MatchCriteria) -> bool {
        self.patient_id != case.patient_id
            && (self.birth_year - case.birth_year).abs() <= c.birth_year_tolerance
            && (!c.require_same_entry_fy || self.entry_fy == case.entry_fy)
            && (!c.require_same_sex || self.sex == case.sex)
            && self.followup_days >= case.followup_days
            && self.entry_date <= index_date
            && index_date <= self.exit_date
            && self.death_date.map_or(true, |d| d >= index_date)
    }
}

string_enum! {
    pub enum DiagnosticKind {
        Underfilled => "underfilled",
        Dropped => "dropped",
        Unmatched => "unmatched",
        NotAMember => "not_a_member",
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchDiagnostic {
    pub case_id: PatientId,
    pub kind: DiagnosticKind,
    pub eligible: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchSummary {
    pub cases: usize,
    pub matched_sets: usize,
    pub control_slots: usize,
    pub unique_controls: usize,
    /// Individuals used as a control in more than one set.
    pub reused_controls: usize,
    pub diagnostics: Vec<MatchDiagnostic>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MatchedCohort {
    pub sets: Vec<MatchedSet>,
    pub summary: MatchSummary,
}

type BucketKey = (i32, Option<Sex>);

/// Members bucketed by (entry FY, sex) and sorted by birth year inside
/// each bucket. Either key part collapses when its criterion is off.
pub struct MatchPool {
    profiles: Vec<MatchProfile>,
    by_id: HashMap<PatientId, usize>,
    buckets: HashMap<BucketKey, Vec<usize>>,
    criteria: MatchCriteria,
}

impl MatchPool {
    pub fn new(profiles: Vec<MatchProfile>, criteria: MatchCriteria) -> Self {
        let key = |p: &MatchProfile| -> BucketKey {
            (
                if criteria.require_same_entry_fy { p.entry_fy } else { 0 },
                criteria.require_same_sex.then_some(p.sex),
            )
        };
        let mut buckets: HashMap<BucketKey, Vec<usize>> = HashMap::new();
        for (i, p) in profiles.iter().enumerate() {
            buckets.entry(key(p)).or_default().push(i);
        }
        for v in buckets.values_mut() {
            v.sort_by(|&a, &b| profiles[a].birth_year.cmp(&profiles[b].birth_year).then(profiles[a].patient_id.cmp(&profiles[b].patient_id)));
        }
        let by_id = profiles.iter().enumerate().map(|(i, p)| (p.patient_id.clone(), i)).collect();
        Self {
            profiles,
            by_id,
            buckets,
            criteria,
        }
    }

    pub fn from_members(members: &[CohortMember], dataset: &Dataset, criteria: MatchCriteria) -> Self {
        Self::new(members.iter().filter_map(|m| MatchProfile::new(m, dataset)).collect(), criteria)
    }

    pub fn profile(&self, id: &PatientId) -> Option<&MatchProfile> {
        self.by_id.get(id).map(|&i| &self.profiles[i])
    }

    pub fn profiles(&self) -> &[MatchProfile] {
        &self.profiles
    }

    /// Eligible controls in patient-id order.
    pub fn eligible_controls(&self, case: &MatchProfile, index_date: Date) -> Vec<&MatchProfile> {
        let c = &self.criteria;
        let key = (
            if c.require_same_entry_fy { case.entry_fy } else { 0 },
            c.require_same_sex.then_some(case.sex),
        );
        let Some(bucket) = self.buckets.get(&key) else { return vec![] };
        let lo = bucket.partition_point(|&i| self.profiles[i].birth_year < case.birth_year - c.birth_year_tolerance);
        let hi = bucket.partition_point(|&i| self.profiles[i].birth_year <= case.birth_year + c.birth_year_tolerance);
        let mut out: Vec<&MatchProfile> = bucket[lo..hi]
            .iter()
            .map(|&i| &self.profiles[i])
            .filter(|p| p.eligible_for(case, index_date, c))
            .collect();
        out.sort_by(|a, b| a.patient_id.cmp(&b.patient_id));
        out
    }
}

/// Per-case random stream, independent of scheduling and case order.
pub fn case_rng(seed: u64, case_id: &PatientId) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(b"risk-set");
    h.update(seed.to_le_bytes());
    h.update(case_id.as_str().as_bytes());
    let digest = h.finalize();
    let mut key = [0u8; 32];
    key.copy_from_slice(&digest);
    ChaCha8Rng::from_seed(key)
}

/// Uniform sample of `min(ratio, eligible)` distinct controls.
pub fn sample_controls(eligible: &[&MatchProfile], ratio: usize, rng: &mut ChaCha8Rng) -> Vec<PatientId> {
    let k = ratio.min(eligible.len());
    rand::seq::index::sample(rng, eligible.len(), k)
        .into_iter()
        .map(|i| eligible[i].patient_id.clone())
        .collect()
}

enum Outcome {
    Set(Date, Vec<PatientId>, Option<MatchDiagnostic>),
    Skip(MatchDiagnostic),
}

pub fn build_matched_cohort(
    cases: &[Case],
    pool: &MatchPool,
    policy: UnderfillPolicy,
    seed: u64,
) -> MatchedCohort {
    let ratio = pool.criteria.ratio;
    let mut ordered: Vec<&Case> = cases.iter().collect();
    ordered.sort_by(|a, b| a.patient_id.cmp(&b.patient_id));
    let outcomes: Vec<Outcome> = ordered
        .par_iter()
        .map(|case| {
            let diag = |kind, eligible| MatchDiagnostic {
                case_id: case.patient_id.clone(),
                kind,
                eligible,
            };
            let Some(profile) = pool.profile(&case.patient_id) else {
                return Outcome::Skip(diag(DiagnosticKind::NotAMember, 0));
            };
            let eligible = pool.eligible_controls(profile, case.index_date);
            let n = eligible.len();
            if n == 0 {
                return Outcome::Skip(diag(DiagnosticKind::Unmatched, 0));
            }
            if n < ratio && policy == UnderfillPolicy::Drop {
                return Outcome::Skip(diag(DiagnosticKind::Dropped, n));
            }
            let mut rng = case_rng(seed, &case.patient_id);
            let controls = sample_controls(&eligible, ratio, &mut rng);
            Outcome::Set(case.index_date, controls, (n < ratio).then(|| diag(DiagnosticKind::Underfilled, n)))
        })
        .collect();

    let mut out = MatchedCohort::default();
    out.summary.cases = cases.len();
    for (case, outcome) in ordered.iter().zip(outcomes) {
        match outcome {
            Outcome::Set(index_date, control_ids, diag) => {
                if let Some(d) = diag {
                    log::warn!("case {} has {} eligible controls, fewer than {ratio}", d.case_id, d.eligible);
                    out.summary.diagnostics.push(d);
                }
                out.sets.push(MatchedSet {
                    set_id: out.sets.len() + 1,
                    case_id: case.patient_id.clone(),
                    index_date,
                    control_ids,
                });
            }
            Outcome::Skip(d) => {
                log::warn!("case {} not matched: {} ({} eligible)", d.case_id, d.kind, d.eligible);
                out.summary.diagnostics.push(d);
            }
        }
    }
    let mut uses: BTreeMap<&PatientId, usize> = BTreeMap::new();
    for s in &out.sets {
        for c in &s.control_ids {
            *uses.entry(c).or_default() += 1;
        }
    }
    out.summary.matched_sets = out.sets.len();
    out.summary.control_slots = out.sets.iter().map(|s| s.control_ids.len()).sum();
    out.summary.unique_controls = uses.len();
    out.summary.reused_controls = uses.values().filter(|&&n| n > 1).count();
    out
}
