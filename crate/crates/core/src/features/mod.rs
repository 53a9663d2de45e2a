//! Assessment windows, per-window flags and model feature tables.

mod assemble;
mod extract;

pub use assemble::{
    age_band, age_band_on, assemble, prevalence, read_features, sdoh_column, write_features, AssembleError, Demographics,
    FeatureCsvError, FeatureRow, FeatureTable, ModelDesign, PrevalenceRow, AGE_BANDS,
};
pub use extract::{extract_nlp, extract_structured, read_flags, write_flags, FlagRow, FlagTable, FlagCsvError, NlpExtraction, StudyMaps};

use crate::cohort::CohortMember;
use crate::codes::StructuredFlags;
use crate::dates::{sub_years, Date, DateWindow};
use crate::ehr::PatientId;
use crate::matching::MatchedSet;
use crate::nlp::{FactorLabel, NlpFlags};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use thiserror::Error;

string_enum! {
    pub enum SdohGroup {
        Nlp => "nlp",
        Structured => "structured",
        Combined => "combined",
    }
}

/// A factor of a group and where its flag comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GroupFactor {
    pub name: &'static str,
    pub structured: Option<&'static str>,
    pub nlp: Option<FactorLabel>,
}

const fn nlp(label: FactorLabel, name: &'static str) -> GroupFactor {
    GroupFactor { name, structured: None, nlp: Some(label) }
}

const fn structured(name: &'static str) -> GroupFactor {
    GroupFactor { name, structured: Some(name), nlp: None }
}

const NLP_ROSTER: [GroupFactor; 8] = [
    nlp(FactorLabel::SocialIsolation, "social_isolation"),
    nlp(FactorLabel::TransitionOfCare, "transition_of_care"),
    nlp(FactorLabel::BarriersToCare, "barriers_to_care"),
    nlp(FactorLabel::FinancialInsecurity, "financial_insecurity"),
    nlp(FactorLabel::HousingInstability, "housing_instability"),
    nlp(FactorLabel::FoodInsecurity, "food_insecurity"),
    nlp(FactorLabel::Violence, "violence"),
    nlp(FactorLabel::LegalProblems, "legal_problems"),
];

const STRUCTURED_ROSTER: [GroupFactor; 6] = [
    structured("social_or_familial"),
    structured("employment_or_financial"),
    structured("housing_instability"),
    structured("legal_problems"),
    structured("violence"),
    structured("nonspecific_psychosocial"),
];

const fn both(name: &'static str, s: &'static str, label: FactorLabel) -> GroupFactor {
    GroupFactor { name, structured: Some(s), nlp: Some(label) }
}

const COMBINED_ROSTER: [GroupFactor; 9] = [
    both("social_problems", "social_or_familial", FactorLabel::SocialIsolation),
    both("financial_problems", "employment_or_financial", FactorLabel::FinancialInsecurity),
    both("housing_instability", "housing_instability", FactorLabel::HousingInstability),
    both("legal_problems", "legal_problems", FactorLabel::LegalProblems),
    both("violence", "violence", FactorLabel::Violence),
    nlp(FactorLabel::BarriersToCare, "barriers_to_care"),
    nlp(FactorLabel::TransitionOfCare, "transition_of_care"),
    nlp(FactorLabel::FoodInsecurity, "food_insecurity"),
    structured("nonspecific_psychosocial"),
];

impl SdohGroup {
    pub fn roster(self) -> &'static [GroupFactor] {
        match self {
            SdohGroup::Nlp => &NLP_ROSTER,
            SdohGroup::Structured => &STRUCTURED_ROSTER,
            SdohGroup::Combined => &COMBINED_ROSTER,
        }
    }

    pub fn factor_names(self) -> impl Iterator<Item = &'static str> {
        self.roster().iter().map(|f| f.name)
    }

    pub fn has_factor(self, name: &str) -> bool {
        self.factor_names().any(|f| f == name)
    }
}

/// A group factor's bit: the OR of whichever sources it has.
pub fn factor_bit(f: &GroupFactor, structured: &StructuredFlags, nlp: &NlpFlags) -> bool {
    f.structured.is_some_and(|s| structured.get(s)) || f.nlp.is_some_and(|l| nlp.bit(l))
}

/// The nine combined factors in roster order.
pub fn combine_sdoh(structured: &StructuredFlags, nlp: &NlpFlags) -> Vec<bool> {
    COMBINED_ROSTER.iter().map(|f| factor_bit(f, structured, nlp)).collect()
}

string_enum! {
    pub enum WindowKind {
        Covariate => "covariate",
        Exposure => "exposure",
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssessmentWindows {
    pub covariate: DateWindow,
    pub exposure: DateWindow,
}

impl AssessmentWindows {
    pub fn get(&self, kind: WindowKind) -> DateWindow {
        match kind {
            WindowKind::Covariate => self.covariate,
            WindowKind::Exposure => self.exposure,
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum WindowError {
    #[error("subject {patient_id}: index date {index} precedes entry {entry}")]
    IndexBeforeEntry { patient_id: PatientId, entry: Date, index: Date },
    #[error("subject {0} is not a cohort member")]
    NotAMember(PatientId),
}

/// Covariate window `[entry - years, entry)`; exposure window
/// `[max(entry, index - years), index)`. The exposure window is empty
/// when the index date equals the entry date.
pub fn windows_for(patient_id: &PatientId, entry: Date, index: Date, years: i32) -> Result<AssessmentWindows, WindowError> {
    if index < entry {
        return Err(WindowError::IndexBeforeEntry {
            patient_id: patient_id.clone(),
            entry,
            index,
        });
    }
    let covariate = DateWindow::new(sub_years(entry, years), entry).expect("ordered");
    let exposure = DateWindow::new(entry.max(sub_years(index, years)), index).expect("ordered");
    Ok(AssessmentWindows { covariate, exposure })
}

/// One row of a matched design: a case or one control slot.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Subject {
    pub set_id: usize,
    pub patient_id: PatientId,
    pub is_case: bool,
    pub index_date: Date,
}

/// Case then controls for every set, in set order.
pub fn subjects(sets: &[MatchedSet]) -> Vec<Subject> {
    let mut out = Vec::new();
    for s in sets {
        out.push(Subject {
            set_id: s.set_id,
            patient_id: s.case_id.clone(),
            is_case: true,
            index_date: s.index_date,
        });
        out.extend(s.control_ids.iter().map(|c| Subject {
            set_id: s.set_id,
            patient_id: c.clone(),
            is_case: false,
            index_date: s.index_date,
        }));
    }
    out
}

/// Windows for every subject, using each subject's own entry date.
pub fn subject_windows(
    subjects: &[Subject],
    members: &[CohortMember],
    years: i32,
) -> Result<Vec<AssessmentWindows>, WindowError> {
    let entry: HashMap<&PatientId, Date> = members.iter().map(|m| (&m.patient_id, m.entry_date)).collect();
    subjects
        .iter()
        .map(|s| {
            let e = *entry.get(&s.patient_id).ok_or_else(|| WindowError::NotAMember(s.patient_id.clone()))?;
            windows_for(&s.patient_id, e, s.index_date, years)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dates::parse_date;
    use crate::nlp::{MergedFactor, Period, Presence};
    use std::collections::BTreeMap;

    fn d(s: &str) -> Date {
        parse_date(s).unwrap()
    }

    #[test]
    fn window_examples() {
        let p = PatientId::new("p");
        let w = windows_for(&p, d("2013-01-01"), d("2014-06-01"), 2).unwrap();
        assert_eq!((w.exposure.start, w.exposure.end), (d("2013-01-01"), d("2014-06-01")));
        assert_eq!((w.covariate.start, w.covariate.end), (d("2011-01-01"), d("2013-01-01")));
        let w = windows_for(&p, d("2011-10-01"), d("2015-09-30"), 2).unwrap();
        assert_eq!((w.exposure.start, w.exposure.end), (d("2013-09-30"), d("2015-09-30")));
        let w = windows_for(&p, d("2012-02-29"), d("2016-02-29"), 2).unwrap();
        assert_eq!(w.covariate.start, d("2010-02-28"));
        assert_eq!(w.exposure.start, d("2014-02-28"));
        assert!(windows_for(&p, d("2012-02-29"), d("2012-02-29"), 2).unwrap().exposure.is_empty());
        assert!(matches!(windows_for(&p, d("2013-01-02"), d("2013-01-01"), 2), Err(WindowError::IndexBeforeEntry { .. })));
    }

    #[test]
    fn rosters() {
        assert_eq!(SdohGroup::Nlp.roster().len(), 8);
        assert_eq!(SdohGroup::Structured.roster().len(), 6);
        let combined = SdohGroup::Combined.roster();
        assert_eq!(combined.len(), 9);
        assert_eq!(combined.iter().filter(|f| f.structured.is_some() && f.nlp.is_some()).count(), 5);
        let nlp_only: Vec<_> = combined.iter().filter(|f| f.structured.is_none()).map(|f| f.name).collect();
        assert_eq!(nlp_only, ["barriers_to_care", "transition_of_care", "food_insecurity"]);
        let structured_only: Vec<_> = combined.iter().filter(|f| f.nlp.is_none()).map(|f| f.name).collect();
        assert_eq!(structured_only, ["nonspecific_psychosocial"]);
        let sdoh = crate::codes::default_structured_sdoh();
        let names: Vec<_> = sdoh.factor_names().collect();
        assert_eq!(names, SdohGroup::Structured.factor_names().collect::<Vec<_>>());
    }

    fn flags(structured_on: &[&str], nlp_on: &[FactorLabel]) -> (StructuredFlags, NlpFlags) {
        let s = StructuredFlags {
            patient_id: PatientId::new("p"),
            window: DateWindow::new(d("2010-01-01"), d("2011-01-01")).unwrap(),
            flags: STRUCTURED_ROSTER.iter().map(|f| (f.name.to_string(), structured_on.contains(&f.name))).collect::<BTreeMap<_, _>>(),
        };
        let mut n = NlpFlags::default();
        for l in nlp_on {
            n.merged[l.index()] = MergedFactor { presence: Presence::Yes, period: Period::Current };
        }
        (s, n)
    }

    #[test]
    fn combine_is_or_on_shared_factors() {
        for f in COMBINED_ROSTER.iter() {
            for (a, b) in [(false, false), (false, true), (true, false), (true, true)] {
                let s_on: Vec<&str> = f.structured.filter(|_| a).into_iter().collect();
                let n_on: Vec<FactorLabel> = f.nlp.filter(|_| b).into_iter().collect();
                let (s, n) = flags(&s_on, &n_on);
                let i = COMBINED_ROSTER.iter().position(|g| g.name == f.name).unwrap();
                let want = (a && f.structured.is_some()) || (b && f.nlp.is_some());
                assert_eq!(combine_sdoh(&s, &n)[i], want, "{} {a} {b}", f.name);
            }
        }
        let (s, n) = flags(&["social_or_familial"], &[]);
        assert!(combine_sdoh(&s, &n)[0]);
        let (s, n) = flags(&[], &[FactorLabel::FoodInsecurity]);
        assert!(combine_sdoh(&s, &n)[7]);
    }
}
