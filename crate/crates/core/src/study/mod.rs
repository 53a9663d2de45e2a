//! Study configuration, the model battery, the staged runner and the report.

mod report;
mod run;

pub use report::{
    cohort_summary, format_aor, format_incidence, render_report, write_report_files, Estimate, ExposureEstimate, ModelRow,
    RenderFormat, StudyReport, SummaryRow,
};
pub use run::{dataset_fingerprint, fit_model, run_study, Stage, StudyError, StudyRun};

use crate::clogit::FitConfig;
use crate::codes::{CodeMapError, CodeMapSet};
use crate::cohort::{CiMethod, CohortConfig, StudyPeriod};
use crate::features::{SdohGroup, StudyMaps};
use crate::matching::{MatchCriteria, UnderfillPolicy};
use crate::nlp::{default_lexicon, ExternalTagger, Lexicon, LexiconError, LexiconTagger, Tagger};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CodeMapPaths {
    pub structured_sdoh: Option<PathBuf>,
    pub mental_health: Option<PathBuf>,
    pub charlson: Option<PathBuf>,
    pub suicide_attempt: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TaggerConfig {
    #[default]
    Lexicon,
    /// A subprocess speaking the JSON-lines tagging protocol.
    External { program: String, args: Vec<String> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StudyConfig {
    pub period: StudyPeriod,
    pub history_years: i32,
    pub window_years: i32,
    pub adult_age: i32,
    pub max_age: i32,
    pub attempt_lookback_years: Option<i32>,
    pub matching: MatchCriteria,
    pub underfill: UnderfillPolicy,
    pub ci_method: CiMethod,
    pub code_maps: CodeMapPaths,
    pub lexicon: Option<PathBuf>,
    pub tagger: TaggerConfig,
    pub fit: FitConfig,
    pub pair_models: bool,
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self {
            period: StudyPeriod::default(),
            history_years: 2,
            window_years: 2,
            adult_age: 18,
            max_age: 100,
            attempt_lookback_years: None,
            matching: MatchCriteria::default(),
            underfill: UnderfillPolicy::default(),
            ci_method: CiMethod::default(),
            code_maps: CodeMapPaths::default(),
            lexicon: None,
            tagger: TaggerConfig::default(),
            fit: FitConfig::default(),
            pair_models: true,
        }
    }
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("config: {0}")]
    Syntax(#[from] serde_json::Error),
    #[error("config: {0}")]
    Invalid(String),
    #[error(transparent)]
    CodeMap(#[from] CodeMapError),
    #[error(transparent)]
    Lexicon(#[from] LexiconError),
}

impl StudyConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let c: Self = serde_json::from_str(text)?;
        c.validate()?;
        Ok(c)
    }

    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.period.end <= self.period.start {
            return Err(ConfigError::Invalid(format!("empty study period {}..{}", self.period.start, self.period.end)));
        }
        for (name, v) in [("history_years", self.history_years), ("window_years", self.window_years), ("adult_age", self.adult_age)] {
            if v < 0 {
                return Err(ConfigError::Invalid(format!("{name} must be >= 0, got {v}")));
            }
        }
        if self.max_age < self.adult_age {
            return Err(ConfigError::Invalid("max_age is below adult_age".into()));
        }
        self.matching.validate().map_err(ConfigError::Invalid)?;
        Ok(())
    }
}

/// Code maps, lexicon and tagger resolved from a config.
pub struct StudyResources {
    pub cohort: CohortConfig,
    pub maps: StudyMaps,
    pub lexicon: Lexicon,
    pub tagger: Box<dyn Tagger>,
}

fn load_map(path: &Option<PathBuf>, default: fn() -> CodeMapSet) -> Result<CodeMapSet, CodeMapError> {
    match path {
        Some(p) => CodeMapSet::compile_file(p),
        None => Ok(default()),
    }
}

impl StudyResources {
    pub fn load(config: &StudyConfig) -> Result<Self, ConfigError> {
        config.validate()?;
        let m = &config.code_maps;
        let maps = StudyMaps {
            structured_sdoh: load_map(&m.structured_sdoh, crate::codes::default_structured_sdoh)?,
            mental_health: load_map(&m.mental_health, crate::codes::default_mental_health)?,
            charlson: load_map(&m.charlson, crate::codes::default_charlson)?,
        };
        for f in SdohGroup::Structured.factor_names() {
            if maps.structured_sdoh.get(f).is_none() {
                return Err(ConfigError::Invalid(format!("structured SDOH map lacks factor {f}")));
            }
        }
        let lexicon = match &config.lexicon {
            Some(p) => Lexicon::from_file(p)?,
            None => default_lexicon(),
        };
        let tagger: Box<dyn Tagger> = match &config.tagger {
            TaggerConfig::Lexicon => Box::new(LexiconTagger::new(lexicon.clone())),
            TaggerConfig::External { program, args } => Box::new(ExternalTagger {
                program: program.clone(),
                args: args.clone(),
            }),
        };
        let cohort = CohortConfig {
            period: config.period,
            history_years: config.history_years,
            adult_age: config.adult_age,
            max_age: config.max_age,
            attempt_lookback_years: config.attempt_lookback_years,
            attempt_codes: load_map(&m.suicide_attempt, crate::codes::default_suicide_attempt)?,
        };
        Ok(Self {
            cohort,
            maps,
            lexicon,
            tagger,
        })
    }
}

string_enum! {
    pub enum ModelMode {
        Single => "single",
        Pair => "pair",
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub model_id: String,
    pub mode: ModelMode,
    pub group: SdohGroup,
    pub exposures: Vec<String>,
}

impl ModelSpec {
    pub fn new(group: SdohGroup, exposures: &[&str]) -> Self {
        let mode = if exposures.len() == 1 { ModelMode::Single } else { ModelMode::Pair };
        Self {
            model_id: format!("{mode}-{group}-{}", exposures.join("+")),
            mode,
            group,
            exposures: exposures.iter().map(|e| e.to_string()).collect(),
        }
    }

    pub fn exposure_refs(&self) -> Vec<&str> {
        self.exposures.iter().map(String::as_str).collect()
    }
}

/// One model per factor per group, or one per unordered pair of distinct
/// factors within a group; groups in nlp, structured, combined order.
pub fn enumerate_models(mode: ModelMode) -> Vec<ModelSpec> {
    let mut out = Vec::new();
    for &group in SdohGroup::ALL {
        let names: Vec<&str> = group.factor_names().collect();
        match mode {
            ModelMode::Single => out.extend(names.iter().map(|n| ModelSpec::new(group, &[n]))),
            ModelMode::Pair => {
                for i in 0..names.len() {
                    for j in i + 1..names.len() {
                        out.push(ModelSpec::new(group, &[names[i], names[j]]));
                    }
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    #[test]
    fn battery_sizes() {
        let single = enumerate_models(ModelMode::Single);
        let pair = enumerate_models(ModelMode::Pair);
        let count = |v: &[ModelSpec], g| v.iter().filter(|s| s.group == g).count();
        assert_eq!(single.len(), 23);
        assert_eq!(pair.len(), 79);
        assert_eq!((count(&single, SdohGroup::Nlp), count(&single, SdohGroup::Structured), count(&single, SdohGroup::Combined)), (8, 6, 9));
        assert_eq!((count(&pair, SdohGroup::Nlp), count(&pair, SdohGroup::Structured), count(&pair, SdohGroup::Combined)), (28, 15, 36));
        let ids: BTreeSet<_> = single.iter().chain(&pair).map(|s| s.model_id.clone()).collect();
        assert_eq!(ids.len(), 102);
        for s in &pair {
            assert_ne!(s.exposures[0], s.exposures[1]);
            assert!(s.exposures.iter().all(|e| s.group.has_factor(e)));
        }
    }

    #[test]
    fn config_defaults_and_round_trip() {
        let c = StudyConfig::from_json("{}").unwrap();
        assert_eq!(c, StudyConfig::default());
        let text = serde_json::to_string(&c).unwrap();
        assert_eq!(StudyConfig::from_json(&text).unwrap(), c);
        let c = StudyConfig::from_json(r#"{"matching": {"ratio": 2}, "underfill": "drop", "ci_method": "normal_approx", "tagger": {"kind": "external", "program": "x", "args": []}}"#).unwrap();
        assert_eq!(c.matching.ratio, 2);
        assert_eq!(c.underfill, UnderfillPolicy::Drop);
        assert!(matches!(c.tagger, TaggerConfig::External { .. }));
        assert!(StudyConfig::from_json(r#"{"matching": {"ratio": 0}}"#).is_err());
        assert!(StudyConfig::from_json(r#"{"unknown": 1}"#).is_err());
        assert!(StudyConfig::from_json(r#"{"period": {"start": "2015-01-01", "end": "2014-01-01"}}"#).is_err());
    }

    #[test]
    fn resources_load_defaults() {
        let r = StudyResources::load(&StudyConfig::default()).unwrap();
        assert_eq!(r.maps.charlson.maps().len(), 17);
        assert_eq!(r.maps.mental_health.maps().len(), 7);
        assert_eq!(r.tagger.name(), LexiconTagger::new(default_lexicon()).name());
    }
}
