//! Factor code maps: compile JSON map files and flag patients per window.

use super::icd9::Icd9Code;
use super::pattern::{expand_pattern, PatternError};
use crate::dates::DateWindow;
use crate::ehr::{Dataset, PatientId};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet, HashMap};
use thiserror::Error;

string_enum! {
    /// How diagnosis codes are compared against map codes.
    pub enum MatchMode {
        /// Only identical codes match.
        Exact => "exact",
        /// A map code also matches its more specific children, so `296.2`
        /// matches `296.20`-`296.29` and `V61` matches every `V61.x`.
        PrefixChild => "prefix_child",
    }
}

impl Default for MatchMode {
    fn default() -> Self {
        MatchMode::PrefixChild
    }
}

#[derive(Debug, Error)]
pub enum CodeMapError {
    #[error("{origin}: invalid map file: {message}")]
    Syntax {
        origin: String,
        line: usize,
        message: String,
    },
    #[error("{origin}:{line}: factor {factor:?}: {source}")]
    Pattern {
        origin: String,
        line: usize,
        factor: String,
        #[source]
        source: PatternError,
    },
    #[error("{origin}:{line}: factor {factor:?}: invalid stop code {code}")]
    StopCode {
        origin: String,
        line: usize,
        factor: String,
        code: i64,
    },
    #[error("{origin}:{line}: duplicate factor {factor:?}")]
    DuplicateFactor {
        origin: String,
        line: usize,
        factor: String,
    },
    #[error("{origin}: {source}")]
    Io {
        origin: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct FactorEntry {
    factor: String,
    #[serde(default)]
    icd9: Vec<String>,
    #[serde(default)]
    stop_codes: Vec<i64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct MapFile {
    #[serde(default)]
    name: Option<String>,
    #[serde(default)]
    source: Option<String>,
    #[serde(default)]
    match_mode: MatchMode,
    factors: Vec<FactorEntry>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
enum MapFileShape {
    Full(MapFile),
    Bare(Vec<FactorEntry>),
}

/// One factor's compiled code list.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CodeMap {
    pub factor_name: String,
    pub icd9_patterns: Vec<String>,
    pub codes: BTreeSet<Icd9Code>,
    pub stop_codes: BTreeSet<u16>,
}

/// All factors of one map file, with lookup indexes.
#[derive(Debug, Clone)]
pub struct CodeMapSet {
    pub name: String,
    pub source: Option<String>,
    pub mode: MatchMode,
    maps: Vec<CodeMap>,
    by_code: HashMap<String, Vec<usize>>,
    by_stop: HashMap<u16, Vec<usize>>,
}

fn line_of(text: &str, needle: &str, after: usize) -> usize {
    let start = after.min(text.len());
    let at = text[start..].find(needle).map(|i| i + start).or_else(|| text.find(needle));
    at.map(|i| text[..i].matches('\n').count() + 1).unwrap_or(0)
}

impl CodeMapSet {
    /// Compiles a map file's contents; `origin` names the file in errors.
    pub fn compile_str(text: &str, origin: &str) -> Result<Self, CodeMapError> {
        let shape: MapFileShape = serde_json::from_str(text).map_err(|e| CodeMapError::Syntax {
            origin: origin.to_string(),
            line: e.line(),
            message: e.to_string(),
        })?;
        let file = match shape {
            MapFileShape::Full(f) => f,
            MapFileShape::Bare(factors) => MapFile {
                name: None,
                source: None,
                match_mode: MatchMode::default(),
                factors,
            },
        };

        let mut maps = Vec::with_capacity(file.factors.len());
        let mut seen = BTreeSet::new();
        for entry in file.factors {
            let factor_quoted = format!("\"{}\"", entry.factor);
            let factor_at = text.find(&factor_quoted).unwrap_or(0);
            if !seen.insert(entry.factor.clone()) {
                let second = text[factor_at + 1..].find(&factor_quoted).map(|i| i + factor_at + 1).unwrap_or(factor_at);
                return Err(CodeMapError::DuplicateFactor {
                    origin: origin.to_string(),
                    line: text[..second].matches('\n').count() + 1,
                    factor: entry.factor,
                });
            }
            let mut codes = BTreeSet::new();
            for pattern in &entry.icd9 {
                let expanded = expand_pattern(pattern).map_err(|source| CodeMapError::Pattern {
                    origin: origin.to_string(),
                    line: line_of(text, &format!("\"{pattern}\""), factor_at),
                    factor: entry.factor.clone(),
                    source,
                })?;
                codes.extend(expanded);
            }
            let mut stop_codes = BTreeSet::new();
            for &code in &entry.stop_codes {
                if !(1..=999).contains(&code) {
                    return Err(CodeMapError::StopCode {
                        origin: origin.to_string(),
                        line: line_of(text, &code.to_string(), factor_at),
                        factor: entry.factor.clone(),
                        code,
                    });
                }
                stop_codes.insert(code as u16);
            }
            maps.push(CodeMap {
                factor_name: entry.factor,
                icd9_patterns: entry.icd9,
                codes,
                stop_codes,
            });
        }

        let mut by_code: HashMap<String, Vec<usize>> = HashMap::new();
        let mut by_stop: HashMap<u16, Vec<usize>> = HashMap::new();
        for (i, m) in maps.iter().enumerate() {
            for c in &m.codes {
                by_code.entry(c.as_str().to_string()).or_default().push(i);
            }
            for &s in &m.stop_codes {
                by_stop.entry(s).or_default().push(i);
            }
        }

        Ok(Self {
            name: file.name.unwrap_or_else(|| origin.to_string()),
            source: file.source,
            mode: file.match_mode,
            maps,
            by_code,
            by_stop,
        })
    }

    pub fn compile_file(path: &std::path::Path) -> Result<Self, CodeMapError> {
        let origin = path.display().to_string();
        let text = std::fs::read_to_string(path).map_err(|source| CodeMapError::Io {
            origin: origin.clone(),
            source,
        })?;
        Self::compile_str(&text, &origin)
    }

    pub fn maps(&self) -> &[CodeMap] {
        &self.maps
    }

    pub fn factor_names(&self) -> impl Iterator<Item = &str> {
        self.maps.iter().map(|m| m.factor_name.as_str())
    }

    pub fn get(&self, factor: &str) -> Option<&CodeMap> {
        self.maps.iter().find(|m| m.factor_name == factor)
    }

    /// Indexes of factors raised by a diagnosis code.
    pub fn factors_for_code<'a>(&'a self, code: &'a Icd9Code) -> impl Iterator<Item = usize> + 'a {
        let candidates: Box<dyn Iterator<Item = &str>> = match self.mode {
            MatchMode::Exact => Box::new(std::iter::once(code.as_str())),
            MatchMode::PrefixChild => Box::new(code.ancestors()),
        };
        candidates
            .filter_map(|c| self.by_code.get(c))
            .flat_map(|v| v.iter().copied())
    }

    pub fn factors_for_stop(&self, stop: u16) -> impl Iterator<Item = usize> + '_ {
        self.by_stop.get(&stop).into_iter().flat_map(|v| v.iter().copied())
    }

    /// One flag per factor: raised iff a matching diagnosis or stop-code
    /// encounter is dated inside `window`.
    pub fn flags_in_window(&self, patient: &PatientId, dataset: &Dataset, window: DateWindow) -> StructuredFlags {
        let mut raised = vec![false; self.maps.len()];
        for d in dataset.diagnoses_between(patient, window.start, window.end) {
            for i in self.factors_for_code(&d.code) {
                raised[i] = true;
            }
        }
        for e in dataset.encounters_between(patient, window.start, window.end) {
            if let Some(stop) = e.stop_code {
                for i in self.factors_for_stop(stop.get()) {
                    raised[i] = true;
                }
            }
        }
        StructuredFlags {
            patient_id: patient.clone(),
            window,
            flags: self
                .maps
                .iter()
                .zip(raised)
                .map(|(m, r)| (m.factor_name.clone(), r))
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct StructuredFlags {
    pub patient_id: PatientId,
    pub window: DateWindow,
    pub flags: BTreeMap<String, bool>,
}

impl StructuredFlags {
    pub fn get(&self, factor: &str) -> bool {
        self.flags.get(factor).copied().unwrap_or(false)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MAP: &str = r#"{
  "name": "test",
  "match_mode": "prefix_child",
  "factors": [
    {"factor": "legal_problems", "icd9": ["V62.5", "V62.89", "E849.7"], "stop_codes": [591, 592]},
    {"factor": "housing_instability", "icd9": ["V60.0-2", "V60.89"], "stop_codes": [504]},
    {"factor": "depression", "icd9": ["296.2", "311"]}
  ]
}"#;

    #[test]
    fn compiles_and_expands() {
        let set = CodeMapSet::compile_str(MAP, "test.json").unwrap();
        let housing = set.get("housing_instability").unwrap();
        let codes: Vec<_> = housing.codes.iter().map(|c| c.to_string()).collect();
        assert_eq!(codes, ["V60.0", "V60.1", "V60.2", "V60.89"]);
        assert_eq!(set.get("legal_problems").unwrap().stop_codes, BTreeSet::from([591, 592]));
    }

    #[test]
    fn prefix_child_matching() {
        let set = CodeMapSet::compile_str(MAP, "test.json").unwrap();
        let code = Icd9Code::parse("296.23").unwrap();
        assert_eq!(set.factors_for_code(&code).collect::<Vec<_>>(), [2]);
        let code = Icd9Code::parse("311.1").unwrap();
        assert_eq!(set.factors_for_code(&code).collect::<Vec<_>>(), [2]);
        let code = Icd9Code::parse("296.3").unwrap();
        assert!(set.factors_for_code(&code).next().is_none());

        let exact = CodeMapSet::compile_str(&MAP.replace("prefix_child", "exact"), "t").unwrap();
        let code = Icd9Code::parse("296.23").unwrap();
        assert!(exact.factors_for_code(&code).next().is_none());
    }

    #[test]
    fn bad_pattern_reports_line() {
        let text = "{\"factors\": [\n  {\"factor\": \"a\", \"icd9\": [\"V60.0\"]},\n  {\"factor\": \"b\",\n   \"icd9\": [\"V60.2-0\"]}\n]}";
        match CodeMapSet::compile_str(text, "m.json").unwrap_err() {
            CodeMapError::Pattern { line, factor, .. } => {
                assert_eq!(line, 4);
                assert_eq!(factor, "b");
            }
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn duplicate_factor_rejected() {
        let text = "[{\"factor\": \"a\"},\n{\"factor\": \"a\"}]";
        match CodeMapSet::compile_str(text, "m.json").unwrap_err() {
            CodeMapError::DuplicateFactor { line, .. } => assert_eq!(line, 2),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn invalid_stop_code() {
        assert!(matches!(
            CodeMapSet::compile_str("[{\"factor\": \"a\", \"stop_codes\": [1000]}]", "m").unwrap_err(),
            CodeMapError::StopCode { code: 1000, .. }
        ));
    }

    #[test]
    fn one_code_can_raise_several_factors() {
        let text = "[{\"factor\": \"a\", \"icd9\": [\"V62.89\"]}, {\"factor\": \"b\", \"icd9\": [\"V62.89\"]}]";
        let set = CodeMapSet::compile_str(text, "m").unwrap();
        let code = Icd9Code::parse("V62.89").unwrap();
        assert_eq!(set.factors_for_code(&code).collect::<Vec<_>>(), [0, 1]);
    }
}
