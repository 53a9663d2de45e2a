use super::extract::{parse_bit, FlagRow, FlagTable};
use super::{SdohGroup, WindowKind};
use crate::clogit::{DesignError, MatchedDesign};
use crate::dates::{age_on, Date};
use crate::ehr::{Dataset, MaritalStatus, PatientId, Race};
use crate::matching::MatchedSet;
use crate::nlp::FactorLabel;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::io::{Read, Write};
use thiserror::Error;

/// Age bands at the index date; the first is the reference level.
pub const AGE_BANDS: [(i32, i32, &str); 7] = [
    (18, 29, "18_29"),
    (30, 39, "30_39"),
    (40, 49, "40_49"),
    (50, 59, "50_59"),
    (60, 69, "60_69"),
    (70, 79, "70_79"),
    (80, 100, "80_100"),
];

pub fn age_band(age: i32) -> usize {
    AGE_BANDS.iter().position(|&(_, hi, _)| age <= hi).unwrap_or(AGE_BANDS.len() - 1)
}

/// One-hot demographic indicators with white, married and 18-29 as
/// reference levels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Demographics {
    pub race: Race,
    pub marital_status: MaritalStatus,
    pub age_band: usize,
}

impl Demographics {
    pub fn columns() -> Vec<String> {
        let race = Race::ALL.iter().filter(|&&r| r != Race::White).map(|r| format!("demo.race.{r}"));
        let age = AGE_BANDS[1..].iter().map(|(_, _, n)| format!("demo.age.{n}"));
        let marital = MaritalStatus::ALL
            .iter()
            .filter(|&&m| m != MaritalStatus::Married)
            .map(|m| format!("demo.marital.{m}"));
        race.chain(age).chain(marital).collect()
    }

    pub fn bits(&self) -> Vec<bool> {
        let race = Race::ALL.iter().filter(|&&r| r != Race::White).map(|&r| r == self.race);
        let age = (1..AGE_BANDS.len()).map(|i| i == self.age_band);
        let marital = MaritalStatus::ALL
            .iter()
            .filter(|&&m| m != MaritalStatus::Married)
            .map(|&m| m == self.marital_status);
        race.chain(age).chain(marital).collect()
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum AssembleError {
    #[error("subject {patient_id} in set {set_id} has no {window} row in the {table} flags")]
    MissingFlags {
        table: &'static str,
        set_id: usize,
        patient_id: PatientId,
        window: WindowKind,
    },
    #[error("flag table {table} lacks column {column}")]
    MissingColumn { table: &'static str, column: String },
    #[error("subject {0} has no patient record with a birth date")]
    MissingDemographics(PatientId),
    #[error("factor {factor:?} is not in the {group} group")]
    UnknownFactor { group: SdohGroup, factor: String },
    #[error("feature table lacks column {0}")]
    UnknownColumn(String),
    #[error(transparent)]
    Design(#[from] DesignError),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeatureRow {
    pub set_id: usize,
    pub patient_id: PatientId,
    pub is_case: bool,
    pub values: Vec<bool>,
}

/// Every binary feature any model may use, one row per case or control
/// slot, sets in order with the case first.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct FeatureTable {
    pub columns: Vec<String>,
    pub rows: Vec<FeatureRow>,
}

pub fn sdoh_column(window: WindowKind, group: SdohGroup, factor: &str) -> String {
    let w = match window {
        WindowKind::Exposure => "exp",
        WindowKind::Covariate => "cov",
    };
    format!("{w}.{group}.{factor}")
}

struct Lookup<'a> {
    table: &'static str,
    flags: &'a FlagTable,
    index: HashMap<(usize, &'a PatientId, bool, WindowKind), &'a FlagRow>,
}

impl<'a> Lookup<'a> {
    fn new(table: &'static str, flags: &'a FlagTable) -> Self {
        Self { table, flags, index: flags.index() }
    }

    fn col(&self, name: &str) -> Result<usize, AssembleError> {
        self.flags.column(name).ok_or_else(|| AssembleError::MissingColumn {
            table: self.table,
            column: name.to_string(),
        })
    }

    fn row(&self, set_id: usize, id: &'a PatientId, is_case: bool, window: WindowKind) -> Result<&'a FlagRow, AssembleError> {
        self.index.get(&(set_id, id, is_case, window)).copied().ok_or_else(|| AssembleError::MissingFlags {
            table: self.table,
            set_id,
            patient_id: id.clone(),
            window,
        })
    }
}

/// Joins structured and NLP flags with demographics into the full
/// feature table. Covariate-window copies of the SDOH factors and the
/// clinical covariates come from the covariate window; exposures from
/// the exposure window.
pub fn assemble(
    sets: &[MatchedSet],
    dataset: &Dataset,
    structured: &FlagTable,
    nlp: &FlagTable,
) -> Result<FeatureTable, AssembleError> {
    let s = Lookup::new("structured", structured);
    let n = Lookup::new("nlp", nlp);

    enum Src {
        Sdoh(WindowKind, Option<usize>, Option<usize>),
        Structured(usize),
        Nlp(usize),
    }
    let mut columns = Vec::new();
    let mut sources = Vec::new();
    for window in [WindowKind::Exposure, WindowKind::Covariate] {
        for &group in SdohGroup::ALL {
            for f in group.roster() {
                let sj = f.structured.map(|c| s.col(&format!("structured.{c}"))).transpose()?;
                let nj = f.nlp.map(|l| n.col(&format!("nlp.{l}"))).transpose()?;
                columns.push(sdoh_column(window, group, f.name));
                sources.push(Src::Sdoh(window, sj, nj));
            }
        }
    }
    for c in &structured.columns {
        if c.starts_with("mh.") || c.starts_with("charlson.") {
            columns.push(format!("cov.{c}"));
            sources.push(Src::Structured(s.col(c)?));
        }
    }
    for l in FactorLabel::NON_SDOH_COVARIATES {
        sources.push(Src::Nlp(n.col(&format!("nlp.{l}"))?));
        columns.push(format!("cov.nlp_other.{l}"));
    }
    columns.extend(Demographics::columns());

    let mut rows = Vec::new();
    for set in sets {
        let members = std::iter::once((&set.case_id, true)).chain(set.control_ids.iter().map(|c| (c, false)));
        for (id, is_case) in members {
            let rec = dataset.patient(id).filter(|p| p.birth_date.is_some()).ok_or_else(|| AssembleError::MissingDemographics(id.clone()))?;
            let demo = Demographics {
                race: rec.race,
                marital_status: rec.marital_status,
                age_band: age_band(age_on(rec.birth_date.expect("checked"), set.index_date)),
            };
            let sr = |w| s.row(set.set_id, id, is_case, w);
            let nr = |w| n.row(set.set_id, id, is_case, w);
            let (s_cov, s_exp, n_cov, n_exp) = (
                sr(WindowKind::Covariate)?,
                sr(WindowKind::Exposure)?,
                nr(WindowKind::Covariate)?,
                nr(WindowKind::Exposure)?,
            );
            let mut values = Vec::with_capacity(columns.len());
            for src in &sources {
                values.push(match *src {
                    Src::Sdoh(w, sj, nj) => {
                        let (srow, nrow) = match w {
                            WindowKind::Covariate => (s_cov, n_cov),
                            WindowKind::Exposure => (s_exp, n_exp),
                        };
                        sj.is_some_and(|j| srow.bits[j]) || nj.is_some_and(|j| nrow.bits[j])
                    }
                    Src::Structured(j) => s_cov.bits[j],
                    Src::Nlp(j) => n_cov.bits[j],
                });
            }
            values.extend(demo.bits());
            rows.push(FeatureRow {
                set_id: set.set_id,
                patient_id: id.clone(),
                is_case,
                values,
            });
        }
    }
    Ok(FeatureTable { columns, rows })
}

/// The design for one model: exposures first, then covariates.
#[derive(Debug, Clone)]
pub struct ModelDesign {
    pub group: SdohGroup,
    pub exposures: Vec<String>,
    pub design: MatchedDesign,
}

impl FeatureTable {
    pub fn column(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    /// Columns for a model on `group` with the given exposure factors:
    /// the exposures, the group's other factors from the covariate
    /// window, clinical covariates, NLP non-SDOH covariates and
    /// demographics.
    pub fn model_columns(&self, group: SdohGroup, exposures: &[&str]) -> Result<Vec<String>, AssembleError> {
        for e in exposures {
            if !group.has_factor(e) {
                return Err(AssembleError::UnknownFactor {
                    group,
                    factor: e.to_string(),
                });
            }
        }
        let mut cols: Vec<String> = exposures.iter().map(|e| sdoh_column(WindowKind::Exposure, group, e)).collect();
        cols.extend(
            group
                .factor_names()
                .filter(|f| !exposures.contains(f))
                .map(|f| sdoh_column(WindowKind::Covariate, group, f)),
        );
        cols.extend(
            self.columns
                .iter()
                .filter(|c| c.starts_with("cov.mh.") || c.starts_with("cov.charlson.") || c.starts_with("cov.nlp_other.") || c.starts_with("demo."))
                .cloned(),
        );
        for c in &cols {
            if self.column(c).is_none() {
                return Err(AssembleError::UnknownColumn(c.clone()));
            }
        }
        Ok(cols)
    }

    /// Builds the matched design for a model. Sets left without controls
    /// are skipped.
    pub fn design(&self, group: SdohGroup, exposures: &[&str]) -> Result<ModelDesign, AssembleError> {
        let cols = self.model_columns(group, exposures)?;
        let idx: Vec<usize> = cols.iter().map(|c| self.column(c).expect("checked")).collect();
        let mut design = MatchedDesign::new(cols);
        let to_row = |r: &FeatureRow| idx.iter().map(|&j| f64::from(u8::from(r.values[j]))).collect::<Vec<f64>>();
        let mut i = 0;
        while i < self.rows.len() {
            let set_id = self.rows[i].set_id;
            let mut j = i;
            while j < self.rows.len() && self.rows[j].set_id == set_id {
                j += 1;
            }
            let set = &self.rows[i..j];
            if let Some(case) = set.iter().find(|r| r.is_case) {
                let controls: Vec<Vec<f64>> = set.iter().filter(|r| !r.is_case).map(to_row).collect();
                if !controls.is_empty() {
                    design.push_set(&to_row(case), &controls)?;
                }
            }
            i = j;
        }
        Ok(ModelDesign {
            group,
            exposures: exposures.iter().map(|e| e.to_string()).collect(),
            design,
        })
    }

    /// Name, role and window of every column, for features.manifest.json.
    pub fn manifest(&self) -> serde_json::Value {
        let cols: Vec<_> = self
            .columns
            .iter()
            .map(|c| {
                let (role, window) = match c.split('.').next() {
                    Some("exp") => ("exposure", Some("exposure")),
                    Some("cov") => ("covariate", Some("covariate")),
                    _ => ("demographic", None),
                };
                serde_json::json!({ "name": c, "role": role, "window": window })
            })
            .collect();
        let sets = self.rows.iter().map(|r| r.set_id).collect::<std::collections::BTreeSet<_>>().len();
        serde_json::json!({
            "rows": self.rows.len(),
            "cases": self.rows.iter().filter(|r| r.is_case).count(),
            "sets": sets,
            "reference_levels": { "race": "white", "marital": "married", "age": AGE_BANDS[0].2 },
            "columns": cols,
        })
    }
}

/// Share of case and control rows with a factor present.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrevalenceRow {
    pub group: SdohGroup,
    pub factor: String,
    pub window: WindowKind,
    pub case_n: usize,
    pub case_pct: f64,
    pub control_n: usize,
    pub control_pct: f64,
}

pub fn prevalence(table: &FeatureTable) -> Vec<PrevalenceRow> {
    let cases = table.rows.iter().filter(|r| r.is_case).count();
    let controls = table.rows.len() - cases;
    let pct = |k: usize, n: usize| if n == 0 { 0.0 } else { 100.0 * k as f64 / n as f64 };
    let mut out = Vec::new();
    for &group in SdohGroup::ALL {
        for factor in group.factor_names() {
            for window in [WindowKind::Exposure, WindowKind::Covariate] {
                let Some(j) = table.column(&sdoh_column(window, group, factor)) else { continue };
                let case_n = table.rows.iter().filter(|r| r.is_case && r.values[j]).count();
                let control_n = table.rows.iter().filter(|r| !r.is_case && r.values[j]).count();
                out.push(PrevalenceRow {
                    group,
                    factor: factor.to_string(),
                    window,
                    case_n,
                    case_pct: pct(case_n, cases),
                    control_n,
                    control_pct: pct(control_n, controls),
                });
            }
        }
    }
    out
}

const KEY_COLUMNS: [&str; 3] = ["set_id", "patient_id", "is_case"];

#[derive(Debug, Error)]
pub enum FeatureCsvError {
    #[error("features.csv header must start with {expected:?}, found {found:?}")]
    Header { expected: String, found: String },
    #[error("features.csv line {line}: {message}")]
    Malformed { line: u64, message: String },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub fn write_features<W: Write>(w: W, table: &FeatureTable) -> Result<(), FeatureCsvError> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(KEY_COLUMNS.iter().copied().chain(table.columns.iter().map(String::as_str)))?;
    for r in &table.rows {
        let mut rec = vec![r.set_id.to_string(), r.patient_id.to_string(), u8::from(r.is_case).to_string()];
        rec.extend(r.values.iter().map(|&b| u8::from(b).to_string()));
        out.write_record(rec)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_features<R: Read>(r: R) -> Result<FeatureTable, FeatureCsvError> {
    let mut rdr = csv::Reader::from_reader(r);
    let header = rdr.headers()?.clone();
    if header.len() < KEY_COLUMNS.len() || header.iter().take(KEY_COLUMNS.len()).ne(KEY_COLUMNS) {
        return Err(FeatureCsvError::Header {
            expected: KEY_COLUMNS.join(","),
            found: header.iter().collect::<Vec<_>>().join(","),
        });
    }
    let columns: Vec<String> = header.iter().skip(KEY_COLUMNS.len()).map(String::from).collect();
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let bad = |message: String| FeatureCsvError::Malformed { line, message };
        if rec.len() != header.len() {
            return Err(bad(format!("expected {} fields, found {}", header.len(), rec.len())));
        }
        let values = rec
            .iter()
            .skip(KEY_COLUMNS.len())
            .map(|v| parse_bit(v).ok_or_else(|| bad(format!("value {v:?} is not 0 or 1"))))
            .collect::<Result<_, _>>()?;
        rows.push(FeatureRow {
            set_id: rec[0].parse().map_err(|_| bad(format!("bad set_id {:?}", &rec[0])))?,
            patient_id: PatientId::parse(&rec[1]).map_err(|e| bad(e.to_string()))?,
            is_case: parse_bit(&rec[2]).ok_or_else(|| bad(format!("bad is_case {:?}", &rec[2])))?,
            values,
        });
    }
    Ok(FeatureTable { columns, rows })
}

/// Age in whole years at `on`, banded.
pub fn age_band_on(birth: Date, on: Date) -> usize {
    age_band(age_on(birth, on))
}
