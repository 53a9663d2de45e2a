use super::{ModelMode, StudyConfig};
use crate::clogit::DroppedColumn;
use crate::cohort::IncidenceEstimate;
use crate::dates::age_on;
use crate::ehr::{Dataset, PatientRecord};
use crate::features::{age_band, PrevalenceRow, SdohGroup, AGE_BANDS};
use crate::matching::{MatchSummary, MatchedSet};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub beta: f64,
    pub se: f64,
    pub aor: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExposureEstimate {
    pub factor: String,
    /// `None` when the exposure column was dropped or the fit failed.
    pub estimate: Option<Estimate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelRow {
    pub model_id: String,
    pub mode: ModelMode,
    pub group: SdohGroup,
    pub exposures: Vec<ExposureEstimate>,
    pub status: String,
    pub message: Option<String>,
    pub converged: bool,
    pub separation: bool,
    pub iterations: usize,
    pub loglik: Option<f64>,
    pub n_sets: usize,
    pub n_rows: usize,
    pub n_covariates: usize,
    /// Largest VIF over the estimated columns; `None` if unavailable or
    /// infinite.
    pub max_vif: Option<f64>,
    pub dropped_columns: Vec<DroppedColumn>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub variable: String,
    pub level: String,
    pub case_n: usize,
    pub case_pct: f64,
    pub control_n: usize,
    pub control_pct: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortCounts {
    pub patients: usize,
    pub members: usize,
    pub excluded_patients: usize,
    pub exclusions: BTreeMap<String, usize>,
    pub person_years: f64,
    pub cases: usize,
    pub case_diagnostics: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NlpCounts {
    pub notes_tagged: usize,
    pub mentions: usize,
    pub failed_paragraphs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyReport {
    pub seed: u64,
    pub dataset_fingerprint: String,
    pub config: StudyConfig,
    pub cohort: CohortCounts,
    pub incidence: IncidenceEstimate,
    pub matching: MatchSummary,
    pub nlp: NlpCounts,
    pub table1: Vec<SummaryRow>,
    pub prevalence: Vec<PrevalenceRow>,
    pub single: Vec<ModelRow>,
    /// `None` when pair models were not requested.
    pub pair: Option<Vec<ModelRow>>,
}

impl StudyReport {
    pub fn rows(&self) -> impl Iterator<Item = &ModelRow> {
        self.single.iter().chain(self.pair.iter().flatten())
    }
}

pub fn format_aor(aor: f64, ci_low: f64, ci_high: f64) -> String {
    format!("{aor:.2} ({ci_low:.2}, {ci_high:.2})")
}

fn format_estimate(e: &ExposureEstimate) -> String {
    match &e.estimate {
        Some(x) => format_aor(x.aor, x.ci_low, x.ci_high),
        None => "NA".into(),
    }
}

pub fn format_incidence(e: &IncidenceEstimate) -> String {
    format!("{:.2} per 100,000 ({:.2}, {:.2})", e.rate_per_100k, e.ci_low, e.ci_high)
}

fn pct(k: usize, n: usize) -> f64 {
    if n == 0 {
        0.0
    } else {
        100.0 * k as f64 / n as f64
    }
}

/// Demographics of case rows and control slots at the index date.
pub fn cohort_summary(sets: &[MatchedSet], dataset: &Dataset) -> Vec<SummaryRow> {
    type Levels = fn(&PatientRecord, crate::dates::Date) -> String;
    let variables: [(&str, Levels, Vec<String>); 4] = [
        ("sex", |p, _| p.sex.to_string(), crate::ehr::Sex::ALL.iter().map(|s| s.to_string()).collect()),
        (
            "age",
            |p, on| p.birth_date.map_or("unknown".into(), |b| AGE_BANDS[age_band(age_on(b, on))].2.to_string()),
            AGE_BANDS.iter().map(|b| b.2.to_string()).collect(),
        ),
        ("race", |p, _| p.race.to_string(), crate::ehr::Race::ALL.iter().map(|r| r.to_string()).collect()),
        (
            "marital_status",
            |p, _| p.marital_status.to_string(),
            crate::ehr::MaritalStatus::ALL.iter().map(|m| m.to_string()).collect(),
        ),
    ];
    let mut counts: BTreeMap<(usize, String), (usize, usize)> = BTreeMap::new();
    let (mut cases, mut controls) = (0, 0);
    for set in sets {
        let subjects = std::iter::once((&set.case_id, true)).chain(set.control_ids.iter().map(|c| (c, false)));
        for (id, is_case) in subjects {
            let Some(p) = dataset.patient(id) else { continue };
            if is_case {
                cases += 1;
            } else {
                controls += 1;
            }
            for (vi, (_, level, _)) in variables.iter().enumerate() {
                let e = counts.entry((vi, level(p, set.index_date))).or_default();
                if is_case {
                    e.0 += 1;
                } else {
                    e.1 += 1;
                }
            }
        }
    }
    let mut out = Vec::new();
    for (vi, (name, _, levels)) in variables.iter().enumerate() {
        let mut all = levels.clone();
        for (k, _) in counts.range((vi, String::new())..(vi + 1, String::new())) {
            if !all.contains(&k.1) {
                all.push(k.1.clone());
            }
        }
        for level in all {
            let (c, k) = counts.get(&(vi, level.clone())).copied().unwrap_or_default();
            out.push(SummaryRow {
                variable: name.to_string(),
                level,
                case_n: c,
                case_pct: pct(c, cases),
                control_n: k,
                control_pct: pct(k, controls),
            });
        }
    }
    out
}

string_enum! {
    pub enum RenderFormat {
        Markdown => "markdown",
        Csv => "csv",
        Json => "json",
    }
}

fn csv_string(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for r in rows {
        w.write_record(&r).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8")
}

fn markdown(report: &StudyReport) -> String {
    let mut s = String::new();
    let c = &report.cohort;
    let _ = writeln!(s, "# Study report\n");
    let _ = writeln!(s, "Seed: {}  ", report.seed);
    let _ = writeln!(s, "Dataset fingerprint: `{}`\n", report.dataset_fingerprint);
    let _ = writeln!(s, "## Cohort\n");
    let _ = writeln!(s, "| Quantity | Value |\n|---|---|");
    let _ = writeln!(s, "| Patients | {} |", c.patients);
    let _ = writeln!(s, "| Cohort members | {} |", c.members);
    let _ = writeln!(s, "| Excluded patients | {} |", c.excluded_patients);
    for (reason, n) in &c.exclusions {
        let _ = writeln!(s, "| Excluded: {reason} | {n} |");
    }
    let _ = writeln!(s, "| Person-years | {:.1} |", c.person_years);
    let _ = writeln!(s, "| Cases | {} |", c.cases);
    let _ = writeln!(s, "| Suicide deaths not counted as cases | {} |\n", c.case_diagnostics);
    let _ = writeln!(
        s,
        "Incidence: {} person-years ({} interval)\n",
        format_incidence(&report.incidence),
        report.incidence.ci_method
    );

    let m = &report.matching;
    let _ = writeln!(s, "## Matching\n");
    let _ = writeln!(s, "| Quantity | Value |\n|---|---|");
    let _ = writeln!(s, "| Cases | {} |", m.cases);
    let _ = writeln!(s, "| Matched sets | {} |", m.matched_sets);
    let _ = writeln!(s, "| Control slots | {} |", m.control_slots);
    let _ = writeln!(s, "| Unique controls | {} |", m.unique_controls);
    let _ = writeln!(s, "| Reused controls | {} |", m.reused_controls);
    let mut kinds: BTreeMap<String, usize> = BTreeMap::new();
    for d in &m.diagnostics {
        *kinds.entry(d.kind.to_string()).or_default() += 1;
    }
    for (k, n) in kinds {
        let _ = writeln!(s, "| Cases {k} | {n} |");
    }
    let _ = writeln!(s);
    let _ = writeln!(
        s,
        "Notes tagged: {}; mentions: {}; failed paragraphs: {}\n",
        report.nlp.notes_tagged, report.nlp.mentions, report.nlp.failed_paragraphs
    );

    let _ = writeln!(s, "## Table 1: cases and controls at the index date\n");
    let _ = writeln!(s, "| Variable | Level | Cases n (%) | Controls n (%) |\n|---|---|---|---|");
    for r in &report.table1 {
        let _ = writeln!(
            s,
            "| {} | {} | {} ({:.1}) | {} ({:.1}) |",
            r.variable, r.level, r.case_n, r.case_pct, r.control_n, r.control_pct
        );
    }
    let _ = writeln!(s, "\n## Table 2: SDOH prevalence\n");
    let _ = writeln!(s, "| Group | Factor | Window | Cases n (%) | Controls n (%) |\n|---|---|---|---|---|");
    for r in &report.prevalence {
        let _ = writeln!(
            s,
            "| {} | {} | {} | {} ({:.1}) | {} ({:.1}) |",
            r.group, r.factor, r.window, r.case_n, r.case_pct, r.control_n, r.control_pct
        );
    }
    let _ = writeln!(s, "\n## Table 3: single-exposure models, aOR (95% CI)\n");
    let _ = writeln!(s, "| Group | Factor | aOR (95% CI) | Status |\n|---|---|---|---|");
    for r in &report.single {
        let _ = writeln!(s, "| {} | {} | {} | {} |", r.group, r.exposures[0].factor, format_estimate(&r.exposures[0]), status(r));
    }
    let _ = writeln!(s, "\n## Pair models, aOR (95% CI)\n");
    match &report.pair {
        None => {
            let _ = writeln!(s, "Pair models were not run.");
        }
        Some(rows) => {
            let _ = writeln!(s, "| Group | Factor 1 | aOR (95% CI) | Factor 2 | aOR (95% CI) | Status |\n|---|---|---|---|---|---|");
            for r in rows {
                let _ = writeln!(
                    s,
                    "| {} | {} | {} | {} | {} | {} |",
                    r.group,
                    r.exposures[0].factor,
                    format_estimate(&r.exposures[0]),
                    r.exposures[1].factor,
                    format_estimate(&r.exposures[1]),
                    status(r)
                );
            }
        }
    }
    let _ = writeln!(s, "\n## Configuration\n\n```json\n{}\n```", serde_json::to_string_pretty(&report.config).expect("config serializes"));
    s
}

fn status(r: &ModelRow) -> String {
    let mut flags = vec![r.status.clone()];
    if !r.converged && r.status == "ok" {
        flags.push("not converged".into());
    }
    if r.separation {
        flags.push("separation".into());
    }
    flags.join(", ")
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x}")).unwrap_or_default()
}

/// Named file contents for one output format.
pub fn render_report(report: &StudyReport, format: RenderFormat) -> Vec<(String, String)> {
    match format {
        RenderFormat::Markdown => vec![("report.md".into(), markdown(report))],
        RenderFormat::Json => vec![(
            "report.json".into(),
            serde_json::to_string_pretty(report).expect("report serializes") + "\n",
        )],
        RenderFormat::Csv => {
            let mut files = vec![
                (
                    "table1.csv".to_string(),
                    csv_string(
                        &["variable", "level", "case_n", "case_pct", "control_n", "control_pct"],
                        report.table1.iter().map(|r| {
                            vec![
                                r.variable.clone(),
                                r.level.clone(),
                                r.case_n.to_string(),
                                format!("{:.2}", r.case_pct),
                                r.control_n.to_string(),
                                format!("{:.2}", r.control_pct),
                            ]
                        }),
                    ),
                ),
                ("prevalence.csv".to_string(), prevalence_csv(&report.prevalence)),
                ("table_single.csv".to_string(), models_csv(&report.single)),
                (
                    "incidence.csv".to_string(),
                    csv_string(
                        &["events", "person_years", "rate_per_100k", "ci_low", "ci_high", "ci_method", "formatted"],
                        [vec![
                            report.incidence.events.to_string(),
                            format!("{}", report.incidence.person_years),
                            format!("{}", report.incidence.rate_per_100k),
                            format!("{}", report.incidence.ci_low),
                            format!("{}", report.incidence.ci_high),
                            report.incidence.ci_method.to_string(),
                            format_incidence(&report.incidence),
                        ]],
                    ),
                ),
            ];
            if let Some(pair) = &report.pair {
                files.push(("table_pair.csv".into(), models_csv(pair)));
            }
            files
        }
    }
}

pub(crate) fn prevalence_csv(rows: &[PrevalenceRow]) -> String {
    csv_string(
        &["group", "factor", "window", "case_n", "case_pct", "control_n", "control_pct"],
        rows.iter().map(|r| {
            vec![
                r.group.to_string(),
                r.factor.clone(),
                r.window.to_string(),
                r.case_n.to_string(),
                format!("{:.2}", r.case_pct),
                r.control_n.to_string(),
                format!("{:.2}", r.control_pct),
            ]
        }),
    )
}

/// One line per (model, exposure).
pub(crate) fn models_csv(rows: &[ModelRow]) -> String {
    let header = [
        "model_id", "mode", "group", "exposure", "beta", "se", "aor", "ci_low", "ci_high", "formatted", "status", "converged",
        "separation", "n_sets", "n_rows", "max_vif",
    ];
    csv_string(
        &header,
        rows.iter().flat_map(|r| {
            r.exposures.iter().map(move |e| {
                let est = e.estimate;
                vec![
                    r.model_id.clone(),
                    r.mode.to_string(),
                    r.group.to_string(),
                    e.factor.clone(),
                    opt(est.map(|x| x.beta)),
                    opt(est.map(|x| x.se)),
                    opt(est.map(|x| x.aor)),
                    opt(est.map(|x| x.ci_low)),
                    opt(est.map(|x| x.ci_high)),
                    format_estimate(e),
                    r.status.clone(),
                    r.converged.to_string(),
                    r.separation.to_string(),
                    r.n_sets.to_string(),
                    r.n_rows.to_string(),
                    opt(r.max_vif),
                ]
            })
        }),
    )
}

/// Writes every format into `dir`.
pub fn write_report_files(report: &StudyReport, dir: &Path) -> std::io::Result<Vec<String>> {
    std::fs::create_dir_all(dir)?;
    let mut names = Vec::new();
    for &format in RenderFormat::ALL {
        for (name, content) in render_report(report, format) {
            std::fs::write(dir.join(&name), content)?;
            names.push(name);
        }
    }
    if report.pair.is_none() {
        let stale = dir.join("table_pair.csv");
        if stale.exists() {
            std::fs::remove_file(stale)?;
        }
    }
    Ok(names)
}
