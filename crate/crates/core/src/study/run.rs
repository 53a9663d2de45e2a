use super::report::{cohort_summary, models_csv, prevalence_csv, write_report_files, CohortCounts, Estimate, ExposureEstimate, ModelRow, NlpCounts, StudyReport};
use super::{enumerate_models, ConfigError, ModelMode, ModelSpec, StudyConfig, StudyResources};
use crate::clogit::{fit, vif, FitConfig, VifStatus};
use crate::cohort::{build_base_cohort, identify_cases, incidence, read_cohort, read_exclusions, write_cohort, write_exclusions, BaseCohort, CaseIdentification};
use crate::ehr::Dataset;
use crate::features::{
    assemble, extract_nlp, extract_structured, prevalence, read_features, read_flags, sdoh_column, subject_windows, subjects,
    write_features, write_flags, FeatureTable, FlagTable, NlpExtraction, WindowKind,
};
use crate::matching::{build_matched_cohort, read_matched_sets, write_matched_sets, MatchPool, MatchSummary, MatchedCohort};
use crate::nlp::{read_mentions, write_mentions};
use rayon::prelude::*;
use serde::{de::DeserializeOwned, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::fmt::Display;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use thiserror::Error;

string_enum! {
    pub enum Stage {
        Cohort => "cohort",
        Match => "match",
        ExtractStructured => "extract-structured",
        ExtractNlp => "extract-nlp",
        Assemble => "assemble",
        Fit => "fit",
        Report => "report",
    }
}

#[derive(Debug, Error)]
pub enum StudyError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("stage {stage} failed: {message}")]
    Stage { stage: Stage, message: String },
}

fn failed<E: Display>(stage: Stage) -> impl Fn(E) -> StudyError {
    move |e| StudyError::Stage {
        stage,
        message: e.to_string(),
    }
}

struct HashWriter(Sha256);

impl Write for HashWriter {
    fn write(&mut self, buf: &[u8]) -> std::io::Result<usize> {
        self.0.update(buf);
        Ok(buf.len())
    }
    fn flush(&mut self) -> std::io::Result<()> {
        Ok(())
    }
}

fn hex(digest: impl AsRef<[u8]>) -> String {
    digest.as_ref().iter().map(|b| format!("{b:02x}")).collect()
}

/// SHA-256 over every record of every table, in dataset order.
pub fn dataset_fingerprint(dataset: &Dataset) -> String {
    let mut w = HashWriter(Sha256::new());
    fn all<T: Serialize>(w: &mut HashWriter, tag: &str, rows: &[T]) {
        let _ = writeln!(w, "{tag} {}", rows.len());
        for r in rows {
            serde_json::to_writer(&mut *w, r).expect("records serialize");
            let _ = w.write_all(b"\n");
        }
    }
    all(&mut w, "patients", dataset.patients());
    all(&mut w, "encounters", dataset.encounters());
    all(&mut w, "diagnoses", dataset.diagnoses());
    all(&mut w, "notes", dataset.notes());
    all(&mut w, "deaths", dataset.deaths());
    hex(w.0.finalize())
}

/// A stage's value, the fingerprint of everything it was computed from,
/// and whether it was loaded from a previous run.
#[derive(Debug, Clone)]
pub struct Staged<T> {
    pub value: T,
    pub fingerprint: String,
    pub reused: bool,
}

#[derive(Debug, Clone)]
pub struct CohortStage {
    pub cohort: BaseCohort,
    pub cases: CaseIdentification,
}

/// A study over one dataset, persisting each stage under `out`.
pub struct StudyRun<'a> {
    pub dataset: &'a Dataset,
    pub config: StudyConfig,
    pub resources: StudyResources,
    pub seed: u64,
    pub out: PathBuf,
    dataset_fp: String,
    config_json: String,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> std::io::Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, String> {
    let f = File::open(path).map_err(|e| format!("{}: {e}", path.display()))?;
    serde_json::from_reader(BufReader::new(f)).map_err(|e| format!("{}: {e}", path.display()))
}

fn create(path: &Path) -> std::io::Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

fn open(path: &Path) -> Result<BufReader<File>, String> {
    File::open(path).map(BufReader::new).map_err(|e| format!("{}: {e}", path.display()))
}

/// Fits one model and summarises it as a report row.
pub fn fit_model(table: &FeatureTable, spec: &ModelSpec, config: &FitConfig) -> ModelRow {
    let mut row = ModelRow {
        model_id: spec.model_id.clone(),
        mode: spec.mode,
        group: spec.group,
        exposures: spec
            .exposures
            .iter()
            .map(|f| ExposureEstimate {
                factor: f.clone(),
                estimate: None,
            })
            .collect(),
        status: "failed".into(),
        message: None,
        converged: false,
        separation: false,
        iterations: 0,
        loglik: None,
        n_sets: 0,
        n_rows: 0,
        n_covariates: 0,
        max_vif: None,
        dropped_columns: Vec::new(),
    };
    let design = match table.design(spec.group, &spec.exposure_refs()) {
        Ok(d) => d.design,
        Err(e) => {
            row.message = Some(e.to_string());
            return row;
        }
    };
    row.n_sets = design.n_sets();
    row.n_rows = design.n_rows();
    let result = match fit(&design, config) {
        Ok(r) => r,
        Err(e) => {
            row.message = Some(e.to_string());
            return row;
        }
    };
    for e in &mut row.exposures {
        let col = sdoh_column(WindowKind::Exposure, spec.group, &e.factor);
        e.estimate = result.index_of(&col).map(|j| Estimate {
            beta: result.beta[j],
            se: result.se[j],
            aor: result.aor[j],
            ci_low: result.ci_low[j],
            ci_high: result.ci_high[j],
        });
    }
    let kept: Vec<usize> = result
        .columns
        .iter()
        .filter_map(|c| design.columns().iter().position(|d| d == c))
        .collect();
    row.max_vif = vif(&design.select(&kept).pooled(), &result.columns)
        .ok()
        .filter(|r| r.entries.iter().all(|e| e.status != VifStatus::Infinite))
        .map(|r| r.max_vif);
    row.status = if row.exposures.iter().all(|e| e.estimate.is_some()) {
        "ok".into()
    } else {
        "exposure_dropped".into()
    };
    row.converged = result.converged;
    row.separation = result.separation;
    row.iterations = result.iterations;
    row.loglik = Some(result.loglik);
    row.n_covariates = result.columns.len();
    row.dropped_columns = result.dropped_columns;
    row
}

impl<'a> StudyRun<'a> {
    pub fn new(dataset: &'a Dataset, config: StudyConfig, seed: u64, out: impl Into<PathBuf>) -> Result<Self, StudyError> {
        let resources = StudyResources::load(&config)?;
        let config_json = serde_json::to_string(&config).expect("config serializes");
        Ok(Self {
            dataset,
            config,
            resources,
            seed,
            out: out.into(),
            dataset_fp: dataset_fingerprint(dataset),
            config_json,
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn marker(&self, stage: Stage) -> PathBuf {
        self.out.join("stages").join(format!("{stage}.fingerprint"))
    }

    fn fingerprint(&self, stage: Stage, upstream: &[&str]) -> String {
        let mut h = Sha256::new();
        h.update(stage.as_str());
        h.update([0]);
        h.update(self.config_json.as_bytes());
        h.update([0]);
        h.update(self.seed.to_le_bytes());
        for u in upstream {
            h.update([0]);
            h.update(u.as_bytes());
        }
        hex(h.finalize())
    }

    /// Loads the stage's persisted outputs when their fingerprint matches;
    /// otherwise computes, writes and marks them.
    fn stage<T>(
        &self,
        stage: Stage,
        upstream: &[&str],
        compute: impl FnOnce() -> Result<T, String>,
        write: impl FnOnce(&T) -> Result<(), String>,
        load: impl FnOnce() -> Result<T, String>,
    ) -> Result<Staged<T>, StudyError> {
        let fingerprint = self.fingerprint(stage, upstream);
        let marker = self.marker(stage);
        if std::fs::read_to_string(&marker).ok().as_deref() == Some(fingerprint.as_str()) {
            match load() {
                Ok(value) => {
                    log::info!("stage {stage}: reusing persisted outputs");
                    return Ok(Staged {
                        value,
                        fingerprint,
                        reused: true,
                    });
                }
                Err(e) => log::warn!("stage {stage}: persisted outputs unreadable ({e}); recomputing"),
            }
        }
        std::fs::create_dir_all(self.out.join("stages")).map_err(failed(stage))?;
        if marker.exists() {
            std::fs::remove_file(&marker).map_err(failed(stage))?;
        }
        log::info!("stage {stage}: running");
        let value = compute().map_err(failed(stage))?;
        write(&value).map_err(failed(stage))?;
        std::fs::write(&marker, &fingerprint).map_err(failed(stage))?;
        Ok(Staged {
            value,
            fingerprint,
            reused: false,
        })
    }

    pub fn cohort(&self) -> Result<Staged<CohortStage>, StudyError> {
        let (cohort_csv, excl_csv, cases_json) = (self.path("cohort.csv"), self.path("exclusions.csv"), self.path("cases.json"));
        self.stage(
            Stage::Cohort,
            &[&self.dataset_fp],
            || {
                let cohort = build_base_cohort(self.dataset, &self.resources.cohort);
                let cases = identify_cases(&cohort.members, self.dataset.deaths(), self.config.period);
                log::info!("cohort: {} members, {} cases", cohort.members.len(), cases.cases.len());
                Ok(CohortStage { cohort, cases })
            },
            |v| {
                write_cohort(create(&cohort_csv).map_err(|e| e.to_string())?, &v.cohort.members).map_err(|e| e.to_string())?;
                write_exclusions(create(&excl_csv).map_err(|e| e.to_string())?, &v.cohort.exclusions).map_err(|e| e.to_string())?;
                write_json(&cases_json, &v.cases).map_err(|e| e.to_string())
            },
            || {
                Ok(CohortStage {
                    cohort: BaseCohort {
                        members: read_cohort(open(&cohort_csv)?).map_err(|e| e.to_string())?,
                        exclusions: read_exclusions(open(&excl_csv)?).map_err(|e| e.to_string())?,
                    },
                    cases: read_json(&cases_json)?,
                })
            },
        )
    }

    pub fn matching(&self, cohort: &Staged<CohortStage>) -> Result<Staged<MatchedCohort>, StudyError> {
        let (sets_csv, summary_json) = (self.path("matched_sets.csv"), self.path("match_summary.json"));
        self.stage(
            Stage::Match,
            &[&cohort.fingerprint],
            || {
                let pool = MatchPool::from_members(&cohort.value.cohort.members, self.dataset, self.config.matching);
                Ok(build_matched_cohort(&cohort.value.cases.cases, &pool, self.config.underfill, self.seed))
            },
            |v| {
                write_matched_sets(create(&sets_csv).map_err(|e| e.to_string())?, &v.sets).map_err(|e| e.to_string())?;
                write_json(&summary_json, &v.summary).map_err(|e| e.to_string())
            },
            || {
                Ok(MatchedCohort {
                    sets: read_matched_sets(open(&sets_csv)?).map_err(|e| e.to_string())?,
                    summary: read_json::<MatchSummary>(&summary_json)?,
                })
            },
        )
    }

    fn subjects_and_windows(
        &self,
        cohort: &CohortStage,
        matched: &MatchedCohort,
    ) -> Result<(Vec<crate::features::Subject>, Vec<crate::features::AssessmentWindows>), String> {
        let subs = subjects(&matched.sets);
        let windows = subject_windows(&subs, &cohort.cohort.members, self.config.window_years).map_err(|e| e.to_string())?;
        Ok((subs, windows))
    }

    pub fn extract_structured(&self, cohort: &Staged<CohortStage>, matched: &Staged<MatchedCohort>) -> Result<Staged<FlagTable>, StudyError> {
        let path = self.path("structured_flags.csv");
        self.stage(
            Stage::ExtractStructured,
            &[&matched.fingerprint],
            || {
                let (subs, windows) = self.subjects_and_windows(&cohort.value, &matched.value)?;
                Ok(extract_structured(&subs, &windows, self.dataset, &self.resources.maps))
            },
            |v| write_flags(create(&path).map_err(|e| e.to_string())?, v).map_err(|e| e.to_string()),
            || read_flags(open(&path)?).map_err(|e| e.to_string()),
        )
    }

    pub fn extract_nlp(&self, cohort: &Staged<CohortStage>, matched: &Staged<MatchedCohort>) -> Result<Staged<NlpExtraction>, StudyError> {
        let (mentions, flags, summary) = (self.path("mentions.jsonl"), self.path("nlp_flags.csv"), self.path("nlp_summary.json"));
        self.stage(
            Stage::ExtractNlp,
            &[&matched.fingerprint],
            || {
                let (subs, windows) = self.subjects_and_windows(&cohort.value, &matched.value)?;
                let x = extract_nlp(&subs, &windows, self.dataset, self.resources.tagger.as_ref(), &self.resources.lexicon);
                log::info!("nlp: tagged {} notes, {} mentions, {} failed paragraphs", x.notes_tagged, x.mentions.len(), x.failed_paragraphs);
                Ok(x)
            },
            |v| {
                let mut w = create(&mentions).map_err(|e| e.to_string())?;
                write_mentions(&mut w, &v.mentions).map_err(|e| e.to_string())?;
                w.flush().map_err(|e| e.to_string())?;
                write_flags(create(&flags).map_err(|e| e.to_string())?, &v.flags).map_err(|e| e.to_string())?;
                write_json(
                    &summary,
                    &NlpCounts {
                        notes_tagged: v.notes_tagged,
                        mentions: v.mentions.len(),
                        failed_paragraphs: v.failed_paragraphs,
                    },
                )
                .map_err(|e| e.to_string())
            },
            || {
                let counts: NlpCounts = read_json(&summary)?;
                Ok(NlpExtraction {
                    mentions: read_mentions(open(&mentions)?).map_err(|e| e.to_string())?,
                    flags: read_flags(open(&flags)?).map_err(|e| e.to_string())?,
                    notes_tagged: counts.notes_tagged,
                    failed_paragraphs: counts.failed_paragraphs,
                })
            },
        )
    }

    pub fn assemble(
        &self,
        matched: &Staged<MatchedCohort>,
        structured: &Staged<FlagTable>,
        nlp: &Staged<NlpExtraction>,
    ) -> Result<Staged<FeatureTable>, StudyError> {
        let (features, manifest, prev) = (self.path("features.csv"), self.path("features.manifest.json"), self.path("prevalence.csv"));
        self.stage(
            Stage::Assemble,
            &[&matched.fingerprint, &structured.fingerprint, &nlp.fingerprint],
            || assemble(&matched.value.sets, self.dataset, &structured.value, &nlp.value.flags).map_err(|e| e.to_string()),
            |v| {
                write_features(create(&features).map_err(|e| e.to_string())?, v).map_err(|e| e.to_string())?;
                write_json(&manifest, &v.manifest()).map_err(|e| e.to_string())?;
                std::fs::write(&prev, prevalence_csv(&prevalence(v))).map_err(|e| e.to_string())
            },
            || read_features(open(&features)?).map_err(|e| e.to_string()),
        )
    }

    pub fn specs(&self) -> Vec<ModelSpec> {
        let mut specs = enumerate_models(ModelMode::Single);
        if self.config.pair_models {
            specs.extend(enumerate_models(ModelMode::Pair));
        }
        specs
    }

    pub fn fit(&self, features: &Staged<FeatureTable>) -> Result<Staged<Vec<ModelRow>>, StudyError> {
        let dir = self.path("models");
        let specs = self.specs();
        self.stage(
            Stage::Fit,
            &[&features.fingerprint],
            || Ok(specs.par_iter().map(|s| fit_model(&features.value, s, &self.config.fit)).collect()),
            |rows: &Vec<ModelRow>| {
                std::fs::create_dir_all(&dir).map_err(|e| e.to_string())?;
                for r in rows {
                    write_json(&dir.join(format!("{}.json", r.model_id)), r).map_err(|e| e.to_string())?;
                }
                std::fs::write(self.path("model_results.csv"), models_csv(rows)).map_err(|e| e.to_string())
            },
            || specs.iter().map(|s| read_json(&dir.join(format!("{}.json", s.model_id)))).collect(),
        )
    }

    pub fn report(
        &self,
        cohort: &Staged<CohortStage>,
        matched: &Staged<MatchedCohort>,
        nlp: &Staged<NlpExtraction>,
        features: &Staged<FeatureTable>,
        fits: &Staged<Vec<ModelRow>>,
    ) -> Result<StudyReport, StudyError> {
        let c = &cohort.value;
        let mut exclusions: BTreeMap<String, usize> = BTreeMap::new();
        for e in &c.cohort.exclusions {
            *exclusions.entry(e.reason.to_string()).or_default() += 1;
        }
        let person_years = c.cohort.person_years();
        let inc = incidence(c.cases.cases.len() as u64, person_years, self.config.ci_method).map_err(failed(Stage::Report))?;
        let (single, pair): (Vec<ModelRow>, Vec<ModelRow>) = fits.value.iter().cloned().partition(|r| r.mode == ModelMode::Single);
        let report = StudyReport {
            seed: self.seed,
            dataset_fingerprint: self.dataset_fp.clone(),
            config: self.config.clone(),
            cohort: CohortCounts {
                patients: self.dataset.patients().len(),
                members: c.cohort.members.len(),
                excluded_patients: c.cohort.excluded_patients(),
                exclusions,
                person_years,
                cases: c.cases.cases.len(),
                case_diagnostics: c.cases.diagnostics.len(),
            },
            incidence: inc,
            matching: matched.value.summary.clone(),
            nlp: NlpCounts {
                notes_tagged: nlp.value.notes_tagged,
                mentions: nlp.value.mentions.len(),
                failed_paragraphs: nlp.value.failed_paragraphs,
            },
            table1: cohort_summary(&matched.value.sets, self.dataset),
            prevalence: prevalence(&features.value),
            single,
            pair: self.config.pair_models.then_some(pair),
        };
        write_report_files(&report, &self.out).map_err(failed(Stage::Report))?;
        Ok(report)
    }

    pub fn run_all(&self) -> Result<StudyReport, StudyError> {
        std::fs::create_dir_all(&self.out).map_err(failed(Stage::Cohort))?;
        let cohort = self.cohort()?;
        let matched = self.matching(&cohort)?;
        let structured = self.extract_structured(&cohort, &matched)?;
        let nlp = self.extract_nlp(&cohort, &matched)?;
        let features = self.assemble(&matched, &structured, &nlp)?;
        let fits = self.fit(&features)?;
        self.report(&cohort, &matched, &nlp, &features, &fits)
    }
}

/// Runs every stage on a pool of `jobs` workers (0 lets rayon choose).
pub fn run_study(dataset: &Dataset, config: &StudyConfig, seed: u64, out: &Path, jobs: usize) -> Result<StudyReport, StudyError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(failed(Stage::Cohort))?;
    pool.install(|| StudyRun::new(dataset, config.clone(), seed, out)?.run_all())
}
