use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use sdoh_ncc::ehr::synth::{generate_synthetic, SynthSpec};
use sdoh_ncc::ehr::{ingest_dataset, write_dataset, Dataset, DatasetPaths, IngestConfig};
use sdoh_ncc::matching::UnderfillPolicy;
use sdoh_ncc::study::{Stage, StudyConfig, StudyRun};
use std::path::{Path, PathBuf};

#[derive(Debug, Parser)]
#[command(name = "sdoh-ncc", version, about = "Nested case-control study of SDOH and suicide mortality")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Global {
    /// Study config (JSON). Defaults apply to any omitted field.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Directory for stage outputs and the report.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Worker threads; 0 uses every core.
    #[arg(long, global = true, default_value_t = 0)]
    jobs: usize,
    /// Directory holding patients.csv, encounters.csv, diagnoses.csv,
    /// notes.jsonl and deaths.csv.
    #[arg(long, global = true, default_value = "data")]
    data: PathBuf,
    /// Log verbosity: -v for info, -vv for debug.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
}

#[derive(Debug, Args, Default)]
struct MatchArgs {
    /// Controls per case.
    #[arg(long)]
    ratio: Option<usize>,
    /// Birth-year tolerance in years.
    #[arg(long = "birth-tol")]
    birth_tol: Option<i32>,
    #[arg(long, value_parser = ["keep", "drop"])]
    underfill: Option<String>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic dataset into the data directory.
    Simulate {
        /// Generator parameters (JSON); defaults apply to omitted fields.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        patients: Option<usize>,
    },
    /// Validate the input tables and print their row counts.
    Ingest,
    /// Build the base cohort and identify cases.
    Cohort,
    /// Risk-set matching of controls to cases.
    Match(MatchArgs),
    /// Structured SDOH, mental health and Charlson flags per window.
    ExtractStructured(MatchArgs),
    /// Tag notes and derive NLP factor flags per window.
    ExtractNlp(MatchArgs),
    /// Join flags and demographics into the feature table.
    Assemble(MatchArgs),
    /// Fit the model battery.
    Fit(MatchArgs),
    /// Write the report tables.
    Report(MatchArgs),
    /// Every stage from cohort to report.
    RunAll(MatchArgs),
}

fn load_config(global: &Global, m: &MatchArgs) -> Result<StudyConfig> {
    let mut config = match &global.config {
        Some(p) => StudyConfig::from_file(p)?,
        None => StudyConfig::default(),
    };
    if let Some(r) = m.ratio {
        config.matching.ratio = r;
    }
    if let Some(t) = m.birth_tol {
        config.matching.birth_year_tolerance = t;
    }
    if let Some(u) = &m.underfill {
        config.underfill = u.parse::<UnderfillPolicy>()?;
    }
    config.validate()?;
    Ok(config)
}

fn load_dataset(dir: &Path, config: &StudyConfig) -> Result<Dataset> {
    let ingest = IngestConfig {
        study_end: Some(config.period.end),
    };
    let (dataset, summary) =
        ingest_dataset(&DatasetPaths::in_dir(dir), &ingest).with_context(|| format!("reading dataset from {}", dir.display()))?;
    log::info!("ingested {summary:?}");
    Ok(dataset)
}

fn simulate(global: &Global, spec: Option<&Path>, patients: Option<usize>) -> Result<()> {
    let mut s = match spec {
        Some(p) => SynthSpec::from_json(&std::fs::read_to_string(p).with_context(|| p.display().to_string())?)?,
        None => SynthSpec::default(),
    };
    if let Some(n) = patients {
        s.patients = n;
    }
    let out = generate_synthetic(&s, global.seed)?;
    std::fs::create_dir_all(&global.data)?;
    write_dataset(&out.dataset, &DatasetPaths::in_dir(&global.data))?;
    let planted = global.data.join("planted_effects.json");
    std::fs::write(&planted, serde_json::to_string_pretty(&out.planted)? + "\n")?;
    println!(
        "wrote {} patients, {} notes to {} ({} suicides); planted effects in {}",
        out.dataset.patients().len(),
        out.dataset.notes().len(),
        global.data.display(),
        out.planted.suicides,
        planted.display()
    );
    Ok(())
}

fn run_through(run: &StudyRun, last: Stage) -> Result<()> {
    let cohort = run.cohort()?;
    println!("cohort: {} members, {} cases", cohort.value.cohort.members.len(), cohort.value.cases.cases.len());
    if last == Stage::Cohort {
        return Ok(());
    }
    let matched = run.matching(&cohort)?;
    println!("match: {} sets, {} control slots", matched.value.sets.len(), matched.value.summary.control_slots);
    if last == Stage::Match {
        return Ok(());
    }
    let structured = run.extract_structured(&cohort, &matched)?;
    if last == Stage::ExtractStructured {
        println!("extract-structured: {} flag rows", structured.value.rows.len());
        return Ok(());
    }
    let nlp = run.extract_nlp(&cohort, &matched)?;
    if last == Stage::ExtractNlp {
        println!("extract-nlp: {} notes tagged, {} mentions", nlp.value.notes_tagged, nlp.value.mentions.len());
        return Ok(());
    }
    let features = run.assemble(&matched, &structured, &nlp)?;
    println!("assemble: {} rows x {} columns", features.value.rows.len(), features.value.columns.len());
    if last == Stage::Assemble {
        return Ok(());
    }
    let fits = run.fit(&features)?;
    let ok = fits.value.iter().filter(|r| r.status == "ok").count();
    println!("fit: {} models, {} ok", fits.value.len(), ok);
    if last == Stage::Fit {
        return Ok(());
    }
    run.report(&cohort, &matched, &nlp, &features, &fits)?;
    println!("report: {}", run.out.join("report.md").display());
    Ok(())
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let level = match cli.global.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let g = &cli.global;

    let (stage, m) = match &cli.command {
        Command::Simulate { spec, patients } => return simulate(g, spec.as_deref(), *patients),
        Command::Ingest => {
            let config = load_config(g, &MatchArgs::default())?;
            let ingest = IngestConfig {
                study_end: Some(config.period.end),
            };
            let (_, summary) = ingest_dataset(&DatasetPaths::in_dir(&g.data), &ingest)?;
            println!("{}", serde_json::to_string_pretty(&summary)?);
            return Ok(());
        }
        Command::Cohort => (Stage::Cohort, None),
        Command::Match(m) => (Stage::Match, Some(m)),
        Command::ExtractStructured(m) => (Stage::ExtractStructured, Some(m)),
        Command::ExtractNlp(m) => (Stage::ExtractNlp, Some(m)),
        Command::Assemble(m) => (Stage::Assemble, Some(m)),
        Command::Fit(m) => (Stage::Fit, Some(m)),
        Command::Report(m) | Command::RunAll(m) => (Stage::Report, Some(m)),
    };
    let defaults = MatchArgs::default();
    let config = load_config(g, m.unwrap_or(&defaults))?;
    let dataset = load_dataset(&g.data, &config)?;
    if dataset.patients().is_empty() {
        bail!("no patients in {}", g.data.display());
    }
    std::fs::create_dir_all(&g.out).with_context(|| g.out.display().to_string())?;
    let pool = rayon_pool(g.jobs)?;
    pool.install(|| {
        let run = StudyRun::new(&dataset, config, g.seed, &g.out)?;
        run_through(&run, stage)
    })
}

fn rayon_pool(jobs: usize) -> Result<rayon::ThreadPool> {
    Ok(rayon::ThreadPoolBuilder::new().num_threads(jobs).build()?)
}
