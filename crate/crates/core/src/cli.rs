//! Command-line driver: config loading, the experiment commands and their
//! artifacts.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::composition::parse;
use crate::dataset::{encode, load_csv, synth_biased, write_cache, Dataset, DatasetRecipe};
use crate::guidance::{emit, generate_diagram, leave_one_out, loo_table, Format, GuidanceParams};
use crate::harness::{
    auto_search, dataset_refs, run_grid, run_pipelines, select_step1_with, summarize, CvConfig, GridSpec,
    SearchBudget, SearchSpace, SelectionMetric, Step1Choice, Step1Grid, Store,
};
use crate::metrics::{mean, std_dev};
use crate::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NO_RESULTS: i32 = 3;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("no usable results: {0}")]
    NoResults(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::NoResults(_) => EXIT_NO_RESULTS,
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Config(e.to_string())
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "fairens", version, about = "Fairness-aware ensemble experiments")]
pub struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Master seed; drawn at random and logged when absent everywhere.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Format of the report printed to stdout.
    #[arg(long, global = true, value_parser = ["json", "dot", "text"])]
    pub format: Option<String>,
    /// Only log warnings and errors.
    #[arg(long, short, global = true)]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Encode datasets, cache them and print their summary rows.
    Encode,
    /// Cross-validate the given pipelines on every dataset.
    Cv {
        /// Pipeline text; repeatable. Defaults to `cv.pipelines`.
        #[arg(long = "pipeline")]
        pipelines: Vec<String>,
    },
    /// Mitigator selection followed by the ensemble grid.
    Grid,
    /// Automated search with the blended objective.
    Auto,
    /// Guidance diagram from a result store.
    Guide,
    /// Leave-one-out robustness of the guidance diagram.
    Loo,
    /// Run the experiment named in the config.
    Run,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    Encode,
    Cv,
    Grid,
    Auto,
    Guide,
    Loo,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub name: String,
    pub n: usize,
    pub rate_priv: f64,
    pub rate_unpriv: f64,
    #[serde(default = "default_features")]
    pub n_features: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_features() -> usize {
    6
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged, deny_unknown_fields)]
pub enum DatasetSource {
    Csv {
        csv: PathBuf,
        recipe: PathBuf,
        #[serde(default = "yes")]
        header: bool,
    },
    Synthetic {
        synthetic: SynthSpec,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CvSection {
    pub n_trials: usize,
    pub k: usize,
    pub record_timing: bool,
    pub pipelines: Vec<String>,
}

impl Default for CvSection {
    fn default() -> Self {
        let d = CvConfig::default();
        CvSection {
            n_trials: d.n_trials,
            k: d.k,
            record_timing: d.record_timing,
            pipelines: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchSection {
    pub max_trials: usize,
    pub trial_timeout_secs: f64,
    pub total_timeout_secs: f64,
    pub adaptive: bool,
    pub n_initial: usize,
    pub folds: usize,
    pub space: Option<SearchSpace>,
}

impl Default for SearchSection {
    fn default() -> Self {
        let b = SearchBudget::default();
        SearchSection {
            max_trials: b.max_trials,
            trial_timeout_secs: b.trial_timeout_secs,
            total_timeout_secs: b.total_timeout_secs,
            adaptive: b.adaptive,
            n_initial: b.n_initial,
            folds: b.folds,
            space: None,
        }
    }
}

/// Run configuration. Relative paths are taken from the config file's
/// directory.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub datasets: Vec<DatasetSource>,
    pub experiment: Option<Experiment>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub workers: Option<usize>,
    /// Result store read by `guide` and `loo`; defaults to the grid store.
    pub store: Option<PathBuf>,
    pub cv: CvSection,
    pub step1: Step1Grid,
    pub grid: GridSpec,
    pub search: SearchSection,
    pub guidance: GuidanceParams,
}

/// Effective settings after merging flags over the config file.
#[derive(Debug, Clone)]
pub struct Settings {
    pub config: RunConfig,
    pub base: PathBuf,
    pub seed: u64,
    pub out: PathBuf,
    pub workers: usize,
    pub format: Format,
}

impl Settings {
    pub fn resolve(cli: &Cli) -> CliResult<Self> {
        let (config, base) = match &cli.config {
            Some(p) => {
                let text = fs::read_to_string(p)
                    .map_err(|e| CliError::Config(format!("cannot read {}: {e}", p.display())))?;
                let c: RunConfig =
                    toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
                (c, p.parent().map(Path::to_path_buf).unwrap_or_default())
            }
            None => (RunConfig::default(), PathBuf::new()),
        };
        let seed = match cli.seed.or(config.seed) {
            Some(s) => s,
            None => {
                let s = rand::random::<u64>();
                log::info!("no seed given, using {s}");
                s
            }
        };
        let out = cli
            .out
            .clone()
            .or_else(|| config.out.as_ref().map(|o| base.join(o)))
            .unwrap_or_else(|| PathBuf::from("fairens-out"));
        let workers = cli.workers.or(config.workers).unwrap_or(1);
        if workers == 0 {
            return Err(CliError::Config("workers must be positive".into()));
        }
        let format = cli.format.as_deref().unwrap_or("text").parse::<Format>()?;
        Ok(Settings {
            config,
            base,
            seed,
            out,
            workers,
            format,
        })
    }

    fn cv(&self) -> CvConfig {
        CvConfig {
            n_trials: self.config.cv.n_trials,
            k: self.config.cv.k,
            master_seed: self.seed,
            workers: self.workers,
            record_timing: self.config.cv.record_timing,
        }
    }

    fn budget(&self) -> SearchBudget {
        let s = &self.config.search;
        SearchBudget {
            max_trials: s.max_trials,
            trial_timeout_secs: s.trial_timeout_secs,
            total_timeout_secs: s.total_timeout_secs,
            master_seed: self.seed,
            adaptive: s.adaptive,
            n_initial: s.n_initial,
            folds: s.folds,
        }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    pub fn load_datasets(&self) -> CliResult<Vec<Dataset>> {
        if self.config.datasets.is_empty() {
            return Err(CliError::Config("no datasets configured".into()));
        }
        let mut out: Vec<Dataset> = Vec::new();
        for src in &self.config.datasets {
            let ds = match src {
                DatasetSource::Csv { csv, recipe, header } => {
                    let recipe = DatasetRecipe::load(self.base.join(recipe))?;
                    let raw = load_csv(self.base.join(csv), *header)?;
                    encode(&raw, &recipe)?
                }
                DatasetSource::Synthetic { synthetic: s } => {
                    let mut ds = synth_biased(s.n, s.rate_priv, s.rate_unpriv, s.n_features, s.seed)?;
                    ds.name = s.name.clone();
                    ds
                }
            };
            if out.iter().any(|d| d.name == ds.name) {
                return Err(CliError::Config(format!("duplicate dataset name `{}`", ds.name)));
            }
            out.push(ds);
        }
        Ok(out)
    }

    fn ensure_out(&self) -> CliResult<()> {
        fs::create_dir_all(&self.out)
            .map_err(|e| CliError::Config(format!("cannot create {}: {e}", self.out.display())))
    }

    fn write(&self, name: &str, text: &str) -> CliResult<()> {
        let p = self.path(name);
        fs::write(&p, text).map_err(|e| CliError::Config(format!("cannot write {}: {e}", p.display())))
    }
}

fn to_json<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("report serializes");
    s.push('\n');
    s
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncodeSummary {
    pub dataset: String,
    pub n_rows: usize,
    pub n_cols: usize,
    pub baseline_di: Option<f64>,
    pub dropped_rows: usize,
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "undefined".to_string(), |v| format!("{v:.3}"))
}

pub fn cmd_encode(s: &Settings) -> CliResult<String> {
    let datasets = s.load_datasets()?;
    s.ensure_out()?;
    let mut rows = Vec::new();
    for ds in &datasets {
        write_cache(ds, s.path("cache"))?;
        rows.push(EncodeSummary {
            dataset: ds.name.clone(),
            n_rows: ds.n_rows(),
            n_cols: ds.n_cols(),
            baseline_di: ds.baseline_di().value(),
            dropped_rows: ds.dropped_rows,
        });
    }
    s.write("encode.json", &to_json(&rows))?;
    if s.format == Format::Json {
        return Ok(to_json(&rows));
    }
    let mut t = format!("{:<20} {:>8} {:>6} {:>8}\n", "dataset", "rows", "cols", "DI");
    for r in &rows {
        let _ = writeln!(t, "{:<20} {:>8} {:>6} {:>8}", r.dataset, r.n_rows, r.n_cols, fmt_opt(r.baseline_di));
    }
    Ok(t)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub dataset: String,
    pub pipeline: String,
    pub f1_mean: f64,
    pub f1_std: f64,
    pub di_mean: Option<f64>,
    pub di_std: Option<f64>,
}

fn pipeline_table(rows: &[PipelineReport]) -> String {
    let mut t = format!("{:<16} {:>14} {:>14}  pipeline\n", "dataset", "f1", "di");
    for r in rows {
        let di = match (r.di_mean, r.di_std) {
            (Some(m), Some(sd)) => format!("{m:.3} ({sd:.3})"),
            _ => "undefined".into(),
        };
        let _ = writeln!(
            t,
            "{:<16} {:>14} {:>14}  {}",
            r.dataset,
            format!("{:.3} ({:.3})", r.f1_mean, r.f1_std),
            di,
            r.pipeline
        );
    }
    t
}

pub fn cmd_cv(s: &Settings, pipelines: &[String]) -> CliResult<String> {
    let pipelines = if pipelines.is_empty() { &s.config.cv.pipelines } else { pipelines };
    if pipelines.is_empty() {
        return Err(CliError::Config("no pipelines given".into()));
    }
    let datasets = s.load_datasets()?;
    s.ensure_out()?;
    let mut store = Store::open(s.path("cv.jsonl"))?;
    let cfg = s.cv();
    for ds in &datasets {
        run_pipelines(ds, pipelines, &cfg, &mut store)?;
    }
    let wanted: BTreeSet<String> = pipelines
        .iter()
        .map(|p| parse(p).map_or_else(|_| p.clone(), |e| e.to_string()))
        .collect();
    let names: Vec<&str> = datasets.iter().map(|d| d.name.as_str()).collect();
    let recs: Vec<_> = store
        .records()
        .iter()
        .filter(|r| r.master_seed == s.seed && wanted.contains(&r.pipeline) && names.contains(&r.dataset.as_str()))
        .cloned()
        .collect();
    if recs.is_empty() {
        return Err(CliError::NoResults("every pipeline failed".into()));
    }
    let rows: Vec<PipelineReport> = summarize(&recs)
        .into_values()
        .map(|p| PipelineReport {
            dataset: p.dataset,
            pipeline: p.pipeline,
            f1_mean: p.f1_mean,
            f1_std: p.f1_std,
            di_mean: p.di_mean,
            di_std: p.di_std,
        })
        .collect();
    s.write("cv_summary.json", &to_json(&rows))?;
    Ok(match s.format {
        Format::Json => to_json(&rows),
        _ => pipeline_table(&rows),
    })
}

/// Per-filter survivor counts for each dataset and mitigator kind.
pub fn audit_text(choices: &[Step1Choice]) -> String {
    let mut t = String::new();
    for c in choices {
        let _ = writeln!(t, "{} (selection by {})", c.dataset, c.metric);
        for k in &c.choices {
            let relaxed = if k.relaxed { ", relaxed" } else { "" };
            let _ = writeln!(t, "  {}: {}{relaxed}", k.kind, k.config);
            for a in &k.audit {
                let mut line = format!("    {}: {} survivor(s)", a.filter, a.survivors.len());
                if a.skipped {
                    line.push_str(", skipped");
                }
                if let Some(th) = a.threshold {
                    let _ = write!(line, ", bar {th:.4}");
                }
                let _ = writeln!(t, "{line}");
            }
        }
    }
    t
}

pub fn cmd_grid(s: &Settings) -> CliResult<String> {
    let datasets = s.load_datasets()?;
    s.ensure_out()?;
    let cfg = s.cv();

    let mut step1_store = Store::open(s.path("step1.jsonl"))?;
    let candidates = s.config.step1.pipelines();
    for ds in &datasets {
        run_pipelines(ds, &candidates, &cfg, &mut step1_store)?;
    }
    let names: Vec<&str> = datasets.iter().map(|d| d.name.as_str()).collect();
    let step1_recs: Vec<_> = step1_store
        .records()
        .iter()
        .filter(|r| r.master_seed == s.seed && names.contains(&r.dataset.as_str()))
        .cloned()
        .collect();
    let choices = select_step1_with(&step1_recs, &SelectionMetric::for_dataset);
    s.write("step1_choices.json", &to_json(&choices))?;
    let audit = audit_text(&choices);
    s.write("audit.txt", &audit)?;

    let mut store = Store::open(s.path("results.jsonl"))?;
    let summary = run_grid(&datasets, &s.config.grid, &choices, &cfg, &mut store)?;
    if summary.failed > 0 {
        log::warn!("{} pipeline runs failed; see failure lines in the store", summary.failed);
    }
    let usable = store
        .records()
        .iter()
        .any(|r| r.master_seed == s.seed && names.contains(&r.dataset.as_str()));
    if !usable {
        return Err(CliError::NoResults("no grid pipeline produced records".into()));
    }
    Ok(match s.format {
        Format::Json => to_json(&summary),
        _ => format!(
            "{audit}grid: {} run, {} resumed, {} failed, {} records written\n",
            summary.ran, summary.resumed, summary.failed, summary.records_written
        ),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AutoReport {
    pub dataset: String,
    pub pipeline: String,
    pub score: f64,
    pub f1_mean: f64,
    pub f1_std: f64,
    pub di_mean: Option<f64>,
    pub di_std: Option<f64>,
}

pub fn cmd_auto(s: &Settings) -> CliResult<String> {
    let datasets = s.load_datasets()?;
    s.ensure_out()?;
    let space = s.config.search.space.clone().unwrap_or_default();
    let budget = s.budget();
    budget.check()?;
    let mut reports = Vec::new();
    let mut searches = Vec::new();
    for ds in &datasets {
        let refs = dataset_refs(ds, s.seed)?;
        match auto_search(ds, &space, &budget, &refs) {
            Ok(res) => {
                let f1: Vec<f64> = res.best_records.iter().map(|r| r.metrics.f1).collect();
                let di: Vec<f64> = res.best_records.iter().filter_map(|r| r.metrics.di).collect();
                reports.push(AutoReport {
                    dataset: ds.name.clone(),
                    pipeline: res.best_pipeline.clone(),
                    score: res.best_score,
                    f1_mean: mean(&f1),
                    f1_std: std_dev(&f1),
                    di_mean: (!di.is_empty()).then(|| mean(&di)),
                    di_std: (!di.is_empty()).then(|| std_dev(&di)),
                });
                searches.push(res);
            }
            Err(Error::Search(msg)) => log::warn!("{msg}"),
            Err(e) => return Err(e.into()),
        }
    }
    if reports.is_empty() {
        return Err(CliError::NoResults("no search trial completed".into()));
    }
    s.write("auto.json", &to_json(&serde_json::json!({ "reports": reports, "searches": searches })))?;
    if s.format == Format::Json {
        return Ok(to_json(&reports));
    }
    let rows: Vec<PipelineReport> = reports
        .iter()
        .map(|r| PipelineReport {
            dataset: r.dataset.clone(),
            pipeline: format!("{} [score {:.3}]", r.pipeline, r.score),
            f1_mean: r.f1_mean,
            f1_std: r.f1_std,
            di_mean: r.di_mean,
            di_std: r.di_std,
        })
        .collect();
    Ok(pipeline_table(&rows))
}

fn read_store(s: &Settings) -> CliResult<Store> {
    let path = s
        .config
        .store
        .as_ref()
        .map(|p| s.base.join(p))
        .unwrap_or_else(|| s.path("results.jsonl"));
    if !path.exists() {
        return Err(CliError::Config(format!("store {} does not exist", path.display())));
    }
    let store = Store::read(&path)?;
    if store.records().is_empty() {
        return Err(CliError::NoResults(format!("store {} has no records", path.display())));
    }
    Ok(store)
}

pub fn cmd_guide(s: &Settings) -> CliResult<String> {
    let store = read_store(s)?;
    s.ensure_out()?;
    let d = generate_diagram(&store, &s.config.guidance);
    s.write("diagram.json", &emit(&d, Format::Json))?;
    s.write("diagram.dot", &emit(&d, Format::Dot))?;
    Ok(emit(&d, s.format))
}

pub fn cmd_loo(s: &Settings) -> CliResult<String> {
    let store = read_store(s)?;
    s.ensure_out()?;
    let r = leave_one_out(&store, &s.config.guidance);
    let table = loo_table(&r);
    s.write("loo.json", &to_json(&r))?;
    s.write("loo.txt", &table)?;
    Ok(match s.format {
        Format::Json => to_json(&r),
        _ => table,
    })
}

/// Runs one parsed invocation and returns the stdout report.
pub fn execute(cli: &Cli) -> CliResult<String> {
    let s = Settings::resolve(cli)?;
    let command = match &cli.command {
        Command::Run => match s.config.experiment {
            Some(Experiment::Encode) => Command::Encode,
            Some(Experiment::Cv) => Command::Cv { pipelines: Vec::new() },
            Some(Experiment::Grid) => Command::Grid,
            Some(Experiment::Auto) => Command::Auto,
            Some(Experiment::Guide) => Command::Guide,
            Some(Experiment::Loo) => Command::Loo,
            None => return Err(CliError::Config("`run` needs `experiment` in the config".into())),
        },
        c => c.clone(),
    };
    match command {
        Command::Encode => cmd_encode(&s),
        Command::Cv { pipelines } => cmd_cv(&s, &pipelines),
        Command::Grid => cmd_grid(&s),
        Command::Auto => cmd_auto(&s),
        Command::Guide => cmd_guide(&s),
        Command::Loo => cmd_loo(&s),
        Command::Run => unreachable!(),
    }
}

/// Entry point for the binary; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    let level = if cli.quiet {
        log::LevelFilter::Warn
    } else {
        log::LevelFilter::Info
    };
    let _ = env_logger::Builder::new().filter_level(level).try_init();
    match execute(&cli) {
        Ok(report) => {
            print!("{report}");
            EXIT_OK
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
