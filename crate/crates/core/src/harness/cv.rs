use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::composition::{fit_pipeline, predict_pipeline, validate, Expr};
use crate::dataset::{stratified_kfold, Dataset};
use crate::harness::store::TrialRecord;
use crate::metrics::{classification_metrics, MetricReport};
use crate::seed;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CvConfig {
    pub n_trials: usize,
    pub k: usize,
    pub master_seed: u64,
    pub workers: usize,
    /// Store wall-clock fit times and memory deltas. Off by default so that
    /// reruns produce byte-identical records.
    pub record_timing: bool,
}

impl Default for CvConfig {
    fn default() -> Self {
        CvConfig {
            n_trials: 5,
            k: 3,
            master_seed: 0,
            workers: 1,
            record_timing: false,
        }
    }
}

impl CvConfig {
    pub fn with_seed(master_seed: u64) -> Self {
        CvConfig {
            master_seed,
            ..CvConfig::default()
        }
    }
}

pub(crate) fn pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::InvalidArgument(format!("cannot start worker pool: {e}")))
}

/// Resident set size in MB, where the platform exposes it cheaply.
fn resident_mb() -> Option<f64> {
    let status = std::fs::read_to_string("/proc/self/status").ok()?;
    let line = status.lines().find(|l| l.starts_with("VmRSS:"))?;
    let kb: f64 = line.split_whitespace().nth(1)?.parse().ok()?;
    Some(kb / 1024.0)
}

/// Fold assignment of one trial; shared by every pipeline on the dataset so
/// that pipelines are compared on identical splits.
pub fn trial_folds_seed(master: u64, dataset: &str, trial: usize) -> u64 {
    seed::derive(master, &[dataset, "folds", &trial.to_string()])
}

fn run_fold(
    expr: &Expr,
    pipeline: &str,
    ds: &Dataset,
    train: &[usize],
    test: &[usize],
    trial: usize,
    fold: usize,
    cfg: &CvConfig,
) -> Result<TrialRecord> {
    let s = seed::trial_seed(cfg.master_seed, &ds.name, pipeline, trial, fold);
    let mem_before = cfg.record_timing.then(resident_mb).flatten();
    let start = Instant::now();
    let model = fit_pipeline(expr, ds, train, s)?;
    let fit_seconds = start.elapsed().as_secs_f64();
    let memory_mb = mem_before
        .and_then(|b| resident_mb().map(|a| (a - b).max(0.0)));
    let pred = predict_pipeline(&model, ds, test)?;
    let y: Vec<u8> = test.iter().map(|&i| ds.y[i]).collect();
    let g: Vec<u8> = test.iter().map(|&i| ds.g[i]).collect();
    let counted: Option<Vec<bool>> = ds.counted.as_ref().map(|c| test.iter().map(|&i| c[i]).collect());
    let timing = if cfg.record_timing { fit_seconds } else { 0.0 };
    let trivial = classification_metrics(&y, &vec![1; y.len()]).precision;
    Ok(TrialRecord {
        dataset: ds.name.clone(),
        pipeline: pipeline.to_string(),
        trial,
        fold,
        master_seed: cfg.master_seed,
        seed: s,
        metrics: MetricReport::evaluate_counted(&y, &pred, &g, counted.as_deref(), timing),
        memory_mb,
        trivial_precision: trivial,
    })
}

/// Repeated stratified k-fold cross-validation of one pipeline.
///
/// Records come back ordered by (trial, fold) whatever the worker count.
/// Any failing fold fails the whole run.
pub fn run_cv(expr: &Expr, ds: &Dataset, cfg: &CvConfig) -> Result<Vec<TrialRecord>> {
    validate(expr)?;
    if cfg.n_trials == 0 {
        return Err(Error::InvalidArgument("n_trials must be positive".into()));
    }
    let pipeline = expr.to_string();
    let mut tasks = Vec::with_capacity(cfg.n_trials * cfg.k);
    for trial in 0..cfg.n_trials {
        let plan = stratified_kfold(ds, cfg.k, trial_folds_seed(cfg.master_seed, &ds.name, trial))?;
        for fold in 0..cfg.k {
            tasks.push((trial, fold, plan.train_indices(fold), plan.test_indices(fold)));
        }
    }
    let run = || {
        tasks
            .par_iter()
            .map(|(t, f, train, test)| run_fold(expr, &pipeline, ds, train, test, *t, *f, cfg))
            .collect::<Result<Vec<_>>>()
    };
    if cfg.workers <= 1 {
        tasks
            .iter()
            .map(|(t, f, train, test)| run_fold(expr, &pipeline, ds, train, test, *t, *f, cfg))
            .collect()
    } else {
        pool(cfg.workers)?.install(run)
    }
}
