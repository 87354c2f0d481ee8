//! Cross-dataset standardization, quadrant assignment and the guidance
//! diagram with its leave-one-out check.

mod diagram;
mod emit;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::harness::{Store, TrialRecord};
use crate::metrics::{fold_ratio, mean, std_dev};
use crate::Error;

pub use diagram::{
    generate_diagram, leave_one_out, CellEntry, GuidanceDiagram, GuidanceParams, LooCell, LooReport, LooRow,
    QuadrantCells, QuadrantStatus, TargetMetric,
};
pub use emit::{emit, loo_table, Format};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricId {
    Di,
    Spd,
    F1,
    Precision,
    Recall,
}

impl MetricId {
    fn raw(self, r: &TrialRecord) -> Option<f64> {
        match self {
            MetricId::Di => r.metrics.di,
            MetricId::Spd => r.metrics.spd,
            MetricId::F1 => Some(r.metrics.f1),
            MetricId::Precision => Some(r.metrics.precision),
            MetricId::Recall => Some(r.metrics.recall),
        }
    }

    /// Larger folded values are better.
    fn higher_is_better(self) -> bool {
        self != MetricId::Spd
    }
}

impl fmt::Display for MetricId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MetricId::Di => "di",
            MetricId::Spd => "spd",
            MetricId::F1 => "f1",
            MetricId::Precision => "precision",
            MetricId::Recall => "recall",
        })
    }
}

impl FromStr for MetricId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        Ok(match s {
            "di" => MetricId::Di,
            "spd" => MetricId::Spd,
            "f1" => MetricId::F1,
            "precision" => MetricId::Precision,
            "recall" => MetricId::Recall,
            _ => return Err(Error::InvalidArgument(format!("unknown metric `{s}`"))),
        })
    }
}

/// Maps raw values onto a common orientation: DI folded into [0, 1]
/// (undefined counts as 0), SPD as its absolute value (undefined counts as
/// 1), the rest unchanged.
pub fn fold_metric(values: &[Option<f64>], metric: MetricId) -> Vec<f64> {
    values
        .iter()
        .map(|v| match (metric, v) {
            (MetricId::Di, None) => 0.0,
            (MetricId::Di, Some(v)) => fold_ratio(*v),
            (MetricId::Spd, None) => 1.0,
            (MetricId::Spd, Some(v)) => v.abs(),
            (_, v) => v.unwrap_or(0.0),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StandardizedResult {
    pub dataset: String,
    pub pipeline: String,
    pub metric: MetricId,
    /// Mean and population std of the folded values.
    pub raw_mean: f64,
    pub raw_std: f64,
    /// 1 is the best mean within the dataset.
    pub scaled_mean: f64,
    /// 0 is the most stable pipeline within the dataset.
    pub scaled_std: f64,
}

fn min_max(values: &[f64], what: &str, dataset: &str) -> Vec<f64> {
    let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if hi - lo <= 0.0 {
        log::warn!("{dataset}: all {what} values equal, scaling to 0.5");
        return vec![0.5; values.len()];
    }
    values.iter().map(|v| (v - lo) / (hi - lo)).collect()
}

/// Per-dataset min-max scaling of each pipeline's mean and std of the
/// folded metric. Output is ordered by (dataset, pipeline).
pub fn standardize(records: &[TrialRecord], metric: MetricId) -> Vec<StandardizedResult> {
    let mut groups: BTreeMap<&str, BTreeMap<&str, Vec<Option<f64>>>> = BTreeMap::new();
    for r in records {
        groups
            .entry(&r.dataset)
            .or_default()
            .entry(&r.pipeline)
            .or_default()
            .push(metric.raw(r));
    }
    let mut out = Vec::new();
    for (ds, pipes) in groups {
        let stats: Vec<(&str, f64, f64)> = pipes
            .iter()
            .map(|(p, vals)| {
                let folded = fold_metric(vals, metric);
                (*p, mean(&folded), std_dev(&folded))
            })
            .collect();
        let means: Vec<f64> = stats
            .iter()
            .map(|s| if metric.higher_is_better() { s.1 } else { -s.1 })
            .collect();
        let stds: Vec<f64> = stats.iter().map(|s| s.2).collect();
        let sm = min_max(&means, &format!("{metric} mean"), ds);
        let ss = min_max(&stds, &format!("{metric} std"), ds);
        for (i, (p, m, s)) in stats.into_iter().enumerate() {
            out.push(StandardizedResult {
                dataset: ds.to_string(),
                pipeline: p.to_string(),
                metric,
                raw_mean: m,
                raw_std: s,
                scaled_mean: sm[i],
                scaled_std: ss[i],
            });
        }
    }
    out
}

/// Convenience over a store.
pub fn standardize_store(store: &Store, metric: MetricId) -> Vec<StandardizedResult> {
    standardize(store.records(), metric)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SizeClass {
    Small,
    Large,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FairnessClass {
    Fair,
    Unfair,
}

impl fmt::Display for SizeClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SizeClass::Small => "small",
            SizeClass::Large => "large",
        })
    }
}

impl fmt::Display for FairnessClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FairnessClass::Fair => "fair",
            FairnessClass::Unfair => "unfair",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quadrant {
    pub size: SizeClass,
    pub fairness: FairnessClass,
    pub rows_threshold: usize,
    pub di_threshold: f64,
}

impl Quadrant {
    pub fn key(&self) -> (SizeClass, FairnessClass) {
        (self.size, self.fairness)
    }
}

pub const ROWS_THRESHOLD: usize = 8000;
pub const DI_THRESHOLD: f64 = 0.45;

/// Large iff `n_rows >= rows_threshold`; fair iff the folded baseline DI is
/// at least `di_threshold`.
pub fn assign_quadrant(n_rows: usize, baseline_di: f64, rows_threshold: usize, di_threshold: f64) -> Quadrant {
    Quadrant {
        size: if n_rows >= rows_threshold {
            SizeClass::Large
        } else {
            SizeClass::Small
        },
        fairness: if fold_ratio(baseline_di) >= di_threshold {
            FairnessClass::Fair
        } else {
            FairnessClass::Unfair
        },
        rows_threshold,
        di_threshold,
    }
}
