use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::guidance::{assign_quadrant, standardize, FairnessClass, MetricId, SizeClass, DI_THRESHOLD, ROWS_THRESHOLD};
use crate::harness::{Store, TrialRecord};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GuidanceParams {
    pub rows_threshold: usize,
    pub di_threshold: f64,
    /// Share of pipelines per dataset kept by each of the two rank filters.
    pub top_fraction: f64,
    pub top_k: usize,
}

impl Default for GuidanceParams {
    fn default() -> Self {
        GuidanceParams {
            rows_threshold: ROWS_THRESHOLD,
            di_threshold: DI_THRESHOLD,
            top_fraction: 1.0 / 3.0,
            top_k: 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetMetric {
    DiMean,
    DiStd,
    F1Mean,
}

impl TargetMetric {
    pub const ALL: [TargetMetric; 3] = [TargetMetric::DiMean, TargetMetric::DiStd, TargetMetric::F1Mean];

    pub fn key(self) -> &'static str {
        match self {
            TargetMetric::DiMean => "di_mean",
            TargetMetric::DiStd => "di_std",
            TargetMetric::F1Mean => "f1_mean",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            TargetMetric::DiMean => "DI outcome",
            TargetMetric::DiStd => "DI volatility",
            TargetMetric::F1Mean => "F1 outcome",
        }
    }

    fn descending(self) -> bool {
        self != TargetMetric::DiStd
    }
}

impl fmt::Display for TargetMetric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellEntry {
    pub pipeline: String,
    pub value: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuadrantStatus {
    Ok,
    NoData,
    NoSurvivors,
}

impl fmt::Display for QuadrantStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            QuadrantStatus::Ok => "ok",
            QuadrantStatus::NoData => "no data",
            QuadrantStatus::NoSurvivors => "no survivors",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadrantCells {
    pub size: SizeClass,
    pub fairness: FairnessClass,
    pub status: QuadrantStatus,
    pub datasets: Vec<String>,
    /// Keyed by target metric; at most `top_k` entries, best first.
    pub cells: BTreeMap<String, Vec<CellEntry>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GuidanceDiagram {
    pub params: GuidanceParams,
    /// Small-fair, small-unfair, large-fair, large-unfair.
    pub quadrants: Vec<QuadrantCells>,
}

impl GuidanceDiagram {
    pub fn quadrant(&self, size: SizeClass, fairness: FairnessClass) -> &QuadrantCells {
        self.quadrants
            .iter()
            .find(|q| q.size == size && q.fairness == fairness)
            .expect("diagram has all four quadrants")
    }
}

const QUADRANTS: [(SizeClass, FairnessClass); 4] = [
    (SizeClass::Small, FairnessClass::Fair),
    (SizeClass::Small, FairnessClass::Unfair),
    (SizeClass::Large, FairnessClass::Fair),
    (SizeClass::Large, FairnessClass::Unfair),
];

/// Standardized and raw values of one pipeline on one dataset.
#[derive(Debug, Clone, Copy)]
struct Row {
    scaled: [f64; 3],
    raw: [f64; 3],
}

type Tables = BTreeMap<String, BTreeMap<String, Row>>;

fn tables(records: &[TrialRecord]) -> Tables {
    let di = standardize(records, MetricId::Di);
    let f1 = standardize(records, MetricId::F1);
    let mut out: Tables = BTreeMap::new();
    // Both lists are ordered by (dataset, pipeline) over the same keys.
    for (d, f) in di.iter().zip(&f1) {
        out.entry(d.dataset.clone()).or_default().insert(
            d.pipeline.clone(),
            Row {
                scaled: [d.scaled_mean, d.scaled_std, f.scaled_mean],
                raw: [d.raw_mean, d.raw_std, f.raw_mean],
            },
        );
    }
    out
}

/// Pipelines in the top fraction by rank, ties at the cutoff included.
fn top_by(rows: &BTreeMap<String, Row>, idx: usize, fraction: f64) -> BTreeSet<&str> {
    let mut vals: Vec<f64> = rows.values().map(|r| r.scaled[idx]).collect();
    vals.sort_by(|a, b| b.total_cmp(a));
    let keep = ((vals.len() as f64 * fraction).ceil() as usize).clamp(1, vals.len());
    let cutoff = vals[keep - 1];
    rows.iter()
        .filter(|(_, r)| r.scaled[idx] >= cutoff)
        .map(|(p, _)| p.as_str())
        .collect()
}

fn survivors(rows: &BTreeMap<String, Row>, fraction: f64) -> BTreeSet<&str> {
    let di = top_by(rows, 0, fraction);
    let f1 = top_by(rows, 2, fraction);
    di.intersection(&f1).copied().collect()
}

fn quadrant_datasets(store: &Store, tables: &Tables, params: &GuidanceParams) -> BTreeMap<(SizeClass, FairnessClass), Vec<String>> {
    let mut out: BTreeMap<_, Vec<String>> = BTreeMap::new();
    for name in tables.keys() {
        let Some(info) = store.datasets().get(name) else {
            log::warn!("{name}: no dataset metadata in store, left out of the diagram");
            continue;
        };
        let q = assign_quadrant(
            info.n_rows,
            info.baseline_di.unwrap_or(0.0),
            params.rows_threshold,
            params.di_threshold,
        );
        out.entry(q.key()).or_default().push(name.clone());
    }
    out
}

fn build(store: &Store, params: &GuidanceParams) -> (GuidanceDiagram, Tables) {
    let tables = tables(store.records());
    let by_quadrant = quadrant_datasets(store, &tables, params);
    let mut quadrants = Vec::new();
    for (size, fairness) in QUADRANTS {
        let datasets = by_quadrant.get(&(size, fairness)).cloned().unwrap_or_default();
        let mut sums: BTreeMap<&str, ([f64; 3], usize)> = BTreeMap::new();
        for ds in &datasets {
            let rows = &tables[ds];
            for p in survivors(rows, params.top_fraction) {
                let e = sums.entry(p).or_insert(([0.0; 3], 0));
                for (acc, v) in e.0.iter_mut().zip(rows[p].scaled) {
                    *acc += v;
                }
                e.1 += 1;
            }
        }
        let status = if datasets.is_empty() {
            QuadrantStatus::NoData
        } else if sums.is_empty() {
            QuadrantStatus::NoSurvivors
        } else {
            QuadrantStatus::Ok
        };
        let mut cells = BTreeMap::new();
        for (i, t) in TargetMetric::ALL.into_iter().enumerate() {
            let mut entries: Vec<CellEntry> = sums
                .iter()
                .map(|(p, (s, n))| CellEntry {
                    pipeline: p.to_string(),
                    value: s[i] / *n as f64,
                })
                .collect();
            entries.sort_by(|a, b| {
                let ord = if t.descending() {
                    b.value.total_cmp(&a.value)
                } else {
                    a.value.total_cmp(&b.value)
                };
                ord.then_with(|| a.pipeline.cmp(&b.pipeline))
            });
            entries.truncate(params.top_k);
            cells.insert(t.key().to_string(), entries);
        }
        quadrants.push(QuadrantCells {
            size,
            fairness,
            status,
            datasets,
            cells,
        });
    }
    (
        GuidanceDiagram {
            params: *params,
            quadrants,
        },
        tables,
    )
}

/// Builds the diagram: per dataset keep pipelines ranked in the top fraction
/// of both standardized DI outcome and standardized F1 outcome, average the
/// standardized metrics per quadrant and pipeline, and list the best `top_k`
/// per quadrant and target metric. Ties are broken by pipeline text.
pub fn generate_diagram(store: &Store, params: &GuidanceParams) -> GuidanceDiagram {
    build(store, params).0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LooCell {
    /// `ok`, or why no comparison was made.
    pub status: String,
    /// Full-diagram top entries missing from the leave-one-out top entries.
    pub differences: Option<usize>,
    /// Raw quadrant average of the full diagram's first pick minus that of
    /// the leave-one-out first pick, both over the full store.
    pub metric_difference: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LooRow {
    pub dataset: String,
    pub size: SizeClass,
    pub fairness: FairnessClass,
    pub cells: BTreeMap<String, LooCell>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LooReport {
    pub params: GuidanceParams,
    pub rows: Vec<LooRow>,
}

fn raw_average(tables: &Tables, datasets: &[String], pipeline: &str, idx: usize) -> Option<f64> {
    let vals: Vec<f64> = datasets
        .iter()
        .filter_map(|d| tables.get(d)?.get(pipeline).map(|r| r.raw[idx]))
        .collect();
    (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
}

/// Regenerates the diagram without each dataset in turn and compares the
/// dataset's quadrant cells with the full diagram.
pub fn leave_one_out(store: &Store, params: &GuidanceParams) -> LooReport {
    let (full, tables) = build(store, params);
    let mut rows = Vec::new();
    for q in &full.quadrants {
        for ds in &q.datasets {
            let loo = generate_diagram(&store.subset(&|d| d != ds), params);
            let lq = loo.quadrant(q.size, q.fairness);
            let mut cells = BTreeMap::new();
            for (i, t) in TargetMetric::ALL.into_iter().enumerate() {
                let f = &q.cells[t.key()];
                let l = &lq.cells[t.key()];
                let cell = match lq.status {
                    QuadrantStatus::NoData => LooCell {
                        status: "quadrant emptied".into(),
                        differences: None,
                        metric_difference: None,
                    },
                    QuadrantStatus::NoSurvivors => LooCell {
                        status: "no survivors".into(),
                        differences: None,
                        metric_difference: None,
                    },
                    QuadrantStatus::Ok => {
                        let lset: BTreeSet<&str> = l.iter().map(|e| e.pipeline.as_str()).collect();
                        let differences = f.iter().filter(|e| !lset.contains(e.pipeline.as_str())).count();
                        let metric_difference = match (f.first(), l.first()) {
                            (Some(a), Some(b)) => raw_average(&tables, &q.datasets, &a.pipeline, i)
                                .zip(raw_average(&tables, &q.datasets, &b.pipeline, i))
                                .map(|(x, y)| x - y),
                            _ => None,
                        };
                        LooCell {
                            status: "ok".into(),
                            differences: Some(differences),
                            metric_difference,
                        }
                    }
                };
                cells.insert(t.key().to_string(), cell);
            }
            rows.push(LooRow {
                dataset: ds.clone(),
                size: q.size,
                fairness: q.fairness,
                cells,
            });
        }
    }
    rows.sort_by(|a, b| a.dataset.cmp(&b.dataset));
    LooReport { params: *params, rows }
}
