use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::composition::parse;
use crate::harness::store::TrialRecord;
use crate::metrics::{mean, std_dev};
use crate::mitigation::MitigatorKind;
use crate::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMetric {
    Precision,
    Recall,
}

impl SelectionMetric {
    /// Precision for COMPAS-like datasets, recall elsewhere.
    pub fn for_dataset(name: &str) -> Self {
        if name.to_ascii_lowercase().contains("compas") {
            SelectionMetric::Precision
        } else {
            SelectionMetric::Recall
        }
    }
}

impl fmt::Display for SelectionMetric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SelectionMetric::Precision => "precision",
            SelectionMetric::Recall => "recall",
        })
    }
}

impl FromStr for SelectionMetric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s {
            "precision" => Ok(SelectionMetric::Precision),
            "recall" => Ok(SelectionMetric::Recall),
            _ => Err(Error::InvalidArgument(format!("unknown selection metric `{s}`"))),
        }
    }
}

/// Means and deviations of one pipeline's records on one dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineSummary {
    pub dataset: String,
    pub pipeline: String,
    pub n: usize,
    /// Mean over records with a defined DI; `None` when there are none.
    pub di_mean: Option<f64>,
    pub di_std: Option<f64>,
    pub precision_mean: f64,
    pub recall_mean: f64,
    pub f1_mean: f64,
    pub f1_std: f64,
    pub trivial_precision_mean: f64,
}

/// Groups records by (dataset, pipeline).
pub fn summarize(records: &[TrialRecord]) -> BTreeMap<(String, String), PipelineSummary> {
    let mut groups: BTreeMap<(String, String), Vec<&TrialRecord>> = BTreeMap::new();
    for r in records {
        groups
            .entry((r.dataset.clone(), r.pipeline.clone()))
            .or_default()
            .push(r);
    }
    groups
        .into_iter()
        .map(|(key, rs)| {
            let col = |f: fn(&TrialRecord) -> f64| rs.iter().map(|r| f(r)).collect::<Vec<f64>>();
            let dis: Vec<f64> = rs.iter().filter_map(|r| r.metrics.di).collect();
            let f1 = col(|r| r.metrics.f1);
            let s = PipelineSummary {
                dataset: key.0.clone(),
                pipeline: key.1.clone(),
                n: rs.len(),
                di_mean: (!dis.is_empty()).then(|| mean(&dis)),
                di_std: (!dis.is_empty()).then(|| std_dev(&dis)),
                precision_mean: mean(&col(|r| r.metrics.precision)),
                recall_mean: mean(&col(|r| r.metrics.recall)),
                f1_mean: mean(&f1),
                f1_std: std_dev(&f1),
                trivial_precision_mean: mean(&col(|r| r.trivial_precision)),
            };
            (key, s)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterAudit {
    /// `F1` .. `F4`.
    pub filter: String,
    /// Candidates left after this filter, sorted.
    pub survivors: Vec<String>,
    /// True when the filter would have removed everyone and was skipped.
    pub skipped: bool,
    /// F3 only: the F1-score bar, the larger of the mean and the median of
    /// the kind's mean F1 scores.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub threshold: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KindChoice {
    pub kind: MitigatorKind,
    /// Mitigator text, e.g. `DIR(0.4)`, for substitution into grid templates.
    pub config: String,
    /// The step-1 pipeline the choice was measured on.
    pub pipeline: String,
    pub relaxed: bool,
    pub audit: Vec<FilterAudit>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Step1Choice {
    pub dataset: String,
    pub metric: SelectionMetric,
    /// In pre, in, post order; a kind without candidates is absent.
    pub choices: Vec<KindChoice>,
}

impl Step1Choice {
    pub fn get(&self, kind: MitigatorKind) -> Option<&KindChoice> {
        self.choices.iter().find(|c| c.kind == kind)
    }
}

/// The single mitigator kind and text of a step-1 pipeline.
fn candidate_of(pipeline: &str) -> Option<(MitigatorKind, String)> {
    let e = parse(pipeline).ok()?;
    let kind = e.mitigator_kind()?;
    let texts: Vec<String> = e.mitigators().iter().map(|m| m.to_string()).collect();
    texts.iter().all(|t| *t == texts[0]).then(|| (kind, texts[0].clone()))
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

fn apply_filter<'a>(
    name: &str,
    current: Vec<&'a PipelineSummary>,
    keep: impl Fn(&PipelineSummary) -> bool,
    threshold: Option<f64>,
    audit: &mut Vec<FilterAudit>,
) -> Vec<&'a PipelineSummary> {
    let next: Vec<&'a PipelineSummary> = current.iter().copied().filter(|s| keep(s)).collect();
    let skipped = next.is_empty();
    let out = if skipped { current } else { next };
    audit.push(FilterAudit {
        filter: name.into(),
        survivors: out.iter().map(|s| s.pipeline.clone()).collect(),
        skipped,
        threshold,
    });
    out
}

fn choose(kind: MitigatorKind, cands: Vec<&PipelineSummary>, metric: SelectionMetric, config: &BTreeMap<String, String>) -> KindChoice {
    let mut audit = Vec::new();
    let f1_means: Vec<f64> = cands.iter().map(|s| s.f1_mean).collect();
    let bar = mean(&f1_means).max(median(&f1_means));
    let c = apply_filter(
        "F1",
        cands,
        |s| s.di_mean.is_some_and(|d| (0.8..=1.25).contains(&d)),
        None,
        &mut audit,
    );
    let c = apply_filter("F2", c, |s| s.precision_mean > s.trivial_precision_mean, None, &mut audit);
    let c = apply_filter("F3", c, |s| s.f1_mean > bar, Some(bar), &mut audit);
    let value = |s: &PipelineSummary| match metric {
        SelectionMetric::Precision => s.precision_mean,
        SelectionMetric::Recall => s.recall_mean,
    };
    // Candidates are in pipeline order, so strict comparison keeps the
    // lexicographically first on ties.
    let mut best = c[0];
    for s in &c[1..] {
        if value(s) > value(best) {
            best = s;
        }
    }
    audit.push(FilterAudit {
        filter: "F4".into(),
        survivors: vec![best.pipeline.clone()],
        skipped: false,
        threshold: None,
    });
    KindChoice {
        kind,
        config: config[&best.pipeline].clone(),
        pipeline: best.pipeline.clone(),
        relaxed: audit.iter().any(|a| a.skipped),
        audit,
    }
}

/// Picks the best pre-, in- and post-estimator mitigator per dataset.
///
/// Per kind the candidates pass through three filters: mean DI within
/// [0.8, 1.25], mean precision above that of always predicting favorable,
/// and mean F1 above both the mean and the median of the kind's mean F1
/// scores. The winner maximizes the selection metric. A filter that would
/// leave nobody is skipped and the choice marked relaxed. Records of
/// unmitigated or mixed pipelines are ignored.
pub fn select_step1(records: &[TrialRecord], metric: SelectionMetric) -> Vec<Step1Choice> {
    select_step1_with(records, &|_| metric)
}

/// As [`select_step1`], with the selection metric chosen per dataset.
pub fn select_step1_with(records: &[TrialRecord], metric: &dyn Fn(&str) -> SelectionMetric) -> Vec<Step1Choice> {
    let summaries = summarize(records);
    let mut config = BTreeMap::new();
    let mut by_dataset: BTreeMap<&str, BTreeMap<MitigatorKind, Vec<&PipelineSummary>>> = BTreeMap::new();
    for ((ds, p), s) in &summaries {
        by_dataset.entry(ds).or_default();
        let Some((kind, text)) = candidate_of(p) else {
            continue;
        };
        config.insert(p.clone(), text);
        by_dataset.get_mut(ds.as_str()).unwrap().entry(kind).or_default().push(s);
    }
    by_dataset
        .into_iter()
        .map(|(ds, kinds)| {
            let m = metric(ds);
            let mut choices = Vec::new();
            for kind in [MitigatorKind::Pre, MitigatorKind::In, MitigatorKind::Post] {
                match kinds.get(&kind) {
                    Some(c) if !c.is_empty() => choices.push(choose(kind, c.clone(), m, &config)),
                    _ => log::warn!("{ds}: no {kind}-estimator candidates in step-1 results"),
                }
            }
            Step1Choice {
                dataset: ds.to_string(),
                metric: m,
                choices,
            }
        })
        .collect()
}
