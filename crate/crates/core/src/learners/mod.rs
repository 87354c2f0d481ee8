//! Base estimators behind one train/predict contract.

pub mod cart;
pub mod gbt;
pub mod knn;
pub mod logistic;

use std::collections::BTreeMap;
use std::fmt;
use std::time::Instant;

use log::warn;
use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
pub use cart::{CartParams, Tree};
pub use gbt::{GbtModel, GbtParams};
pub use knn::{KnnModel, KnnParams};
pub use logistic::{LogisticModel, LogisticParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LearnerKind {
    DecisionTree,
    LogisticRegression,
    Knn,
    GradientBoostedTrees,
    DummyConstant,
}

impl LearnerKind {
    /// Name used in pipeline expressions.
    pub fn short_name(self) -> &'static str {
        match self {
            LearnerKind::DecisionTree => "tree",
            LearnerKind::LogisticRegression => "logreg",
            LearnerKind::Knn => "knn",
            LearnerKind::GradientBoostedTrees => "gbt",
            LearnerKind::DummyConstant => "dummy",
        }
    }

    pub fn from_short_name(name: &str) -> Option<Self> {
        Some(match name {
            "tree" => LearnerKind::DecisionTree,
            "logreg" => LearnerKind::LogisticRegression,
            "knn" => LearnerKind::Knn,
            "gbt" => LearnerKind::GradientBoostedTrees,
            "dummy" => LearnerKind::DummyConstant,
            _ => return None,
        })
    }

    pub fn capabilities(self) -> Capabilities {
        Capabilities {
            supports_proba: true,
            supports_weights: self != LearnerKind::DummyConstant,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Capabilities {
    pub supports_proba: bool,
    pub supports_weights: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LearnerSpec {
    DecisionTree(CartParams),
    LogisticRegression(LogisticParams),
    Knn(KnnParams),
    GradientBoostedTrees(GbtParams),
    DummyConstant { label: u8 },
}

impl Default for CartParams {
    fn default() -> Self {
        CartParams {
            max_depth: None,
            min_leaf: 1,
        }
    }
}

fn take_int(params: &mut BTreeMap<String, f64>, key: &str, lo: f64, hi: f64) -> Result<Option<usize>> {
    match params.remove(key) {
        None => Ok(None),
        Some(v) if v.fract() == 0.0 && v >= lo && v <= hi => Ok(Some(v as usize)),
        Some(v) => Err(Error::InvalidArgument(format!(
            "`{key}` must be an integer in [{lo}, {hi}], got {v}"
        ))),
    }
}

fn take_real(params: &mut BTreeMap<String, f64>, key: &str, lo: f64, hi: f64, open_lo: bool) -> Result<Option<f64>> {
    match params.remove(key) {
        None => Ok(None),
        Some(v) if v <= hi && (v > lo || (!open_lo && v == lo)) => Ok(Some(v)),
        Some(v) => Err(Error::InvalidArgument(format!("`{key}` = {v} out of range"))),
    }
}

impl LearnerSpec {
    pub fn default_for(kind: LearnerKind) -> Self {
        match kind {
            LearnerKind::DecisionTree => LearnerSpec::DecisionTree(CartParams::default()),
            LearnerKind::LogisticRegression => LearnerSpec::LogisticRegression(LogisticParams::default()),
            LearnerKind::Knn => LearnerSpec::Knn(KnnParams::default()),
            LearnerKind::GradientBoostedTrees => LearnerSpec::GradientBoostedTrees(GbtParams::default()),
            LearnerKind::DummyConstant => LearnerSpec::DummyConstant { label: 1 },
        }
    }

    /// Builds a spec from named hyperparameters; unknown keys are rejected.
    pub fn from_params(kind: LearnerKind, mut params: BTreeMap<String, f64>) -> Result<Self> {
        let spec = match Self::default_for(kind) {
            LearnerSpec::DecisionTree(mut p) => {
                if let Some(d) = take_int(&mut params, "max_depth", 1.0, 64.0)? {
                    p.max_depth = Some(d);
                }
                if let Some(m) = take_int(&mut params, "min_leaf", 1.0, 1e9)? {
                    p.min_leaf = m;
                }
                LearnerSpec::DecisionTree(p)
            }
            LearnerSpec::LogisticRegression(mut p) => {
                if let Some(v) = take_real(&mut params, "l2", 0.0, 1e6, false)? {
                    p.l2 = v;
                }
                if let Some(v) = take_real(&mut params, "lr", 0.0, 1e3, true)? {
                    p.learning_rate = v;
                }
                if let Some(v) = take_int(&mut params, "max_iter", 0.0, 1e6)? {
                    p.max_iter = v;
                }
                LearnerSpec::LogisticRegression(p)
            }
            LearnerSpec::Knn(mut p) => {
                if let Some(k) = take_int(&mut params, "k", 1.0, 1e6)? {
                    p.k = k;
                }
                LearnerSpec::Knn(p)
            }
            LearnerSpec::GradientBoostedTrees(mut p) => {
                if let Some(v) = take_int(&mut params, "n_rounds", 1.0, 1e5)? {
                    p.n_rounds = v;
                }
                if let Some(v) = take_real(&mut params, "lr", 0.0, 1.0, true)? {
                    p.learning_rate = v;
                }
                if let Some(v) = take_int(&mut params, "max_depth", 1.0, 16.0)? {
                    p.max_depth = v;
                }
                LearnerSpec::GradientBoostedTrees(p)
            }
            LearnerSpec::DummyConstant { mut label } => {
                if let Some(v) = take_int(&mut params, "label", 0.0, 1.0)? {
                    label = v as u8;
                }
                LearnerSpec::DummyConstant { label }
            }
        };
        if let Some(k) = params.keys().next() {
            return Err(Error::InvalidArgument(format!(
                "unknown hyperparameter `{k}` for {}",
                kind.short_name()
            )));
        }
        Ok(spec)
    }

    pub fn kind(&self) -> LearnerKind {
        match self {
            LearnerSpec::DecisionTree(_) => LearnerKind::DecisionTree,
            LearnerSpec::LogisticRegression(_) => LearnerKind::LogisticRegression,
            LearnerSpec::Knn(_) => LearnerKind::Knn,
            LearnerSpec::GradientBoostedTrees(_) => LearnerKind::GradientBoostedTrees,
            LearnerSpec::DummyConstant { .. } => LearnerKind::DummyConstant,
        }
    }

    /// Hyperparameters that differ from the kind's defaults, by name.
    pub fn non_default_params(&self) -> Vec<(&'static str, String)> {
        let mut out = Vec::new();
        match (self, Self::default_for(self.kind())) {
            (LearnerSpec::DecisionTree(p), LearnerSpec::DecisionTree(d)) => {
                if p.max_depth != d.max_depth {
                    if let Some(m) = p.max_depth {
                        out.push(("max_depth", m.to_string()));
                    }
                }
                if p.min_leaf != d.min_leaf {
                    out.push(("min_leaf", p.min_leaf.to_string()));
                }
            }
            (LearnerSpec::LogisticRegression(p), LearnerSpec::LogisticRegression(d)) => {
                if p.l2 != d.l2 {
                    out.push(("l2", p.l2.to_string()));
                }
                if p.learning_rate != d.learning_rate {
                    out.push(("lr", p.learning_rate.to_string()));
                }
                if p.max_iter != d.max_iter {
                    out.push(("max_iter", p.max_iter.to_string()));
                }
            }
            (LearnerSpec::Knn(p), LearnerSpec::Knn(d)) => {
                if p.k != d.k {
                    out.push(("k", p.k.to_string()));
                }
            }
            (LearnerSpec::GradientBoostedTrees(p), LearnerSpec::GradientBoostedTrees(d)) => {
                if p.n_rounds != d.n_rounds {
                    out.push(("n_rounds", p.n_rounds.to_string()));
                }
                if p.learning_rate != d.learning_rate {
                    out.push(("lr", p.learning_rate.to_string()));
                }
                if p.max_depth != d.max_depth {
                    out.push(("max_depth", p.max_depth.to_string()));
                }
            }
            (LearnerSpec::DummyConstant { label }, _) => {
                if *label != 1 {
                    out.push(("label", label.to_string()));
                }
            }
            _ => unreachable!(),
        }
        out
    }
}

impl fmt::Display for LearnerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.kind().short_name())?;
        let params = self.non_default_params();
        if !params.is_empty() {
            let body: Vec<String> = params.iter().map(|(k, v)| format!("{k}={v}")).collect();
            write!(f, "({})", body.join(", "))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum FittedParams {
    Tree(Tree),
    Logistic(LogisticModel),
    Knn(KnnModel),
    Gbt(GbtModel),
    /// Dummy models and any learner fitted on a single class.
    Constant { label: u8 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub n_rows: usize,
    pub n_cols: usize,
    pub seed: u64,
    pub fit_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub spec: LearnerSpec,
    pub params: FittedParams,
    pub capabilities: Capabilities,
    pub meta: TrainingMeta,
}

pub const MODEL_FORMAT: &str = "learner/1";

#[derive(Serialize, Deserialize)]
struct Envelope {
    format: String,
    #[serde(flatten)]
    model: TrainedModel,
}

pub fn check_weights(n: usize, w: Option<&[f64]>) -> Result<()> {
    if let Some(w) = w {
        if w.len() != n {
            return Err(Error::InvalidArgument(format!(
                "{} weights for {n} rows",
                w.len()
            )));
        }
        if w.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidArgument("weights must be finite and nonnegative".into()));
        }
        if w.iter().sum::<f64>() <= 0.0 {
            return Err(Error::InvalidArgument("total sample weight is zero".into()));
        }
    }
    Ok(())
}

/// Trains a learner. Deterministic for fixed inputs.
pub fn fit(
    spec: &LearnerSpec,
    x: ArrayView2<'_, f64>,
    y: &[u8],
    weights: Option<&[f64]>,
    seed: u64,
) -> Result<TrainedModel> {
    let (n, d) = x.dim();
    if y.len() != n {
        return Err(Error::InvalidArgument(format!("{} labels for {n} rows", y.len())));
    }
    if n == 0 {
        return Err(Error::InvalidArgument("no training rows".into()));
    }
    check_weights(n, weights)?;
    let start = Instant::now();
    let w: Vec<f64> = weights.map_or_else(|| vec![1.0; n], <[f64]>::to_vec);

    let present = |label: u8| (0..n).any(|i| y[i] == label && w[i] > 0.0);
    let single = match (present(0), present(1)) {
        (true, false) => Some(0),
        (false, true) => Some(1),
        _ => None,
    };

    let params = match (spec, single) {
        (LearnerSpec::DummyConstant { label }, _) => FittedParams::Constant { label: *label },
        (_, Some(label)) => {
            warn!("{spec}: training labels hold a single class; fitting a constant predictor");
            FittedParams::Constant { label }
        }
        (LearnerSpec::DecisionTree(p), None) => {
            let target: Vec<f64> = y.iter().map(|&v| f64::from(v)).collect();
            let rows: Vec<usize> = (0..n).filter(|&i| w[i] > 0.0).collect();
            let leaf = |rows: &[usize]| {
                let tw: f64 = rows.iter().map(|&r| w[r]).sum();
                rows.iter().map(|&r| w[r] * target[r]).sum::<f64>() / tw
            };
            FittedParams::Tree(cart::build(x, &target, &w, &rows, *p, leaf))
        }
        (LearnerSpec::LogisticRegression(p), None) => {
            FittedParams::Logistic(logistic::fit(x, y, Some(&w), p)?)
        }
        (LearnerSpec::Knn(p), None) => FittedParams::Knn(KnnModel::fit(x, y, &w, p)),
        (LearnerSpec::GradientBoostedTrees(p), None) => FittedParams::Gbt(gbt::fit(x, y, &w, p)),
    };

    Ok(TrainedModel {
        spec: spec.clone(),
        params,
        capabilities: spec.kind().capabilities(),
        meta: TrainingMeta {
            n_rows: n,
            n_cols: d,
            seed,
            fit_seconds: start.elapsed().as_secs_f64(),
        },
    })
}

impl TrainedModel {
    fn check_width(&self, x: ArrayView2<'_, f64>) -> Result<()> {
        if x.ncols() != self.meta.n_cols {
            return Err(Error::Width {
                expected: self.meta.n_cols,
                actual: x.ncols(),
            });
        }
        Ok(())
    }

    /// Probability of the favorable label for each row.
    pub fn proba1(&self, x: ArrayView2<'_, f64>) -> Result<Vec<f64>> {
        self.check_width(x)?;
        let rows = x.rows().into_iter().map(|r| r.to_vec());
        Ok(match &self.params {
            FittedParams::Constant { label } => vec![f64::from(*label); x.nrows()],
            FittedParams::Tree(t) => rows.map(|r| t.predict_row(&r)).collect(),
            FittedParams::Logistic(m) => rows.map(|r| m.proba_row(&r)).collect(),
            FittedParams::Knn(m) => rows.map(|r| m.proba_row(&r)).collect(),
            FittedParams::Gbt(m) => rows.map(|r| m.proba_row(&r)).collect(),
        })
    }

    /// `n × 2` matrix of class probabilities, columns (unfavorable, favorable).
    pub fn predict_proba(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        if !self.capabilities.supports_proba {
            return Err(Error::Capability(format!("{} has no probabilities", self.spec)));
        }
        let p = self.proba1(x)?;
        Ok(Array2::from_shape_fn((p.len(), 2), |(i, j)| if j == 1 { p[i] } else { 1.0 - p[i] }))
    }

    /// Argmax of the class probabilities; ties go to the unfavorable label.
    pub fn predict(&self, x: ArrayView2<'_, f64>) -> Result<Vec<u8>> {
        Ok(self.proba1(x)?.into_iter().map(label_of).collect())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&Envelope {
            format: MODEL_FORMAT.to_string(),
            model: self.clone(),
        })?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let env: Envelope = serde_json::from_str(text)?;
        if env.format != MODEL_FORMAT {
            return Err(Error::Serde(format!("unsupported model format `{}`", env.format)));
        }
        Ok(env.model)
    }
}

pub fn label_of(p1: f64) -> u8 {
    u8::from(p1 > 1.0 - p1)
}
