//! Training and prediction for composed pipelines.

use std::time::Instant;

use ndarray::{concatenate, Array2, ArrayView2, Axis};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::composition::expr::{Expr, VoteMode};
use crate::composition::validate::{validate, FeasibilityError, Rule};
use crate::dataset::{stratified_holdout, stratified_kfold_labels, Dataset};
use crate::error::{Error, Result};
use crate::learners::{self, label_of, Capabilities, TrainedModel};
use crate::mitigation::{ceo, lfr, prejudice, reweigh, CeoModel, LfrModel, MitigatorSpec, PrejudiceRemoverModel, RepairModel};
use crate::seed::{self, mix};

/// Holdout fraction of a post-mitigated node's slice used to fit the
/// post-processor.
pub const CALIBRATION_FRACTION: f64 = 0.3;
/// Internal folds for out-of-fold stacking meta-features.
pub const STACK_FOLDS: usize = 3;

const SALT_RESAMPLE: u64 = 0x5245;
const SALT_SPLIT: u64 = 0x5350;
const SALT_APPLY: u64 = 0x4150;
const SALT_FOLDS: u64 = 0x464f;
const SALT_FINAL: u64 = 0x4649;

/// What a fitted node produces: favorable-class probabilities, or hard
/// labels when probabilities are unavailable.
#[derive(Debug, Clone, PartialEq)]
pub enum Output {
    Scores(Vec<f64>),
    Labels(Vec<u8>),
}

impl Output {
    pub fn labels(&self) -> Vec<u8> {
        match self {
            Output::Scores(p) => p.iter().map(|&v| label_of(v)).collect(),
            Output::Labels(l) => l.clone(),
        }
    }

    /// One meta-feature column: the probability, or the 0/1 label.
    pub fn as_feature(&self) -> Vec<f64> {
        match self {
            Output::Scores(p) => p.clone(),
            Output::Labels(l) => l.iter().map(|&v| f64::from(v)).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Fitted {
    Learner(TrainedModel),
    Reweigh {
        inner: Box<Fitted>,
    },
    Repair {
        model: RepairModel,
        inner: Box<Fitted>,
    },
    Lfr {
        model: LfrModel,
        inner: Box<Fitted>,
    },
    InEst(PrejudiceRemoverModel),
    Post {
        model: CeoModel,
        inner: Box<Fitted>,
        seed: u64,
    },
    Bag {
        members: Vec<Fitted>,
    },
    Boost {
        members: Vec<Fitted>,
        alphas: Vec<f64>,
    },
    Vote {
        members: Vec<Fitted>,
        mode: VoteMode,
    },
    Stack {
        members: Vec<Fitted>,
        final_estimator: Box<Fitted>,
        passthrough: bool,
        meta_width: usize,
    },
}

struct Slice<'a> {
    x: ArrayView2<'a, f64>,
    y: &'a [u8],
    g: &'a [u8],
    w: Option<&'a [f64]>,
    numeric: &'a [bool],
}

struct Owned {
    x: Array2<f64>,
    y: Vec<u8>,
    g: Vec<u8>,
    w: Option<Vec<f64>>,
}

impl Owned {
    fn slice<'a>(&'a self, numeric: &'a [bool]) -> Slice<'a> {
        Slice {
            x: self.x.view(),
            y: &self.y,
            g: &self.g,
            w: self.w.as_deref(),
            numeric,
        }
    }
}

impl Slice<'_> {
    fn subset(&self, rows: &[usize]) -> Owned {
        Owned {
            x: self.x.select(Axis(0), rows),
            y: rows.iter().map(|&r| self.y[r]).collect(),
            g: rows.iter().map(|&r| self.g[r]).collect(),
            w: self.w.map(|w| rows.iter().map(|&r| w[r]).collect()),
        }
    }

    fn n(&self) -> usize {
        self.y.len()
    }
}

/// Rows drawn with replacement, uniformly or proportionally to `w`.
fn resample(n: usize, w: Option<&[f64]>, seed_: u64) -> Result<Vec<usize>> {
    let mut rng = seed::rng(seed_);
    match w {
        None => Ok((0..n).map(|_| rng.random_range(0..n)).collect()),
        Some(w) => {
            let dist = WeightedIndex::new(w).map_err(|e| Error::InvalidArgument(format!("sampling weights: {e}")))?;
            Ok((0..n).map(|_| dist.sample(&mut rng)).collect())
        }
    }
}

/// Fits `e` honoring weights: passed through when supported, otherwise
/// emulated by a weighted resample.
fn fit_weighted(e: &Expr, s: &Slice<'_>, seed_: u64) -> Result<Fitted> {
    match s.w {
        Some(w) if !e.capabilities().supports_weights => {
            let rows = resample(s.n(), Some(w), mix(seed_, SALT_RESAMPLE))?;
            let mut sub = s.subset(&rows);
            sub.w = None;
            fit_node(e, &sub.slice(s.numeric), seed_)
        }
        _ => fit_node(e, s, seed_),
    }
}

fn fit_node(e: &Expr, s: &Slice<'_>, seed_: u64) -> Result<Fitted> {
    match e {
        Expr::Learner(spec) => Ok(Fitted::Learner(learners::fit(spec, s.x, s.y, s.w, seed_)?)),
        Expr::Pre { mitigator, inner } => match mitigator {
            MitigatorSpec::Reweigh => {
                let rw = reweigh(s.y, s.g, s.w)?.expand(s.y, s.g);
                let w: Vec<f64> = match s.w {
                    Some(base) => rw.iter().zip(base).map(|(a, b)| a * b).collect(),
                    None => rw,
                };
                let sub = Slice { w: Some(&w), ..*s };
                Ok(Fitted::Reweigh {
                    inner: Box::new(fit_weighted(inner, &sub, seed_)?),
                })
            }
            MitigatorSpec::Dir { level } => {
                let model = RepairModel::fit(s.x, s.g, s.numeric, *level)?;
                let x = model.apply(s.x, s.g)?;
                let sub = Slice { x: x.view(), ..*s };
                Ok(Fitted::Repair {
                    inner: Box::new(fit_weighted(inner, &sub, seed_)?),
                    model,
                })
            }
            MitigatorSpec::Lfr(params) => {
                let model = lfr::fit(s.x, s.y, s.g, *params, seed_)?;
                let x = model.transform(s.x)?;
                let numeric = vec![true; x.ncols()];
                let sub = Slice {
                    x: x.view(),
                    numeric: &numeric,
                    ..*s
                };
                Ok(Fitted::Lfr {
                    inner: Box::new(fit_weighted(inner, &sub, seed_)?),
                    model,
                })
            }
            other => Err(Error::InvalidArgument(format!("{} is not a pre-estimator mitigator", other.name()))),
        },
        Expr::In { mitigator, inner: None } => match mitigator {
            MitigatorSpec::Pr(params) => Ok(Fitted::InEst(prejudice::fit(s.x, s.y, s.g, s.w, *params)?)),
            other => Err(Error::InvalidArgument(format!("{} is not an in-estimator mitigator", other.name()))),
        },
        Expr::In { inner: Some(_), .. } => Err(FeasibilityError {
            rule: Rule::R1,
            message: "an in-estimator mitigator cannot wrap another estimator".into(),
            path: "$".into(),
        }
        .into()),
        Expr::Post { mitigator, inner } => {
            let MitigatorSpec::Ceo { cost } = mitigator else {
                return Err(Error::InvalidArgument(format!("{} is not a post-estimator mitigator", mitigator.name())));
            };
            let (main, hold) = stratified_holdout(s.y, s.g, CALIBRATION_FRACTION, mix(seed_, SALT_SPLIT));
            let fit_part = s.subset(&main);
            let cal = s.subset(&hold);
            let inner_fit = fit_weighted(inner, &fit_part.slice(s.numeric), seed_)?;
            let scores = output(&inner_fit, cal.x.view(), Some(&cal.g))?.as_feature();
            let model = ceo::fit(&scores, &cal.y, &cal.g, *cost)?;
            Ok(Fitted::Post {
                model,
                inner: Box::new(inner_fit),
                seed: mix(seed_, SALT_APPLY),
            })
        }
        Expr::Bag { inner, n, bootstrap } => {
            let members = (0..*n)
                .into_par_iter()
                .map(|i| {
                    let si = mix(seed_, i as u64);
                    if *bootstrap {
                        let rows = resample(s.n(), s.w, si)?;
                        let mut sub = s.subset(&rows);
                        sub.w = None;
                        fit_weighted(inner, &sub.slice(s.numeric), si)
                    } else {
                        fit_weighted(inner, s, si)
                    }
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(Fitted::Bag { members })
        }
        Expr::Boost { inner, n } => fit_boost(inner, *n, s, seed_),
        Expr::Vote { members, mode } => {
            let fitted = members
                .par_iter()
                .enumerate()
                .map(|(i, m)| fit_weighted(m, s, mix(seed_, i as u64)))
                .collect::<Result<Vec<_>>>()?;
            if *mode == VoteMode::Soft {
                if let Some(i) = members.iter().position(|m| !m.capabilities().supports_proba) {
                    return Err(FeasibilityError {
                        rule: Rule::R2,
                        message: format!("soft voting member {} has no probabilities", members[i]),
                        path: format!("$.members[{i}]"),
                    }
                    .into());
                }
            }
            Ok(Fitted::Vote { members: fitted, mode: *mode })
        }
        Expr::Stack {
            members,
            final_estimator,
            passthrough,
        } => fit_stack(members, final_estimator, *passthrough, s, seed_),
    }
}

fn normalize_mean_one(w: &mut [f64]) {
    let s: f64 = w.iter().sum();
    let n = w.len() as f64;
    for v in w.iter_mut() {
        *v *= n / s;
    }
}

/// Discrete SAMME for two classes.
fn fit_boost(inner: &Expr, n: usize, s: &Slice<'_>, seed_: u64) -> Result<Fitted> {
    let mut w: Vec<f64> = s.w.map_or_else(|| vec![1.0; s.n()], <[f64]>::to_vec);
    normalize_mean_one(&mut w);
    let mut members = Vec::new();
    let mut alphas = Vec::new();
    for m in 0..n {
        let sub = Slice { w: Some(&w), ..*s };
        let fitted = fit_weighted(inner, &sub, mix(seed_, m as u64))?;
        let pred = output(&fitted, s.x, Some(s.g))?.labels();
        let total: f64 = w.iter().sum();
        let err: f64 = (0..s.n()).filter(|&i| pred[i] != s.y[i]).map(|i| w[i]).sum::<f64>() / total;
        if err <= 0.0 {
            members.push(fitted);
            alphas.push(1.0);
            break;
        }
        if err >= 0.5 {
            if members.is_empty() {
                members.push(fitted);
                alphas.push(1.0);
            }
            break;
        }
        let alpha = ((1.0 - err) / err).ln();
        for i in 0..s.n() {
            if pred[i] != s.y[i] {
                w[i] *= alpha.exp();
            }
        }
        normalize_mean_one(&mut w);
        members.push(fitted);
        alphas.push(alpha);
    }
    Ok(Fitted::Boost { members, alphas })
}

fn fit_stack(members: &[Expr], final_e: &Expr, passthrough: bool, s: &Slice<'_>, seed_: u64) -> Result<Fitted> {
    let plan = stratified_kfold_labels(s.y, s.g, STACK_FOLDS, mix(seed_, SALT_FOLDS))?;
    let columns = members
        .par_iter()
        .enumerate()
        .map(|(i, m)| {
            let mut col = vec![0.0; s.n()];
            for f in 0..STACK_FOLDS {
                let train = plan.train_indices(f);
                let test = plan.test_indices(f);
                let part = s.subset(&train);
                let fitted = fit_weighted(m, &part.slice(s.numeric), mix(mix(seed_, i as u64), f as u64 + 1))?;
                let held = s.subset(&test);
                let out = output(&fitted, held.x.view(), Some(&held.g))?.as_feature();
                for (r, v) in test.iter().zip(out) {
                    col[*r] = v;
                }
            }
            let full = fit_weighted(m, s, mix(seed_, i as u64))?;
            Ok((col, full))
        })
        .collect::<Result<Vec<_>>>()?;
    let (cols, fitted): (Vec<Vec<f64>>, Vec<Fitted>) = columns.into_iter().unzip();
    let meta = Array2::from_shape_fn((s.n(), cols.len()), |(r, c)| cols[c][r]);
    let meta_width = meta.ncols();
    let (x, numeric) = stacked_input(meta, s.x, s.numeric, passthrough);
    let sub = Slice {
        x: x.view(),
        numeric: &numeric,
        ..*s
    };
    let final_fit = fit_weighted(final_e, &sub, mix(seed_, SALT_FINAL))?;
    Ok(Fitted::Stack {
        members: fitted,
        final_estimator: Box::new(final_fit),
        passthrough,
        meta_width,
    })
}

fn stacked_input(meta: Array2<f64>, x: ArrayView2<'_, f64>, numeric: &[bool], passthrough: bool) -> (Array2<f64>, Vec<bool>) {
    let mut mask = vec![false; meta.ncols()];
    if passthrough {
        mask.extend_from_slice(numeric);
        let joined = concatenate(Axis(1), &[meta.view(), x]).expect("row counts agree");
        (joined, mask)
    } else {
        (meta, mask)
    }
}

fn need_group<'a>(g: Option<&'a [u8]>, node: &str) -> Result<&'a [u8]> {
    g.ok_or_else(|| Error::InvalidArgument(format!("{node} needs the group column at prediction time")))
}

fn majority(outputs: &[Output], n: usize) -> Vec<u8> {
    let labels: Vec<Vec<u8>> = outputs.iter().map(Output::labels).collect();
    (0..n)
        .map(|i| {
            let ones = labels.iter().filter(|l| l[i] == 1).count();
            u8::from(2 * ones > labels.len())
        })
        .collect()
}

fn mean_scores(outputs: &[Output], n: usize) -> Option<Vec<f64>> {
    let mut acc = vec![0.0; n];
    for o in outputs {
        let Output::Scores(p) = o else { return None };
        for (a, v) in acc.iter_mut().zip(p) {
            *a += v;
        }
    }
    Some(acc.into_iter().map(|a| a / outputs.len() as f64).collect())
}

/// Predicts with a fitted node; `g` is required only below repair and
/// post-processing nodes.
pub fn output(f: &Fitted, x: ArrayView2<'_, f64>, g: Option<&[u8]>) -> Result<Output> {
    let n = x.nrows();
    match f {
        Fitted::Learner(m) => Ok(Output::Scores(m.proba1(x)?)),
        Fitted::Reweigh { inner } => output(inner, x, g),
        Fitted::Repair { model, inner } => {
            let g = need_group(g, &format!("DIR({})", model.level))?;
            let x2 = model.apply(x, g)?;
            output(inner, x2.view(), Some(g))
        }
        Fitted::Lfr { model, inner } => {
            let x2 = model.transform(x)?;
            output(inner, x2.view(), g)
        }
        Fitted::InEst(m) => {
            if x.ncols() != m.logistic.coef.len() {
                return Err(Error::Width {
                    expected: m.logistic.coef.len(),
                    actual: x.ncols(),
                });
            }
            Ok(Output::Scores(x.rows().into_iter().map(|r| m.logistic.proba_row(&r.to_vec())).collect()))
        }
        Fitted::Post { model, inner, seed } => {
            let g = need_group(g, &format!("CEO(cost={})", model.cost))?;
            let scores = output(inner, x, Some(g))?.as_feature();
            Ok(Output::Labels(model.apply_labels(&scores, g, *seed)))
        }
        Fitted::Bag { members } => {
            let outs = members.iter().map(|m| output(m, x, g)).collect::<Result<Vec<_>>>()?;
            Ok(match mean_scores(&outs, n) {
                Some(p) => Output::Scores(p),
                None => Output::Labels(majority(&outs, n)),
            })
        }
        Fitted::Boost { members, alphas } => {
            let total: f64 = alphas.iter().sum();
            let mut acc = vec![0.0; n];
            for (m, a) in members.iter().zip(alphas) {
                for (v, l) in acc.iter_mut().zip(output(m, x, g)?.labels()) {
                    *v += a * f64::from(l);
                }
            }
            Ok(Output::Scores(acc.into_iter().map(|v| v / total).collect()))
        }
        Fitted::Vote { members, mode } => {
            let outs = members.iter().map(|m| output(m, x, g)).collect::<Result<Vec<_>>>()?;
            match mode {
                VoteMode::Hard => Ok(Output::Labels(majority(&outs, n))),
                VoteMode::Soft => mean_scores(&outs, n).map(Output::Scores).ok_or_else(|| {
                    FeasibilityError {
                        rule: Rule::R2,
                        message: "soft voting member produced labels only".into(),
                        path: "$".into(),
                    }
                    .into()
                }),
            }
        }
        Fitted::Stack {
            members,
            final_estimator,
            passthrough,
            ..
        } => {
            let cols = members
                .iter()
                .map(|m| output(m, x, g).map(|o| o.as_feature()))
                .collect::<Result<Vec<_>>>()?;
            let meta = Array2::from_shape_fn((n, cols.len()), |(r, c)| cols[c][r]);
            let input = if *passthrough {
                concatenate(Axis(1), &[meta.view(), x]).expect("row counts agree")
            } else {
                meta
            };
            output(final_estimator, input.view(), g)
        }
    }
}

/// Per-column min-max scaling of numeric features, fitted on training rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinMaxScaler {
    pub min: Vec<f64>,
    pub span: Vec<f64>,
    pub numeric: Vec<bool>,
}

impl MinMaxScaler {
    pub fn fit(x: ArrayView2<'_, f64>, numeric: &[bool]) -> Self {
        let mut min = vec![0.0; x.ncols()];
        let mut span = vec![1.0; x.ncols()];
        for (j, col) in x.columns().into_iter().enumerate() {
            if !numeric[j] || col.is_empty() {
                continue;
            }
            let lo = col.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            min[j] = lo;
            if hi > lo {
                span[j] = hi - lo;
            }
        }
        MinMaxScaler {
            min,
            span,
            numeric: numeric.to_vec(),
        }
    }

    pub fn transform(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        let mut out = x.to_owned();
        for ((j, mut col), num) in out.columns_mut().into_iter().enumerate().zip(&self.numeric) {
            if *num {
                col.mapv_inplace(|v| (v - self.min[j]) / self.span[j]);
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedPipeline {
    pub pipeline: String,
    pub expr: Expr,
    pub root: Fitted,
    pub capabilities: Capabilities,
    pub n_cols: usize,
    pub scaler: Option<MinMaxScaler>,
    pub fit_seconds: f64,
    pub seed: u64,
}

/// Training inputs for [`fit_arrays`].
pub struct TrainingData<'a> {
    pub x: ArrayView2<'a, f64>,
    pub y: &'a [u8],
    pub g: &'a [u8],
    pub weights: Option<&'a [f64]>,
    pub numeric: &'a [bool],
    pub scale_numeric: bool,
}

pub fn fit_arrays(expr: &Expr, data: TrainingData<'_>, seed_: u64) -> Result<TrainedPipeline> {
    validate(expr)?;
    let (n, d) = data.x.dim();
    if data.y.len() != n || data.g.len() != n || data.numeric.len() != d {
        return Err(Error::InvalidArgument("training data shape mismatch".into()));
    }
    if n == 0 {
        return Err(Error::InvalidArgument("no training rows".into()));
    }
    learners::check_weights(n, data.weights)?;
    let start = Instant::now();
    let scaler = data.scale_numeric.then(|| MinMaxScaler::fit(data.x, data.numeric));
    let scaled = scaler.as_ref().map(|s| s.transform(data.x));
    let s = Slice {
        x: scaled.as_ref().map_or(data.x, |a| a.view()),
        y: data.y,
        g: data.g,
        w: data.weights,
        numeric: data.numeric,
    };
    let root = fit_weighted(expr, &s, seed_)?;
    Ok(TrainedPipeline {
        pipeline: expr.to_string(),
        expr: expr.clone(),
        root,
        capabilities: expr.capabilities(),
        n_cols: d,
        scaler,
        fit_seconds: start.elapsed().as_secs_f64(),
        seed: seed_,
    })
}

/// Fits `expr` on the given training rows of `ds`.
pub fn fit_pipeline(expr: &Expr, ds: &Dataset, train: &[usize], seed_: u64) -> Result<TrainedPipeline> {
    let x = ds.rows(train);
    let y: Vec<u8> = train.iter().map(|&i| ds.y[i]).collect();
    let g: Vec<u8> = train.iter().map(|&i| ds.g[i]).collect();
    fit_arrays(
        expr,
        TrainingData {
            x: x.view(),
            y: &y,
            g: &g,
            weights: None,
            numeric: &ds.numeric,
            scale_numeric: ds.scale_numeric,
        },
        seed_,
    )
}

impl TrainedPipeline {
    fn prepare(&self, x: ArrayView2<'_, f64>, g: Option<&[u8]>) -> Result<Option<Array2<f64>>> {
        if x.ncols() != self.n_cols {
            return Err(Error::Width {
                expected: self.n_cols,
                actual: x.ncols(),
            });
        }
        if g.is_some_and(|g| g.len() != x.nrows()) {
            return Err(Error::InvalidArgument("group vector length mismatch".into()));
        }
        Ok(self.scaler.as_ref().map(|s| s.transform(x)))
    }

    pub fn output(&self, x: ArrayView2<'_, f64>, g: Option<&[u8]>) -> Result<Output> {
        let scaled = self.prepare(x, g)?;
        output(&self.root, scaled.as_ref().map_or(x, |a| a.view()), g)
    }

    pub fn predict(&self, x: ArrayView2<'_, f64>, g: Option<&[u8]>) -> Result<Vec<u8>> {
        Ok(self.output(x, g)?.labels())
    }

    pub fn predict_proba(&self, x: ArrayView2<'_, f64>, g: Option<&[u8]>) -> Result<Vec<f64>> {
        if !self.capabilities.supports_proba {
            return Err(Error::Capability(format!("{} does not provide probabilities", self.pipeline)));
        }
        match self.output(x, g)? {
            Output::Scores(p) => Ok(p),
            Output::Labels(_) => Err(Error::Capability(format!("{} produced labels only", self.pipeline))),
        }
    }
}

/// Predicts rows of `ds`, passing the group column.
pub fn predict_pipeline(tp: &TrainedPipeline, ds: &Dataset, rows: &[usize]) -> Result<Vec<u8>> {
    let x = ds.rows(rows);
    let g: Vec<u8> = rows.iter().map(|&i| ds.g[i]).collect();
    tp.predict(x.view(), Some(&g))
}
