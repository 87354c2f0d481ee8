//! Logistic regression with a mutual-information prejudice penalty.
//!
//! The 2×2 table of (outcome, group) is filled with soft counts, each row
//! contributing its predicted probability to the favorable cell, so the
//! penalty is differentiable. Every cell is smoothed by 0.5.

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::learners::logistic::{self, initial_theta, linear_scores, normalized_weights, sigmoid, LogisticModel};
use crate::optim;

pub const SMOOTHING: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrejudiceParams {
    pub eta: f64,
    pub l2: f64,
    pub max_iter: usize,
}

impl Default for PrejudiceParams {
    fn default() -> Self {
        PrejudiceParams {
            eta: 1.0,
            l2: 0.01,
            max_iter: 300,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrejudiceRemoverModel {
    pub logistic: LogisticModel,
    pub params: PrejudiceParams,
}

/// Smoothed soft-count mutual information between outcome and group and its
/// gradient with respect to each row's probability.
pub fn prejudice_index(p: &[f64], g: &[u8], w: &[f64]) -> (f64, Vec<f64>) {
    let mut c = [[SMOOTHING; 2]; 2]; // [outcome][group]
    for i in 0..p.len() {
        let grp = usize::from(g[i]);
        c[1][grp] += w[i] * p[i];
        c[0][grp] += w[i] * (1.0 - p[i]);
    }
    let total: f64 = c.iter().flatten().sum();
    let co = [c[0][0] + c[0][1], c[1][0] + c[1][1]];
    let cg = [c[0][0] + c[1][0], c[0][1] + c[1][1]];
    let mut mi = 0.0;
    for o in 0..2 {
        for grp in 0..2 {
            mi += c[o][grp] / total * (c[o][grp] * total / (co[o] * cg[grp])).ln();
        }
    }
    let shift = [
        (c[1][0] / c[0][0]).ln() - (co[1] / co[0]).ln(),
        (c[1][1] / c[0][1]).ln() - (co[1] / co[0]).ln(),
    ];
    let grad = (0..p.len()).map(|i| w[i] / total * shift[usize::from(g[i])]).collect();
    (mi, grad)
}

/// Regularized log-loss plus `eta` times the prejudice index.
pub fn objective(
    x: ArrayView2<'_, f64>,
    y: &[u8],
    g: &[u8],
    w: &[f64],
    params: &PrejudiceParams,
    theta: &[f64],
) -> (f64, Vec<f64>) {
    let (mut loss, mut grad) = logistic::objective(x, y, w, params.l2, theta);
    if params.eta == 0.0 {
        return (loss, grad);
    }
    let p: Vec<f64> = linear_scores(x, theta).into_iter().map(sigmoid).collect();
    let (mi, dp) = prejudice_index(&p, g, w);
    loss += params.eta * mi;
    for (i, row) in x.rows().into_iter().enumerate() {
        let dz = params.eta * dp[i] * p[i] * (1.0 - p[i]);
        grad[0] += dz;
        for (gj, xj) in grad[1..].iter_mut().zip(row.iter()) {
            *gj += dz * xj;
        }
    }
    (loss, grad)
}

pub fn fit(
    x: ArrayView2<'_, f64>,
    y: &[u8],
    g: &[u8],
    weights: Option<&[f64]>,
    params: PrejudiceParams,
) -> Result<PrejudiceRemoverModel> {
    if !(params.eta >= 0.0 && params.eta.is_finite()) {
        return Err(Error::InvalidArgument(format!("eta must be >= 0, got {}", params.eta)));
    }
    if y.len() != x.nrows() || g.len() != x.nrows() {
        return Err(Error::InvalidArgument("prejudice remover: length mismatch".into()));
    }
    let w = normalized_weights(y.len(), weights);
    let out = optim::minimize(
        |t| objective(x, y, g, &w, &params, t),
        initial_theta(y, &w, x.ncols()),
        optim::Options {
            max_iters: params.max_iter,
            ..Default::default()
        },
    )
    .map_err(|e| Error::Fit(format!("prejudice remover (eta = {}): {e}", params.eta)))?;
    Ok(PrejudiceRemoverModel {
        logistic: LogisticModel::from_theta(&out.x, out.converged),
        params,
    })
}
