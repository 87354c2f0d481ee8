//! Learning fair representations: rows are mapped to soft memberships over
//! `k` prototypes, trading reconstruction, label prediction and group
//! parity of the mean memberships.

use ndarray::{Array2, ArrayView2};
use rand::seq::index::sample;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::learners::logistic::sigmoid;
use crate::optim;
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LfrParams {
    pub k: usize,
    pub ax: f64,
    pub ay: f64,
    pub az: f64,
    pub max_iter: usize,
    pub restarts: usize,
}

impl Default for LfrParams {
    fn default() -> Self {
        LfrParams {
            k: 5,
            ax: 0.01,
            ay: 1.0,
            az: 50.0,
            max_iter: 150,
            restarts: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LfrModel {
    /// `k × d`.
    pub prototypes: Array2<f64>,
    /// Probability of the favorable label attached to each prototype.
    pub label_weights: Vec<f64>,
    pub params: LfrParams,
    pub objective: f64,
    pub converged: bool,
    pub seed: u64,
}

const SMOOTH_ABS: f64 = 1e-8;
const PROBA_EPS: f64 = 1e-9;

/// Row-wise softmax of negative squared distances to the prototypes.
pub fn memberships(x: ArrayView2<'_, f64>, prototypes: ArrayView2<'_, f64>) -> Array2<f64> {
    let (n, k) = (x.nrows(), prototypes.nrows());
    let mut m = Array2::zeros((n, k));
    for i in 0..n {
        let row = x.row(i);
        let mut a = vec![0.0; k];
        for (c, p) in prototypes.rows().into_iter().enumerate() {
            a[c] = -row.iter().zip(p.iter()).map(|(u, v)| (u - v) * (u - v)).sum::<f64>();
        }
        let top = a.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = a.iter().map(|v| (v - top).exp()).sum();
        for c in 0..k {
            m[[i, c]] = (a[c] - top).exp() / z;
        }
    }
    m
}

/// Problem data for the objective; parameters are packed as
/// `[prototypes (k*d, row-major), logits of label weights (k)]`.
pub struct Problem<'a> {
    pub x: ArrayView2<'a, f64>,
    pub y: &'a [u8],
    pub g: &'a [u8],
    pub params: LfrParams,
}

impl Problem<'_> {
    fn unpack(&self, theta: &[f64]) -> (Array2<f64>, Vec<f64>) {
        let (k, d) = (self.params.k, self.x.ncols());
        let v = Array2::from_shape_vec((k, d), theta[..k * d].to_vec()).expect("packed shape");
        (v, theta[k * d..].to_vec())
    }

    /// Objective and analytic gradient.
    pub fn evaluate(&self, theta: &[f64]) -> (f64, Vec<f64>) {
        let LfrParams { k, ax, ay, az, .. } = self.params;
        let (n, d) = self.x.dim();
        let nf = n as f64;
        let (v, u) = self.unpack(theta);
        let wk: Vec<f64> = u.iter().map(|&t| sigmoid(t)).collect();
        let m = memberships(self.x, v.view());
        let n1 = self.g.iter().filter(|&&t| t == 1).count() as f64;
        let n0 = nf - n1;

        // parity term on mean memberships
        let mut diff = vec![0.0; k];
        for i in 0..n {
            for c in 0..k {
                diff[c] += if self.g[i] == 1 { m[[i, c]] / n1 } else { -m[[i, c]] / n0 };
            }
        }
        let sabs: Vec<f64> = diff.iter().map(|z| (z * z + SMOOTH_ABS).sqrt()).collect();
        let lz: f64 = sabs.iter().sum();

        let mut lx = 0.0;
        let mut ly = 0.0;
        let mut grad_v = Array2::<f64>::zeros((k, d));
        let mut grad_w = vec![0.0; k];
        let mut resid = vec![0.0; d];
        let mut dm = vec![0.0; k];
        for i in 0..n {
            let row = self.x.row(i);
            for j in 0..d {
                let xhat: f64 = (0..k).map(|c| m[[i, c]] * v[[c, j]]).sum();
                resid[j] = row[j] - xhat;
                lx += resid[j] * resid[j];
            }
            let yhat = (0..k).map(|c| m[[i, c]] * wk[c]).sum::<f64>().clamp(PROBA_EPS, 1.0 - PROBA_EPS);
            let yi = f64::from(self.y[i]);
            ly -= yi * yhat.ln() + (1.0 - yi) * (1.0 - yhat).ln();
            let dyhat = (-yi / yhat + (1.0 - yi) / (1.0 - yhat)) / nf;

            let zsign = if self.g[i] == 1 { 1.0 / n1 } else { -1.0 / n0 };
            for c in 0..k {
                let rx: f64 = (0..d).map(|j| resid[j] * v[[c, j]]).sum();
                dm[c] = ax * (-2.0 / nf) * rx + ay * dyhat * wk[c] + az * zsign * diff[c] / sabs[c];
                grad_w[c] += ay * dyhat * m[[i, c]];
                for j in 0..d {
                    grad_v[[c, j]] += ax * (-2.0 / nf) * resid[j] * m[[i, c]];
                }
            }
            // back through the softmax and the squared distances
            let mbar: f64 = (0..k).map(|c| m[[i, c]] * dm[c]).sum();
            for c in 0..k {
                let da = m[[i, c]] * (dm[c] - mbar);
                for j in 0..d {
                    grad_v[[c, j]] += da * 2.0 * (row[j] - v[[c, j]]);
                }
            }
        }
        let loss = ax * lx / nf + ay * ly / nf + az * lz;
        let mut grad: Vec<f64> = grad_v.into_iter().collect();
        grad.extend(grad_w.iter().zip(&wk).map(|(gw, w)| gw * w * (1.0 - w)));
        (loss, grad)
    }
}

pub fn fit(x: ArrayView2<'_, f64>, y: &[u8], g: &[u8], params: LfrParams, seed_: u64) -> Result<LfrModel> {
    let (n, d) = x.dim();
    if params.k < 2 {
        return Err(Error::InvalidArgument(format!("LFR needs k >= 2, got {}", params.k)));
    }
    if [params.ax, params.ay, params.az].iter().any(|c| !c.is_finite() || *c < 0.0) {
        return Err(Error::InvalidArgument("LFR coefficients must be nonnegative".into()));
    }
    if y.len() != n || g.len() != n {
        return Err(Error::InvalidArgument("LFR: length mismatch".into()));
    }
    if !(g.contains(&0) && g.contains(&1)) {
        return Err(Error::Data("LFR: both groups must be present".into()));
    }
    if n < params.k {
        return Err(Error::Data(format!("LFR: {n} rows for {} prototypes", params.k)));
    }
    let problem = Problem { x, y, g, params };
    let jitter = Normal::new(0.0, 0.1).expect("valid normal");
    let mut best: Option<(optim::Outcome, u64)> = None;
    for r in 0..params.restarts.max(1) {
        let s = seed::mix(seed_, r as u64);
        let mut rng = seed::rng(s);
        let mut theta = Vec::with_capacity(params.k * (d + 1));
        for i in sample(&mut rng, n, params.k).into_iter() {
            theta.extend(x.row(i).iter().map(|v| v + 0.01 * jitter.sample(&mut rng)));
        }
        theta.extend((0..params.k).map(|_| jitter.sample(&mut rng)));
        let out = optim::minimize(
            |t| problem.evaluate(t),
            theta,
            optim::Options {
                max_iters: params.max_iter,
                grad_tol: 1e-7,
                ..Default::default()
            },
        )?;
        if best.as_ref().is_none_or(|(b, _)| out.value < b.value) {
            best = Some((out, s));
        }
    }
    let (out, s) = best.expect("at least one restart");
    let (prototypes, u) = problem.unpack(&out.x);
    Ok(LfrModel {
        prototypes,
        label_weights: u.iter().map(|&t| sigmoid(t)).collect(),
        params,
        objective: out.value,
        converged: out.converged,
        seed: s,
    })
}

impl LfrModel {
    /// `n × k` prototype memberships.
    pub fn transform(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.prototypes.ncols() {
            return Err(Error::Width {
                expected: self.prototypes.ncols(),
                actual: x.ncols(),
            });
        }
        Ok(memberships(x, self.prototypes.view()))
    }
}
