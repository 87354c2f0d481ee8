//! L2-regularized logistic regression on the weighted mean log-loss.

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::optim;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogisticParams {
    pub l2: f64,
    /// Step length of the first line-search trial.
    pub learning_rate: f64,
    pub max_iter: usize,
}

impl Default for LogisticParams {
    fn default() -> Self {
        LogisticParams {
            l2: 0.01,
            learning_rate: 1.0,
            max_iter: 300,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticModel {
    pub intercept: f64,
    pub coef: Vec<f64>,
    pub converged: bool,
}

impl LogisticModel {
    pub fn theta(&self) -> Vec<f64> {
        std::iter::once(self.intercept).chain(self.coef.iter().copied()).collect()
    }

    pub fn from_theta(theta: &[f64], converged: bool) -> Self {
        LogisticModel {
            intercept: theta[0],
            coef: theta[1..].to_vec(),
            converged,
        }
    }

    pub fn proba_row(&self, row: &[f64]) -> f64 {
        sigmoid(self.intercept + row.iter().zip(&self.coef).map(|(a, b)| a * b).sum::<f64>())
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// log(1 + e^z) without overflow.
pub fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

pub fn logit(p: f64) -> f64 {
    let p = p.clamp(1e-12, 1.0 - 1e-12);
    (p / (1.0 - p)).ln()
}

/// Weights rescaled to mean 1 (uniform when absent).
pub fn normalized_weights(n: usize, w: Option<&[f64]>) -> Vec<f64> {
    match w {
        None => vec![1.0; n],
        Some(w) => {
            let s: f64 = w.iter().sum();
            w.iter().map(|v| v * n as f64 / s).collect()
        }
    }
}

pub fn weighted_base_rate(y: &[u8], w: &[f64]) -> f64 {
    let tw: f64 = w.iter().sum();
    y.iter().zip(w).map(|(&t, &wi)| f64::from(t) * wi).sum::<f64>() / tw
}

pub fn linear_scores(x: ArrayView2<'_, f64>, theta: &[f64]) -> Vec<f64> {
    x.rows()
        .into_iter()
        .map(|r| theta[0] + r.iter().zip(&theta[1..]).map(|(a, b)| a * b).sum::<f64>())
        .collect()
}

/// Mean weighted log-loss plus `l2 / 2 * |coef|^2`; `theta = [intercept, coef..]`.
/// Weights must already be normalized to mean 1.
pub fn objective(
    x: ArrayView2<'_, f64>,
    y: &[u8],
    w: &[f64],
    l2: f64,
    theta: &[f64],
) -> (f64, Vec<f64>) {
    let n = y.len() as f64;
    let z = linear_scores(x, theta);
    let mut loss = 0.0;
    let mut grad = vec![0.0; theta.len()];
    for (i, row) in x.rows().into_iter().enumerate() {
        let yi = f64::from(y[i]);
        loss += w[i] * (softplus(z[i]) - yi * z[i]);
        let d = w[i] * (sigmoid(z[i]) - yi) / n;
        grad[0] += d;
        for (gj, xj) in grad[1..].iter_mut().zip(row.iter()) {
            *gj += d * xj;
        }
    }
    loss /= n;
    for j in 1..theta.len() {
        loss += 0.5 * l2 * theta[j] * theta[j];
        grad[j] += l2 * theta[j];
    }
    (loss, grad)
}

/// Intercept at the log-odds of the weighted base rate, coefficients zero.
pub fn initial_theta(y: &[u8], w: &[f64], n_cols: usize) -> Vec<f64> {
    let mut theta = vec![0.0; n_cols + 1];
    theta[0] = logit(weighted_base_rate(y, w));
    theta
}

pub fn fit(
    x: ArrayView2<'_, f64>,
    y: &[u8],
    weights: Option<&[f64]>,
    params: &LogisticParams,
) -> Result<LogisticModel> {
    let w = normalized_weights(y.len(), weights);
    let theta0 = initial_theta(y, &w, x.ncols());
    let out = optim::minimize(
        |t| objective(x, y, &w, params.l2, t),
        theta0,
        optim::Options {
            max_iters: params.max_iter,
            initial_step: params.learning_rate,
            ..Default::default()
        },
    )?;
    Ok(LogisticModel::from_theta(&out.x, out.converged))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;
    use ndarray::Array2;
    use rand::Rng;

    fn random_problem(seed: u64, n: usize, d: usize) -> (Array2<f64>, Vec<u8>, Vec<f64>) {
        let mut rng = seed::rng(seed);
        let x = Array2::from_shape_fn((n, d), |_| rng.random_range(-1.0..1.0));
        let y = (0..n).map(|i| u8::from(x[[i, 0]] + rng.random_range(-0.8..0.8) > 0.0)).collect();
        let w = (0..n).map(|_| rng.random_range(0.2..2.0)).collect();
        (x, y, w)
    }

    #[test]
    fn gradient_matches_central_differences() {
        for s in 0..5 {
            let (x, y, w) = random_problem(s, 30, 3);
            let w = normalized_weights(30, Some(&w));
            let mut rng = seed::rng(100 + s);
            let theta: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
            let (_, g) = objective(x.view(), &y, &w, 0.1, &theta);
            for j in 0..4 {
                let h = 1e-6;
                let mut tp = theta.clone();
                tp[j] += h;
                let mut tm = theta.clone();
                tm[j] -= h;
                let fd = (objective(x.view(), &y, &w, 0.1, &tp).0 - objective(x.view(), &y, &w, 0.1, &tm).0) / (2.0 * h);
                let rel = (fd - g[j]).abs() / fd.abs().max(1e-8);
                assert!(rel < 1e-4, "component {j}: fd {fd} vs {}", g[j]);
            }
        }
    }

    #[test]
    fn zero_iterations_gives_base_rate_intercept() {
        let (x, y, w) = random_problem(3, 40, 2);
        let m = fit(x.view(), &y, Some(&w), &LogisticParams { max_iter: 0, ..Default::default() }).unwrap();
        let p = weighted_base_rate(&y, &w);
        assert!((m.intercept - (p / (1.0 - p)).ln()).abs() < 1e-12);
        assert!(m.coef.iter().all(|&c| c == 0.0));
    }

    #[test]
    fn weight_scaling_leaves_optimum_unchanged() {
        let (x, y, w) = random_problem(5, 60, 3);
        let scaled: Vec<f64> = w.iter().map(|v| v * 7.3).collect();
        let p = LogisticParams::default();
        let a = fit(x.view(), &y, Some(&w), &p).unwrap();
        let b = fit(x.view(), &y, Some(&scaled), &p).unwrap();
        for (u, v) in a.theta().iter().zip(b.theta()) {
            assert!((u - v).abs() < 1e-6);
        }
    }

    #[test]
    fn learns_separating_direction() {
        let (x, y, _) = random_problem(9, 200, 2);
        let m = fit(x.view(), &y, None, &LogisticParams::default()).unwrap();
        assert!(m.converged);
        assert!(m.coef[0] > 1.0);
    }
}
