//! Limited-memory quasi-Newton descent with a backtracking (Armijo) line
//! search. Every accepted step strictly decreases the objective.

use std::collections::VecDeque;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct Options {
    pub max_iters: usize,
    /// Stop once the max-norm of the gradient drops below this.
    pub grad_tol: f64,
    pub memory: usize,
    /// Step length tried on the first iteration.
    pub initial_step: f64,
}

impl Default for Options {
    fn default() -> Self {
        Options {
            max_iters: 300,
            grad_tol: 1e-9,
            memory: 10,
            initial_step: 1.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Outcome {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Objective after each accepted step, starting with the initial value.
    pub history: Vec<f64>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn max_abs(a: &[f64]) -> f64 {
    a.iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

pub fn minimize<F>(mut f: F, x0: Vec<f64>, opts: Options) -> Result<Outcome>
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    let mut x = x0;
    let (mut fx, mut gx) = f(&x);
    if !fx.is_finite() {
        return Err(Error::Fit(format!("objective is not finite at the start ({fx})")));
    }
    let mut history = vec![fx];
    let mut pairs: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::new();
    let mut iterations = 0;
    let mut converged = max_abs(&gx) < opts.grad_tol;

    while !converged && iterations < opts.max_iters {
        iterations += 1;
        // two-loop recursion
        let mut q = gx.clone();
        let mut alphas = Vec::with_capacity(pairs.len());
        for (s, y, rho) in pairs.iter().rev() {
            let a = rho * dot(s, &q);
            for (qi, yi) in q.iter_mut().zip(y) {
                *qi -= a * yi;
            }
            alphas.push(a);
        }
        if let Some((s, y, _)) = pairs.back() {
            let gamma = dot(s, y) / dot(y, y);
            for qi in q.iter_mut() {
                *qi *= gamma;
            }
        }
        for ((s, y, rho), a) in pairs.iter().zip(alphas.into_iter().rev()) {
            let b = rho * dot(y, &q);
            for (qi, si) in q.iter_mut().zip(s) {
                *qi += (a - b) * si;
            }
        }
        let mut dir: Vec<f64> = q.iter().map(|v| -v).collect();
        let mut slope = dot(&gx, &dir);
        if !(slope < 0.0) {
            pairs.clear();
            dir = gx.iter().map(|v| -v).collect();
            slope = -dot(&gx, &gx);
        }

        let mut step = if pairs.is_empty() {
            opts.initial_step / max_abs(&dir).max(1.0)
        } else {
            1.0
        };
        let mut accepted = None;
        for _ in 0..60 {
            let trial: Vec<f64> = x.iter().zip(&dir).map(|(xi, di)| xi + step * di).collect();
            let (ft, gt) = f(&trial);
            if ft.is_nan() {
                return Err(Error::Fit(format!("objective became NaN at step size {step:e}")));
            }
            if ft <= fx + 1e-4 * step * slope && ft < fx {
                accepted = Some((trial, ft, gt));
                break;
            }
            step *= 0.5;
        }
        let Some((xn, fn_, gn)) = accepted else {
            // no decrease possible along this direction
            converged = max_abs(&gx) < opts.grad_tol.sqrt();
            break;
        };
        let s: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
        let yv: Vec<f64> = gn.iter().zip(&gx).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &yv);
        if sy > 1e-16 {
            if pairs.len() == opts.memory {
                pairs.pop_front();
            }
            pairs.push_back((s, yv, 1.0 / sy));
        }
        x = xn;
        fx = fn_;
        gx = gn;
        history.push(fx);
        converged = max_abs(&gx) < opts.grad_tol;
    }

    Ok(Outcome {
        x,
        value: fx,
        iterations,
        converged,
        history,
    })
}
