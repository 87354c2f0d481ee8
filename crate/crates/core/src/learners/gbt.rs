//! Gradient-boosted regression trees on the logistic loss.

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use super::cart::{self, CartParams, Node, Tree};
use super::logistic::{logit, sigmoid, weighted_base_rate};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GbtParams {
    pub n_rounds: usize,
    pub learning_rate: f64,
    pub max_depth: usize,
}

impl Default for GbtParams {
    fn default() -> Self {
        GbtParams {
            n_rounds: 50,
            learning_rate: 0.1,
            max_depth: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbtModel {
    pub init: f64,
    pub learning_rate: f64,
    pub trees: Vec<Tree>,
}

impl GbtModel {
    pub fn raw_score(&self, row: &[f64]) -> f64 {
        self.init
            + self
                .trees
                .iter()
                .map(|t| self.learning_rate * t.predict_row(row))
                .sum::<f64>()
    }

    pub fn proba_row(&self, row: &[f64]) -> f64 {
        sigmoid(self.raw_score(row))
    }
}

const LEAF_BOUND: f64 = 30.0;

/// Exact leaf step: the root of `sum w (y - sigmoid(f + gamma)) = 0`,
/// found by bisection and bounded to `±LEAF_BOUND`.
fn leaf_step(rows: &[usize], y: &[u8], w: &[f64], f: &[f64]) -> f64 {
    let resid = |gamma: f64| -> f64 {
        rows.iter()
            .map(|&r| w[r] * (f64::from(y[r]) - sigmoid(f[r] + gamma)))
            .sum()
    };
    let (mut lo, mut hi) = (-LEAF_BOUND, LEAF_BOUND);
    if resid(hi) >= 0.0 {
        return hi;
    }
    if resid(lo) <= 0.0 {
        return lo;
    }
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if resid(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

pub fn fit(x: ArrayView2<'_, f64>, y: &[u8], w: &[f64], params: &GbtParams) -> GbtModel {
    let n = y.len();
    let init = logit(weighted_base_rate(y, w));
    let mut f = vec![init; n];
    let rows: Vec<usize> = (0..n).filter(|&i| w[i] > 0.0).collect();
    let mut trees = Vec::with_capacity(params.n_rounds);
    for _ in 0..params.n_rounds {
        let resid: Vec<f64> = (0..n).map(|i| f64::from(y[i]) - sigmoid(f[i])).collect();
        let mut tree = cart::build(
            x,
            &resid,
            w,
            &rows,
            CartParams {
                max_depth: Some(params.max_depth),
                min_leaf: 1,
            },
            |_| 0.0,
        );
        // group rows by leaf, then replace leaf values with exact steps
        let mut members: Vec<Vec<usize>> = vec![Vec::new(); tree.nodes.len()];
        for &r in &rows {
            let row = x.row(r);
            members[tree.leaf_index(row.as_slice().unwrap_or(&row.to_vec()))].push(r);
        }
        for (idx, m) in members.iter().enumerate() {
            if matches!(tree.nodes[idx], Node::Leaf { .. }) {
                let v = if m.is_empty() { 0.0 } else { leaf_step(m, y, w, &f) };
                tree.set_leaf(idx, v);
            }
        }
        for i in 0..n {
            let row = x.row(i);
            f[i] += params.learning_rate * tree.predict_row(row.as_slice().unwrap_or(&row.to_vec()));
        }
        trees.push(tree);
    }
    GbtModel {
        init,
        learning_rate: params.learning_rate,
        trees,
    }
}
