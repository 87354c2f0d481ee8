//! Calibrated equalized-odds post-processing: the group with the lower
//! calibrated cost has a fraction of its scores replaced by its base rate
//! until the two costs meet.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CostConstraint {
    Weighted,
    Fpr,
    Fnr,
}

impl CostConstraint {
    fn rate_weights(self) -> (f64, f64) {
        match self {
            CostConstraint::Weighted => (1.0, 1.0),
            CostConstraint::Fpr => (1.0, 0.0),
            CostConstraint::Fnr => (0.0, 1.0),
        }
    }
}

impl fmt::Display for CostConstraint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CostConstraint::Weighted => "weighted",
            CostConstraint::Fpr => "fpr",
            CostConstraint::Fnr => "fnr",
        })
    }
}

impl FromStr for CostConstraint {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "weighted" => Ok(CostConstraint::Weighted),
            "fpr" => Ok(CostConstraint::Fpr),
            "fnr" => Ok(CostConstraint::Fnr),
            _ => Err(Error::InvalidArgument(format!("unknown cost constraint `{s}`"))),
        }
    }
}

/// Mixing grid `{0, 0.01, ..., 1}`.
pub const GRID_STEPS: usize = 100;
/// Costs closer than this fraction of the larger trivial cost count as equal.
pub const EQUALITY_TOLERANCE: f64 = 0.005;

/// Calibrated cost of `scores` against labels `y`: generalized false
/// positive and false negative rates weighted by the constraint.
pub fn group_cost(scores: &[f64], y: &[u8], cost: CostConstraint) -> f64 {
    let (fp_w, fn_w) = cost.rate_weights();
    let (mut neg, mut pos, mut gfp, mut gfn) = (0.0, 0.0, 0.0, 0.0);
    for (&s, &l) in scores.iter().zip(y) {
        if l == 1 {
            pos += 1.0;
            gfn += 1.0 - s;
        } else {
            neg += 1.0;
            gfp += s;
        }
    }
    let n = pos + neg;
    if n == 0.0 {
        return 0.0;
    }
    let base = pos / n;
    let gfpr = if neg > 0.0 { gfp / neg } else { 0.0 };
    let gfnr = if pos > 0.0 { gfn / pos } else { 0.0 };
    let norm = fp_w + fn_w;
    fp_w / norm * gfpr * (1.0 - base) + fn_w / norm * gfnr * base
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CeoModel {
    /// Indexed by group (0 = unprivileged).
    pub alpha: [f64; 2],
    pub base_rate: [f64; 2],
    pub cost: CostConstraint,
    pub costs: [f64; 2],
    pub trivial_costs: [f64; 2],
}

fn split(scores: &[f64], y: &[u8], g: &[u8], grp: u8) -> (Vec<f64>, Vec<u8>) {
    (0..g.len()).filter(|&i| g[i] == grp).map(|i| (scores[i], y[i])).unzip()
}

pub fn fit(scores: &[f64], y: &[u8], g: &[u8], cost: CostConstraint) -> Result<CeoModel> {
    if scores.len() != y.len() || g.len() != y.len() {
        return Err(Error::InvalidArgument("ceo: length mismatch".into()));
    }
    if scores.iter().any(|s| !(0.0..=1.0).contains(s)) {
        return Err(Error::InvalidArgument("ceo: scores must lie in [0, 1]".into()));
    }
    let mut base_rate = [0.0; 2];
    let mut costs = [0.0; 2];
    let mut trivial_costs = [0.0; 2];
    for grp in 0..2u8 {
        let (s, l) = split(scores, y, g, grp);
        if s.is_empty() {
            return Err(Error::Data(format!("ceo: group {grp} has no calibration rows")));
        }
        let k = usize::from(grp);
        base_rate[k] = l.iter().map(|&v| f64::from(v)).sum::<f64>() / l.len() as f64;
        costs[k] = group_cost(&s, &l, cost);
        trivial_costs[k] = group_cost(&vec![base_rate[k]; l.len()], &l, cost);
    }
    let mut alpha = [0.0; 2];
    let tol = EQUALITY_TOLERANCE * trivial_costs[0].max(trivial_costs[1]);
    if (costs[0] - costs[1]).abs() > tol * (1.0 + 1e-9) {
        // degrade the group with the lower cost
        let (lo, hi) = if costs[0] < costs[1] { (0, 1) } else { (1, 0) };
        alpha[lo] = best_alpha(costs[lo], trivial_costs[lo], costs[hi]);
    }
    Ok(CeoModel {
        alpha,
        base_rate,
        cost,
        costs,
        trivial_costs,
    })
}

/// Grid point minimizing `|(1 - a) c + a t - target|`; the first wins ties.
pub fn best_alpha(c: f64, t: f64, target: f64) -> f64 {
    let mut best = (f64::INFINITY, 0.0);
    for i in 0..=GRID_STEPS {
        let a = i as f64 / GRID_STEPS as f64;
        let gap = ((1.0 - a) * c + a * t - target).abs();
        if gap < best.0 {
            best = (gap, a);
        }
    }
    best.1
}

impl CeoModel {
    /// Expected adjusted scores `(1 - α) s + α base_rate`.
    pub fn expected_scores(&self, scores: &[f64], g: &[u8]) -> Vec<f64> {
        scores
            .iter()
            .zip(g)
            .map(|(&s, &grp)| {
                let k = usize::from(grp);
                (1.0 - self.alpha[k]) * s + self.alpha[k] * self.base_rate[k]
            })
            .collect()
    }

    /// Randomized mixing: each score of the degraded group is replaced by
    /// its base rate with probability α.
    pub fn apply(&self, scores: &[f64], g: &[u8], seed_: u64) -> Vec<f64> {
        let mut rng = seed::rng(seed_);
        scores
            .iter()
            .zip(g)
            .map(|(&s, &grp)| {
                let k = usize::from(grp);
                if self.alpha[k] > 0.0 && rng.random::<f64>() < self.alpha[k] {
                    self.base_rate[k]
                } else {
                    s
                }
            })
            .collect()
    }

    pub fn apply_labels(&self, scores: &[f64], g: &[u8], seed_: u64) -> Vec<u8> {
        self.apply(scores, g, seed_).into_iter().map(|s| u8::from(s > 0.5)).collect()
    }
}
