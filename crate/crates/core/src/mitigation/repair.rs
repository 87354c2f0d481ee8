//! Quantile-based feature repair toward the cross-group median distribution.

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Empirical quantile function of one group's values. Point `i` of the
/// sorted sample sits at position `(i + 0.5) / n`; positions in between are
/// interpolated linearly and positions outside are clamped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Quantiles {
    pub sorted: Vec<f64>,
}

impl Quantiles {
    pub fn new(mut values: Vec<f64>) -> Self {
        values.sort_by(f64::total_cmp);
        Quantiles { sorted: values }
    }

    fn n(&self) -> f64 {
        self.sorted.len() as f64
    }

    /// Value at position `u ∈ [0, 1]`.
    pub fn value_at(&self, u: f64) -> f64 {
        let s = &self.sorted;
        let t = u * self.n() - 0.5;
        if t <= 0.0 {
            return s[0];
        }
        let i = t.floor() as usize;
        if i + 1 >= s.len() {
            return s[s.len() - 1];
        }
        let frac = t - i as f64;
        s[i] + frac * (s[i + 1] - s[i])
    }

    /// Position of `x`; tied sample values share their mean position.
    pub fn position_of(&self, x: f64) -> f64 {
        let s = &self.sorted;
        let n = self.n();
        let lo = s.partition_point(|&v| v < x);
        let hi = s.partition_point(|&v| v <= x);
        if hi > lo {
            return (lo + hi) as f64 / (2.0 * n);
        }
        if lo == 0 {
            return 0.5 / n;
        }
        if lo == s.len() {
            return (n - 0.5) / n;
        }
        let (a, b) = (s[lo - 1], s[lo]);
        let frac = (x - a) / (b - a);
        (lo as f64 - 0.5 + frac) / n
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepairedColumn {
    pub column: usize,
    /// Indexed by group.
    pub groups: Vec<Quantiles>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepairModel {
    pub level: f64,
    pub columns: Vec<RepairedColumn>,
}

impl RepairModel {
    /// Fits on the columns flagged in `numeric`; the rest pass through.
    pub fn fit(x: ArrayView2<'_, f64>, g: &[u8], numeric: &[bool], level: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&level) {
            return Err(Error::InvalidArgument(format!("repair level {level} outside [0, 1]")));
        }
        if g.len() != x.nrows() || numeric.len() != x.ncols() {
            return Err(Error::InvalidArgument("repair: shape mismatch".into()));
        }
        for grp in 0..2u8 {
            if !g.contains(&grp) {
                return Err(Error::Data(format!("repair: group {grp} has no rows")));
            }
        }
        let columns = (0..x.ncols())
            .filter(|&j| numeric[j])
            .map(|j| RepairedColumn {
                column: j,
                groups: (0..2u8)
                    .map(|grp| {
                        Quantiles::new(
                            (0..x.nrows()).filter(|&i| g[i] == grp).map(|i| x[[i, j]]).collect(),
                        )
                    })
                    .collect(),
            })
            .collect();
        Ok(RepairModel { level, columns })
    }

    pub fn repair_value(&self, col: &RepairedColumn, x: f64, group: u8) -> f64 {
        let u = col.groups[usize::from(group)].position_of(x);
        let target = median(col.groups.iter().map(|q| q.value_at(u)).collect());
        (1.0 - self.level) * x + self.level * target
    }

    pub fn apply(&self, x: ArrayView2<'_, f64>, g: &[u8]) -> Result<Array2<f64>> {
        if g.len() != x.nrows() {
            return Err(Error::InvalidArgument("repair: group vector length mismatch".into()));
        }
        let mut out = x.to_owned();
        if self.level == 0.0 {
            return Ok(out);
        }
        for col in &self.columns {
            if col.column >= x.ncols() {
                return Err(Error::Width {
                    expected: col.column + 1,
                    actual: x.ncols(),
                });
            }
            for i in 0..x.nrows() {
                out[[i, col.column]] = self.repair_value(col, x[[i, col.column]], g[i]);
            }
        }
        Ok(out)
    }
}
