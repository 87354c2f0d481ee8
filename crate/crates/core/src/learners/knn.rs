use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KnnParams {
    pub k: usize,
}

impl Default for KnnParams {
    fn default() -> Self {
        KnnParams { k: 5 }
    }
}

/// Stores the training set; probabilities are weighted vote fractions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnnModel {
    pub k: usize,
    pub x: Array2<f64>,
    pub y: Vec<u8>,
    pub w: Vec<f64>,
}

impl KnnModel {
    pub fn fit(x: ArrayView2<'_, f64>, y: &[u8], w: &[f64], params: &KnnParams) -> Self {
        KnnModel {
            k: params.k,
            x: x.to_owned(),
            y: y.to_vec(),
            w: w.to_vec(),
        }
    }

    /// Neighbors sorted by (distance, training row index).
    pub fn neighbors(&self, row: &[f64]) -> Vec<usize> {
        let mut d: Vec<(f64, usize)> = self
            .x
            .rows()
            .into_iter()
            .enumerate()
            .map(|(i, t)| {
                let dist: f64 = t.iter().zip(row).map(|(a, b)| (a - b) * (a - b)).sum();
                (dist, i)
            })
            .collect();
        let k = self.k.min(d.len());
        let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
        if k < d.len() {
            d.select_nth_unstable_by(k - 1, cmp);
            d.truncate(k);
        }
        d.sort_by(cmp);
        d.into_iter().map(|(_, i)| i).collect()
    }

    pub fn proba_row(&self, row: &[f64]) -> f64 {
        let nb = self.neighbors(row);
        let tw: f64 = nb.iter().map(|&i| self.w[i]).sum();
        if tw > 0.0 {
            nb.iter().map(|&i| self.w[i] * f64::from(self.y[i])).sum::<f64>() / tw
        } else {
            nb.iter().map(|&i| f64::from(self.y[i])).sum::<f64>() / nb.len() as f64
        }
    }
}
