use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-cell weights indexed `[group][label]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReweighingWeights {
    pub cells: [[f64; 2]; 2],
}

impl ReweighingWeights {
    pub fn weight(&self, group: u8, label: u8) -> f64 {
        self.cells[usize::from(group)][usize::from(label)]
    }

    pub fn expand(&self, y: &[u8], g: &[u8]) -> Vec<f64> {
        y.iter().zip(g).map(|(&l, &grp)| self.weight(grp, l)).collect()
    }
}

/// `w(g, l) = P(g) P(l) / P(g, l)` from (optionally weighted) counts.
pub fn reweigh(y: &[u8], g: &[u8], base: Option<&[f64]>) -> Result<ReweighingWeights> {
    if y.len() != g.len() || base.is_some_and(|b| b.len() != y.len()) {
        return Err(Error::InvalidArgument("reweigh: length mismatch".into()));
    }
    let mut joint = [[0.0; 2]; 2];
    for i in 0..y.len() {
        joint[usize::from(g[i])][usize::from(y[i])] += base.map_or(1.0, |b| b[i]);
    }
    let total: f64 = joint.iter().flatten().sum();
    if total <= 0.0 {
        return Err(Error::InvalidArgument("reweigh: no weighted rows".into()));
    }
    let pg = [joint[0][0] + joint[0][1], joint[1][0] + joint[1][1]];
    let pl = [joint[0][0] + joint[1][0], joint[0][1] + joint[1][1]];
    let mut cells = [[1.0; 2]; 2];
    for grp in 0..2 {
        for l in 0..2 {
            if joint[grp][l] > 0.0 {
                cells[grp][l] = pg[grp] * pl[l] / (total * joint[grp][l]);
            } else {
                warn!("reweigh: empty cell (group {grp}, label {l}); weight set to 1");
            }
        }
    }
    Ok(ReweighingWeights { cells })
}
