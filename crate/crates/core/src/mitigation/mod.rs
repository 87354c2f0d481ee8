//! Pre-, in- and post-estimator bias mitigators.

pub mod ceo;
pub mod lfr;
pub mod prejudice;
pub mod repair;
pub mod reweigh;

use std::fmt;

use serde::{Deserialize, Serialize};

pub use ceo::{CeoModel, CostConstraint};
pub use lfr::{LfrModel, LfrParams};
pub use prejudice::{PrejudiceParams, PrejudiceRemoverModel};
pub use repair::RepairModel;
pub use reweigh::{reweigh, ReweighingWeights};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MitigatorKind {
    Pre,
    In,
    Post,
}

impl fmt::Display for MitigatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MitigatorKind::Pre => "pre",
            MitigatorKind::In => "in",
            MitigatorKind::Post => "post",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mitigator", rename_all = "snake_case")]
pub enum MitigatorSpec {
    Reweigh,
    Dir { level: f64 },
    Lfr(LfrParams),
    Pr(PrejudiceParams),
    Ceo { cost: CostConstraint },
}

impl MitigatorSpec {
    pub fn kind(&self) -> MitigatorKind {
        match self {
            MitigatorSpec::Reweigh | MitigatorSpec::Dir { .. } | MitigatorSpec::Lfr(_) => MitigatorKind::Pre,
            MitigatorSpec::Pr(_) => MitigatorKind::In,
            MitigatorSpec::Ceo { .. } => MitigatorKind::Post,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            MitigatorSpec::Reweigh => "Reweigh",
            MitigatorSpec::Dir { .. } => "DIR",
            MitigatorSpec::Lfr(_) => "LFR",
            MitigatorSpec::Pr(_) => "PR",
            MitigatorSpec::Ceo { .. } => "CEO",
        }
    }

    /// Whether this mitigator needs the group column at prediction time.
    pub fn needs_group_at_predict(&self) -> bool {
        matches!(self, MitigatorSpec::Dir { .. } | MitigatorSpec::Ceo { .. })
    }
}

impl fmt::Display for MitigatorSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MitigatorSpec::Reweigh => f.write_str("Reweigh"),
            MitigatorSpec::Dir { level } => write!(f, "DIR({level})"),
            MitigatorSpec::Lfr(p) => {
                write!(f, "LFR(k={}, Ax={}, Ay={}, Az={}", p.k, p.ax, p.ay, p.az)?;
                let d = LfrParams::default();
                if p.max_iter != d.max_iter {
                    write!(f, ", max_iter={}", p.max_iter)?;
                }
                if p.restarts != d.restarts {
                    write!(f, ", restarts={}", p.restarts)?;
                }
                f.write_str(")")
            }
            MitigatorSpec::Pr(p) => {
                write!(f, "PR(eta={}", p.eta)?;
                let d = PrejudiceParams::default();
                if p.l2 != d.l2 {
                    write!(f, ", l2={}", p.l2)?;
                }
                if p.max_iter != d.max_iter {
                    write!(f, ", max_iter={}", p.max_iter)?;
                }
                f.write_str(")")
            }
            MitigatorSpec::Ceo { cost } => write!(f, "CEO(cost={cost})"),
        }
    }
}
