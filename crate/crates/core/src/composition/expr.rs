use std::fmt;

use serde::{Deserialize, Serialize};

use crate::learners::{Capabilities, LearnerSpec};
use crate::mitigation::{MitigatorKind, MitigatorSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VoteMode {
    Hard,
    Soft,
}

impl fmt::Display for VoteMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            VoteMode::Hard => "hard",
            VoteMode::Soft => "soft",
        })
    }
}

/// A pipeline. Its `Display` form is the canonical pipeline identifier and
/// parses back to an equal value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Expr {
    Learner(LearnerSpec),
    Pre {
        mitigator: MitigatorSpec,
        inner: Box<Expr>,
    },
    /// An in-estimator mitigator. A wrapped `inner` is never feasible and
    /// exists so the rule against it can be reported.
    In {
        mitigator: MitigatorSpec,
        inner: Option<Box<Expr>>,
    },
    Post {
        mitigator: MitigatorSpec,
        inner: Box<Expr>,
    },
    Bag {
        inner: Box<Expr>,
        n: usize,
        bootstrap: bool,
    },
    Boost {
        inner: Box<Expr>,
        n: usize,
    },
    Vote {
        members: Vec<Expr>,
        mode: VoteMode,
    },
    Stack {
        members: Vec<Expr>,
        final_estimator: Box<Expr>,
        passthrough: bool,
    },
}

fn list(f: &mut fmt::Formatter<'_>, members: &[Expr]) -> fmt::Result {
    f.write_str("[")?;
    for (i, m) in members.iter().enumerate() {
        if i > 0 {
            f.write_str(", ")?;
        }
        write!(f, "{m}")?;
    }
    f.write_str("]")
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Learner(spec) => write!(f, "{spec}"),
            Expr::Pre { mitigator, inner } => write!(f, "Pr({mitigator}, {inner})"),
            Expr::In { mitigator, inner: None } => write!(f, "{mitigator}"),
            Expr::In {
                mitigator,
                inner: Some(inner),
            } => write!(f, "In({mitigator}, {inner})"),
            Expr::Post { mitigator, inner } => write!(f, "Post({mitigator}, {inner})"),
            Expr::Bag { inner, n, bootstrap } => {
                write!(f, "Bag({inner}, {n}")?;
                if !bootstrap {
                    f.write_str(", bootstrap=false")?;
                }
                f.write_str(")")
            }
            Expr::Boost { inner, n } => write!(f, "Boost({inner}, {n})"),
            Expr::Vote { members, mode } => {
                f.write_str("Vote(")?;
                list(f, members)?;
                write!(f, ", {mode})")
            }
            Expr::Stack {
                members,
                final_estimator,
                passthrough,
            } => {
                f.write_str("Stack(")?;
                list(f, members)?;
                write!(f, ", {final_estimator}, passthrough={passthrough})")
            }
        }
    }
}

impl Expr {
    pub fn learner(spec: LearnerSpec) -> Self {
        Expr::Learner(spec)
    }

    pub fn children(&self) -> Vec<&Expr> {
        match self {
            Expr::Learner(_) | Expr::In { inner: None, .. } => Vec::new(),
            Expr::In { inner: Some(i), .. } => vec![i],
            Expr::Pre { inner, .. } | Expr::Post { inner, .. } | Expr::Bag { inner, .. } | Expr::Boost { inner, .. } => {
                vec![inner]
            }
            Expr::Vote { members, .. } => members.iter().collect(),
            Expr::Stack {
                members,
                final_estimator,
                ..
            } => members.iter().chain(std::iter::once(&**final_estimator)).collect(),
        }
    }

    /// The mitigator at this node, if the node is a mitigation point.
    pub fn mitigator(&self) -> Option<&MitigatorSpec> {
        match self {
            Expr::Pre { mitigator, .. } | Expr::In { mitigator, .. } | Expr::Post { mitigator, .. } => Some(mitigator),
            _ => None,
        }
    }

    /// All mitigators in the tree, in pre-order.
    pub fn mitigators(&self) -> Vec<&MitigatorSpec> {
        let mut out = Vec::new();
        fn walk<'a>(e: &'a Expr, out: &mut Vec<&'a MitigatorSpec>) {
            if let Some(m) = e.mitigator() {
                out.push(m);
            }
            for c in e.children() {
                walk(c, out);
            }
        }
        walk(self, &mut out);
        out
    }

    pub fn is_mitigated(&self) -> bool {
        self.mitigator().is_some() || self.children().iter().any(|c| c.is_mitigated())
    }

    pub fn contains_post(&self) -> bool {
        matches!(self, Expr::Post { .. }) || self.children().iter().any(|c| c.contains_post())
    }

    /// The single mitigator kind used, if all mitigators share one.
    pub fn mitigator_kind(&self) -> Option<MitigatorKind> {
        let kinds: Vec<MitigatorKind> = self.mitigators().iter().map(|m| m.kind()).collect();
        match kinds.first() {
            Some(&k) if kinds.iter().all(|&o| o == k) => Some(k),
            _ => None,
        }
    }

    /// True when the group column is needed at prediction time.
    pub fn needs_group(&self) -> bool {
        self.mitigator().is_some_and(|m| m.needs_group_at_predict()) || self.children().iter().any(|c| c.needs_group())
    }

    pub fn capabilities(&self) -> Capabilities {
        let all = |es: &[&Expr], f: fn(&Capabilities) -> bool| es.iter().all(|e| f(&e.capabilities()));
        match self {
            Expr::Learner(spec) => spec.kind().capabilities(),
            Expr::Pre { inner, .. } => inner.capabilities(),
            Expr::In { .. } => Capabilities {
                supports_proba: true,
                supports_weights: true,
            },
            Expr::Post { inner, .. } => Capabilities {
                supports_proba: false,
                supports_weights: inner.capabilities().supports_weights,
            },
            Expr::Bag { inner, .. } => Capabilities {
                supports_proba: inner.capabilities().supports_proba,
                supports_weights: true,
            },
            Expr::Boost { .. } => Capabilities {
                supports_proba: true,
                supports_weights: true,
            },
            Expr::Vote { members, mode } => {
                let ms: Vec<&Expr> = members.iter().collect();
                Capabilities {
                    supports_proba: *mode == VoteMode::Soft,
                    supports_weights: all(&ms, |c| c.supports_weights),
                }
            }
            Expr::Stack {
                members,
                final_estimator,
                ..
            } => {
                let mut es: Vec<&Expr> = members.iter().collect();
                es.push(final_estimator);
                Capabilities {
                    supports_proba: final_estimator.capabilities().supports_proba,
                    supports_weights: all(&es, |c| c.supports_weights),
                }
            }
        }
    }
}
