use std::fmt;

use serde::{Deserialize, Serialize};

use crate::composition::expr::{Expr, VoteMode};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Rule {
    /// In-estimator mitigator wrapped around another estimator.
    R1,
    /// Post-mitigated member under soft voting.
    R2,
    /// Mitigated stacking final estimator without passthrough.
    R3,
    /// Stacking with mitigated members and a mitigated final estimator.
    R4,
    /// More than one mitigation point on a root-to-leaf path.
    R5,
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("infeasible pipeline ({rule}) at {path}: {message}")]
pub struct FeasibilityError {
    pub rule: Rule,
    pub message: String,
    /// Location of the offending node, e.g. `$.inner.members[1]`.
    pub path: String,
}

fn child_paths<'a>(e: &'a Expr, path: &str) -> Vec<(&'a Expr, String)> {
    match e {
        Expr::Learner(_) | Expr::In { inner: None, .. } => Vec::new(),
        Expr::In { inner: Some(i), .. } => vec![(&**i, format!("{path}.inner"))],
        Expr::Pre { inner, .. } | Expr::Post { inner, .. } | Expr::Bag { inner, .. } | Expr::Boost { inner, .. } => {
            vec![(&**inner, format!("{path}.inner"))]
        }
        Expr::Vote { members, .. } => members
            .iter()
            .enumerate()
            .map(|(i, m)| (m, format!("{path}.members[{i}]")))
            .collect(),
        Expr::Stack {
            members,
            final_estimator,
            ..
        } => {
            let mut v: Vec<(&Expr, String)> = members
                .iter()
                .enumerate()
                .map(|(i, m)| (m, format!("{path}.members[{i}]")))
                .collect();
            v.push((&**final_estimator, format!("{path}.final")));
            v
        }
    }
}

/// Pre-order search for the first node violating `check`.
fn find(e: &Expr, path: &str, check: &dyn Fn(&Expr, &str) -> Option<FeasibilityError>) -> Option<FeasibilityError> {
    if let Some(err) = check(e, path) {
        return Some(err);
    }
    child_paths(e, path).into_iter().find_map(|(c, p)| find(c, &p, check))
}

fn max_points(e: &Expr) -> usize {
    let here = usize::from(e.mitigator().is_some());
    here + e.children().into_iter().map(max_points).max().unwrap_or(0)
}

fn err(rule: Rule, path: &str, message: impl Into<String>) -> Option<FeasibilityError> {
    Some(FeasibilityError {
        rule,
        message: message.into(),
        path: path.to_string(),
    })
}

/// Checks the structural feasibility rules, returning the first violated
/// rule in R1..R5 order. Leaf learner choices never matter.
pub fn validate(e: &Expr) -> Result<(), FeasibilityError> {
    let checks: [&dyn Fn(&Expr, &str) -> Option<FeasibilityError>; 5] = [
        &|e, p| match e {
            Expr::In { inner: Some(_), .. } => {
                err(Rule::R1, p, "an in-estimator mitigator is itself an estimator and cannot wrap another")
            }
            _ => None,
        },
        &|e, p| match e {
            Expr::Vote {
                members,
                mode: VoteMode::Soft,
            } if members.iter().any(Expr::contains_post) => {
                err(Rule::R2, p, "soft voting needs probabilities, which post-estimator mitigators do not provide")
            }
            _ => None,
        },
        &|e, p| match e {
            Expr::Stack {
                final_estimator,
                passthrough: false,
                ..
            } if final_estimator.is_mitigated() => {
                err(Rule::R3, p, "the final estimator cannot be mitigated without passthrough of dataset features")
            }
            _ => None,
        },
        &|e, p| match e {
            Expr::Stack {
                members,
                final_estimator,
                ..
            } if final_estimator.is_mitigated() && members.iter().any(Expr::is_mitigated) => {
                err(Rule::R4, p, "mitigate either the base estimators or the final estimator, not both")
            }
            _ => None,
        },
        &|e, p| {
            if e.mitigator().is_some() && max_points(e) > 1 {
                err(Rule::R5, p, "more than one mitigation point on a path")
            } else {
                None
            }
        },
    ];
    for check in checks {
        if let Some(e) = find(e, "$", check) {
            return Err(e);
        }
    }
    Ok(())
}
