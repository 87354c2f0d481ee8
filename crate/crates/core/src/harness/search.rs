use std::collections::BTreeMap;
use std::sync::{mpsc, Arc};
use std::time::{Duration, Instant};

use rand::Rng as _;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

use crate::composition::{parse, validate, Expr};
use crate::dataset::Dataset;
use crate::harness::cv::{run_cv, CvConfig};
use crate::harness::store::TrialRecord;
use crate::learners::{LearnerKind, LearnerSpec};
use crate::metrics::{classification_metrics, mean, symmetric_di, DisparateImpact, ScorerRefs};
use crate::seed;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ParamRange {
    Int { lo: i64, hi: i64 },
    Real { lo: f64, hi: f64 },
    /// Uniform in log space; both bounds positive.
    LogReal { lo: f64, hi: f64 },
    Choice { values: Vec<String> },
}

fn round_sig(v: f64, digits: i32) -> f64 {
    if v == 0.0 || !v.is_finite() {
        return v;
    }
    let scale = 10f64.powi(digits - 1 - v.abs().log10().floor() as i32);
    (v * scale).round() / scale
}

impl ParamRange {
    /// Value at position `u` in [0, 1].
    pub fn decode(&self, u: f64) -> String {
        let u = u.clamp(0.0, 1.0);
        match self {
            ParamRange::Int { lo, hi } => {
                let span = (hi - lo + 1) as f64;
                (lo + ((u * span).floor() as i64).min(hi - lo)).to_string()
            }
            ParamRange::Real { lo, hi } => round_sig(lo + u * (hi - lo), 4).to_string(),
            ParamRange::LogReal { lo, hi } => {
                round_sig((lo.ln() + u * (hi.ln() - lo.ln())).exp(), 4).to_string()
            }
            ParamRange::Choice { values } => {
                let i = ((u * values.len() as f64).floor() as usize).min(values.len() - 1);
                values[i].clone()
            }
        }
    }

    fn check(&self, name: &str) -> Result<()> {
        let ok = match self {
            ParamRange::Int { lo, hi } => lo <= hi,
            ParamRange::Real { lo, hi } => lo <= hi,
            ParamRange::LogReal { lo, hi } => *lo > 0.0 && lo <= hi,
            ParamRange::Choice { values } => !values.is_empty(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("bad range for search parameter `{name}`")))
        }
    }
}

/// Pipeline templates with `{name}` placeholders filled from `params`.
/// Choice values may themselves contain placeholders.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub templates: Vec<String>,
    #[serde(default)]
    pub params: BTreeMap<String, ParamRange>,
}

const PALETTE: &str = "[gbt, tree, knn, logreg]";

impl Default for SearchSpace {
    fn default() -> Self {
        let templates = [
            "{learner}",
            "Pr({pre}, {learner})",
            "{in}",
            "Post({post}, {learner})",
            "Bag({learner}, {bag})",
            "Bag(Pr({pre}, {learner}), {bag})",
            "Pr({pre}, Bag({learner}, {bag}))",
            "Bag({in}, {bag})",
            "Post({post}, Bag({learner}, {bag}))",
            "Bag(Post({post}, {learner}), {bag})",
            "Boost({learner}, {boost})",
            "Boost(Pr({pre}, {learner}), {boost})",
            "Pr({pre}, Boost({learner}, {boost}))",
            "Boost({in}, {boost})",
            "Post({post}, Boost({learner}, {boost}))",
            "Vote({palette}, {mode})",
            "Pr({pre}, Vote({palette}, {mode}))",
            "Post({post}, Vote({palette}, hard))",
            "Stack({palette}, {final}, passthrough={pass})",
            "Pr({pre}, Stack({palette}, gbt, passthrough={pass}))",
            "Stack({palette}, Pr({pre}, {learner}), passthrough=true)",
            "Post({post}, Stack({palette}, gbt, passthrough={pass}))",
        ];
        let choice = |v: &[&str]| ParamRange::Choice {
            values: v.iter().map(|s| s.to_string()).collect(),
        };
        let params = BTreeMap::from([
            (
                "learner".to_string(),
                choice(&[
                    "tree(max_depth={depth})",
                    "logreg(l2={l2})",
                    "knn(k={k})",
                    "gbt(n_rounds={rounds}, max_depth={gdepth})",
                ]),
            ),
            ("depth".into(), ParamRange::Int { lo: 1, hi: 12 }),
            ("l2".into(), ParamRange::LogReal { lo: 1e-4, hi: 10.0 }),
            ("k".into(), ParamRange::Int { lo: 1, hi: 25 }),
            ("rounds".into(), ParamRange::Int { lo: 10, hi: 150 }),
            ("gdepth".into(), ParamRange::Int { lo: 1, hi: 4 }),
            (
                "pre".into(),
                choice(&["Reweigh", "DIR({level})", "LFR(k=5, Ax=0.01, Ay={ay}, Az={az})"]),
            ),
            ("level".into(), ParamRange::Real { lo: 0.0, hi: 1.0 }),
            ("ay".into(), ParamRange::LogReal { lo: 0.1, hi: 10.0 }),
            ("az".into(), ParamRange::LogReal { lo: 1.0, hi: 100.0 }),
            ("in".into(), choice(&["PR(eta={eta})"])),
            ("eta".into(), ParamRange::LogReal { lo: 0.1, hi: 1000.0 }),
            ("post".into(), choice(&["CEO(cost=weighted)", "CEO(cost=fpr)", "CEO(cost=fnr)"])),
            ("bag".into(), ParamRange::Int { lo: 2, hi: 50 }),
            ("boost".into(), ParamRange::Int { lo: 2, hi: 100 }),
            ("mode".into(), choice(&["hard", "soft"])),
            ("pass".into(), choice(&["true", "false"])),
            ("final".into(), choice(&["gbt", "logreg", "tree"])),
            ("palette".into(), choice(&[PALETTE])),
        ]);
        SearchSpace {
            templates: templates.iter().map(|s| s.to_string()).collect(),
            params,
        }
    }
}

/// A point in the space: template index plus one unit coordinate per
/// parameter, in parameter-name order.
#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub template: usize,
    pub units: Vec<f64>,
}

impl SearchSpace {
    pub fn check(&self) -> Result<()> {
        if self.templates.is_empty() {
            return Err(Error::InvalidArgument("search space has no templates".into()));
        }
        for (name, r) in &self.params {
            r.check(name)?;
        }
        Ok(())
    }

    pub fn sample(&self, rng: &mut seed::Rng) -> Config {
        Config {
            template: rng.random_range(0..self.templates.len()),
            units: self.params.keys().map(|_| rng.random::<f64>()).collect(),
        }
    }

    pub fn render(&self, c: &Config) -> String {
        let values: Vec<(String, String)> = self
            .params
            .iter()
            .zip(&c.units)
            .map(|((name, r), &u)| (format!("{{{name}}}"), r.decode(u)))
            .collect();
        let mut text = self.templates[c.template].clone();
        // Choice values can introduce further placeholders.
        for _ in 0..8 {
            let before = text.clone();
            for (key, v) in &values {
                text = text.replace(key, v);
            }
            if text == before {
                break;
            }
        }
        text
    }

    /// Surrogate-model features: template one-hot, then the unit coordinates.
    fn features(&self, c: &Config) -> Vec<f64> {
        let mut f = vec![0.0; self.templates.len()];
        f[c.template] = 1.0;
        f.extend_from_slice(&c.units);
        f
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchBudget {
    pub max_trials: usize,
    pub trial_timeout_secs: f64,
    pub total_timeout_secs: f64,
    pub master_seed: u64,
    /// Model-based proposals after the initial random trials.
    pub adaptive: bool,
    pub n_initial: usize,
    pub folds: usize,
}

impl Default for SearchBudget {
    fn default() -> Self {
        SearchBudget {
            max_trials: 50,
            trial_timeout_secs: 60.0,
            total_timeout_secs: 1200.0,
            master_seed: 0,
            adaptive: false,
            n_initial: 5,
            folds: 3,
        }
    }
}

impl SearchBudget {
    pub fn check(&self) -> Result<()> {
        if self.max_trials == 0
            || !(self.trial_timeout_secs > 0.0)
            || !(self.total_timeout_secs > 0.0)
            || self.folds < 2
        {
            return Err(Error::InvalidArgument(
                "search budget needs positive trials and timeouts and at least 2 folds".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchTrial {
    pub index: usize,
    pub pipeline: String,
    pub score: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub dataset: String,
    pub best_pipeline: String,
    pub best_score: f64,
    pub best_records: Vec<TrialRecord>,
    pub trials: Vec<SearchTrial>,
}

/// Reference points for the blended score on a dataset: symmetric DI of the
/// labels, F1 of always predicting favorable, and the cross-validated F1 of a
/// default boosted-tree model.
pub fn dataset_refs(ds: &Dataset, master_seed: u64) -> Result<ScorerRefs> {
    let min_di = symmetric_di(&ds.baseline_di());
    let min_f1 = classification_metrics(&ds.y, &vec![1; ds.y.len()]).f1;
    let gbt = Expr::Learner(LearnerSpec::default_for(LearnerKind::GradientBoostedTrees));
    let cfg = CvConfig {
        n_trials: 1,
        k: 3,
        master_seed,
        ..CvConfig::default()
    };
    let recs = run_cv(&gbt, ds, &cfg)?;
    let max_f1 = mean(&recs.iter().map(|r| r.metrics.f1).collect::<Vec<_>>());
    ScorerRefs::new(min_di, min_f1, max_f1)
}

/// Mean blended score over the records' folds.
pub fn cv_blended_score(records: &[TrialRecord], refs: &ScorerRefs) -> Result<f64> {
    let scores = records
        .iter()
        .map(|r| refs.score(symmetric_di(&DisparateImpact::from_option(r.metrics.di)), r.metrics.f1))
        .collect::<Result<Vec<f64>>>()?;
    Ok(mean(&scores))
}

fn evaluate(
    text: &str,
    ds: &Arc<Dataset>,
    budget: &SearchBudget,
    refs: &ScorerRefs,
    timeout: Duration,
) -> std::result::Result<(f64, Vec<TrialRecord>), String> {
    let expr = parse(text).map_err(|e| e.to_string())?;
    validate(&expr).map_err(|e| e.to_string())?;
    let cfg = CvConfig {
        n_trials: 1,
        k: budget.folds,
        master_seed: budget.master_seed,
        ..CvConfig::default()
    };
    let (tx, rx) = mpsc::channel();
    let ds = Arc::clone(ds);
    let refs = *refs;
    // A timed-out worker cannot be cancelled; it is left to finish and its
    // result is dropped.
    std::thread::spawn(move || {
        let out = run_cv(&expr, &ds, &cfg).and_then(|recs| Ok((cv_blended_score(&recs, &refs)?, recs)));
        let _ = tx.send(out);
    });
    match rx.recv_timeout(timeout) {
        Ok(Ok(v)) => Ok(v),
        Ok(Err(e)) => Err(e.to_string()),
        Err(_) => Err(format!("timed out after {:.1}s", timeout.as_secs_f64())),
    }
}

struct Gp {
    xs: Vec<Vec<f64>>,
    alpha: Vec<f64>,
    chol: Vec<Vec<f64>>,
    y_mean: f64,
    y_std: f64,
    length: f64,
}

fn kernel(a: &[f64], b: &[f64], length: f64) -> f64 {
    let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    (-d2 / (2.0 * length * length)).exp()
}

fn cholesky(k: &[Vec<f64>]) -> Option<Vec<Vec<f64>>> {
    let n = k.len();
    let mut l = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..=i {
            let s: f64 = (0..j).map(|p| l[i][p] * l[j][p]).sum();
            if i == j {
                let d = k[i][i] - s;
                if d <= 0.0 {
                    return None;
                }
                l[i][i] = d.sqrt();
            } else {
                l[i][j] = (k[i][j] - s) / l[j][j];
            }
        }
    }
    Some(l)
}

fn forward(l: &[Vec<f64>], b: &[f64]) -> Vec<f64> {
    let mut x = vec![0.0; b.len()];
    for i in 0..b.len() {
        x[i] = (b[i] - (0..i).map(|p| l[i][p] * x[p]).sum::<f64>()) / l[i][i];
    }
    x
}

fn backward(l: &[Vec<f64>], b: &[f64]) -> Vec<f64> {
    let n = b.len();
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        x[i] = (b[i] - (i + 1..n).map(|p| l[p][i] * x[p]).sum::<f64>()) / l[i][i];
    }
    x
}

impl Gp {
    fn fit(xs: Vec<Vec<f64>>, ys: &[f64]) -> Option<Gp> {
        let dim = xs.first()?.len() as f64;
        let length = 0.25 * dim.sqrt().max(1.0);
        let y_mean = mean(ys);
        let sd = crate::metrics::std_dev(ys);
        let y_std = if sd > 1e-12 { sd } else { 1.0 };
        let z: Vec<f64> = ys.iter().map(|y| (y - y_mean) / y_std).collect();
        let k: Vec<Vec<f64>> = xs
            .iter()
            .enumerate()
            .map(|(i, a)| {
                xs.iter()
                    .enumerate()
                    .map(|(j, b)| kernel(a, b, length) + if i == j { 1e-4 } else { 0.0 })
                    .collect()
            })
            .collect();
        let chol = cholesky(&k)?;
        let alpha = backward(&chol, &forward(&chol, &z));
        Some(Gp {
            xs,
            alpha,
            chol,
            y_mean,
            y_std,
            length,
        })
    }

    /// Posterior mean and standard deviation on the original scale.
    fn predict(&self, x: &[f64]) -> (f64, f64) {
        let ks: Vec<f64> = self.xs.iter().map(|a| kernel(a, x, self.length)).collect();
        let mu: f64 = ks.iter().zip(&self.alpha).map(|(k, a)| k * a).sum();
        let v = forward(&self.chol, &ks);
        let var = (1.0 - v.iter().map(|t| t * t).sum::<f64>()).max(1e-12);
        (self.y_mean + self.y_std * mu, self.y_std * var.sqrt())
    }
}

fn expected_improvement(mu: f64, sigma: f64, best: f64) -> f64 {
    let n = Normal::standard();
    let d = mu - best - 0.01;
    let z = d / sigma;
    d * n.cdf(z) + sigma * n.pdf(z)
}

const EI_CANDIDATES: usize = 256;

/// Maximizes the cross-validated blended score over the space.
///
/// Random mode samples configurations from a seeded stream. Adaptive mode
/// samples `n_initial` configurations at random, then proposes the candidate
/// with the largest expected improvement under a Gaussian-process surrogate.
/// A configuration whose text was already evaluated reuses its score.
pub fn auto_search(ds: &Dataset, space: &SearchSpace, budget: &SearchBudget, refs: &ScorerRefs) -> Result<SearchResult> {
    space.check()?;
    budget.check()?;
    let start = Instant::now();
    let total = Duration::from_secs_f64(budget.total_timeout_secs);
    let per_trial = Duration::from_secs_f64(budget.trial_timeout_secs);
    let shared = Arc::new(ds.clone());
    let mut rng = seed::rng(seed::derive(budget.master_seed, &[&ds.name, "search"]));
    let mut trials: Vec<SearchTrial> = Vec::new();
    let mut observed: Vec<(Config, f64)> = Vec::new();
    let mut cache: BTreeMap<String, std::result::Result<(f64, Vec<TrialRecord>), String>> = BTreeMap::new();
    let mut best: Option<(String, f64)> = None;

    for index in 0..budget.max_trials {
        let elapsed = start.elapsed();
        if elapsed >= total {
            log::warn!("{}: total search time exhausted after {index} trials", ds.name);
            break;
        }
        let config = if budget.adaptive && observed.len() >= budget.n_initial.max(1) {
            let xs = observed.iter().map(|(c, _)| space.features(c)).collect();
            let ys: Vec<f64> = observed.iter().map(|(_, s)| *s).collect();
            let incumbent = ys.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let cands: Vec<Config> = (0..EI_CANDIDATES).map(|_| space.sample(&mut rng)).collect();
            match Gp::fit(xs, &ys) {
                Some(gp) => {
                    let mut pick = 0;
                    let mut pick_ei = f64::NEG_INFINITY;
                    for (i, c) in cands.iter().enumerate() {
                        let (mu, sd) = gp.predict(&space.features(c));
                        let ei = expected_improvement(mu, sd, incumbent);
                        if ei > pick_ei {
                            pick_ei = ei;
                            pick = i;
                        }
                    }
                    cands[pick].clone()
                }
                None => cands[0].clone(),
            }
        } else {
            space.sample(&mut rng)
        };
        let raw = space.render(&config);
        let text = parse(&raw).map(|e| e.to_string()).unwrap_or(raw);
        let outcome = match cache.get(&text) {
            Some(o) => o.clone(),
            None => {
                let timeout = per_trial.min(total.saturating_sub(elapsed));
                let o = evaluate(&text, &shared, budget, refs, timeout);
                cache.insert(text.clone(), o.clone());
                o
            }
        };
        match outcome {
            Ok((score, _)) => {
                log::info!("{}: trial {index} `{text}` scored {score:.4}", ds.name);
                observed.push((config, score));
                if best.as_ref().is_none_or(|(_, b)| score > *b) {
                    best = Some((text.clone(), score));
                }
                trials.push(SearchTrial {
                    index,
                    pipeline: text,
                    score: Some(score),
                    error: None,
                });
            }
            Err(e) => {
                log::warn!("{}: trial {index} `{text}` failed: {e}", ds.name);
                trials.push(SearchTrial {
                    index,
                    pipeline: text,
                    score: None,
                    error: Some(e),
                });
            }
        }
    }
    let Some((best_pipeline, best_score)) = best else {
        return Err(Error::Search(format!("{}: no trial completed", ds.name)));
    };
    let best_records = match &cache[&best_pipeline] {
        Ok((_, r)) => r.clone(),
        Err(_) => unreachable!("best pipeline has a score"),
    };
    Ok(SearchResult {
        dataset: ds.name.clone(),
        best_pipeline,
        best_score,
        best_records,
        trials,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decode_covers_bounds() {
        let r = ParamRange::Int { lo: 1, hi: 3 };
        assert_eq!(r.decode(0.0), "1");
        assert_eq!(r.decode(0.5), "2");
        assert_eq!(r.decode(1.0), "3");
        let r = ParamRange::LogReal { lo: 0.1, hi: 1000.0 };
        assert_eq!(r.decode(0.0), "0.1");
        assert_eq!(r.decode(1.0), "1000");
        let r = ParamRange::Choice {
            values: vec!["a".into(), "b".into()],
        };
        assert_eq!(r.decode(0.49), "a");
        assert_eq!(r.decode(1.0), "b");
    }

    #[test]
    fn default_space_renders_parseable_pipelines() {
        let space = SearchSpace::default();
        let mut rng = seed::rng(3);
        for _ in 0..300 {
            let c = space.sample(&mut rng);
            let text = space.render(&c);
            assert!(!text.contains('{'), "{text}");
            let e = parse(&text).unwrap_or_else(|err| panic!("{text}: {err}"));
            validate(&e).unwrap_or_else(|err| panic!("{text}: {err}"));
        }
    }

    #[test]
    fn gp_interpolates_observations() {
        let xs = vec![vec![0.0], vec![0.5], vec![1.0]];
        let gp = Gp::fit(xs, &[1.0, 3.0, 2.0]).unwrap();
        let (mu, sd) = gp.predict(&[0.5]);
        assert!((mu - 3.0).abs() < 1e-2, "{mu}");
        assert!(sd < 0.1);
        assert!(expected_improvement(3.0, 1.0, 3.0) > expected_improvement(3.0, 0.1, 3.0));
    }
}
