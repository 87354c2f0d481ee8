//! Group fairness and predictive metrics, plus the blended search objective.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Favorable-outcome counts per group, weighted when weights are supplied.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroupRates {
    /// `counts[group][prediction]`.
    pub counts: [[f64; 2]; 2],
}

impl GroupRates {
    pub fn from_predictions(pred: &[u8], g: &[u8]) -> Self {
        Self::weighted(pred, g, None)
    }

    pub fn weighted(pred: &[u8], g: &[u8], w: Option<&[f64]>) -> Self {
        assert_eq!(pred.len(), g.len(), "prediction/group length mismatch");
        let mut counts = [[0.0; 2]; 2];
        for i in 0..pred.len() {
            let wi = w.map_or(1.0, |w| w[i]);
            counts[g[i] as usize][pred[i] as usize] += wi;
        }
        GroupRates { counts }
    }

    pub fn total(&self, group: usize) -> f64 {
        self.counts[group][0] + self.counts[group][1]
    }

    /// Favorable rate of a group; `None` when the group is absent.
    pub fn rate(&self, group: usize) -> Option<f64> {
        let t = self.total(group);
        (t > 0.0).then(|| self.counts[group][1] / t)
    }

    pub fn rate_priv(&self) -> Option<f64> {
        self.rate(1)
    }

    pub fn rate_unpriv(&self) -> Option<f64> {
        self.rate(0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DisparateImpact {
    Defined(f64),
    Undefined(&'static str),
}

impl DisparateImpact {
    pub fn value(&self) -> Option<f64> {
        match self {
            DisparateImpact::Defined(v) => Some(*v),
            DisparateImpact::Undefined(_) => None,
        }
    }

    pub fn from_option(v: Option<f64>) -> Self {
        match v {
            Some(v) => DisparateImpact::Defined(v),
            None => DisparateImpact::Undefined("missing"),
        }
    }
}

fn di_from_rates(r: &GroupRates) -> DisparateImpact {
    let (Some(up), Some(pr)) = (r.rate_unpriv(), r.rate_priv()) else {
        return DisparateImpact::Undefined("a group has no members");
    };
    if pr == 0.0 {
        if up == 0.0 {
            // no favorable outcomes in either group
            DisparateImpact::Defined(1.0)
        } else {
            DisparateImpact::Undefined("privileged favorable rate is zero")
        }
    } else {
        DisparateImpact::Defined(up / pr)
    }
}

/// Ratio of favorable rates, unprivileged over privileged.
pub fn disparate_impact(pred: &[u8], g: &[u8]) -> DisparateImpact {
    di_from_rates(&GroupRates::from_predictions(pred, g))
}

pub fn weighted_disparate_impact(pred: &[u8], g: &[u8], w: &[f64]) -> DisparateImpact {
    di_from_rates(&GroupRates::weighted(pred, g, Some(w)))
}

/// Unprivileged minus privileged favorable rate; `None` if a group is absent.
pub fn statistical_parity_difference(pred: &[u8], g: &[u8]) -> Option<f64> {
    let r = GroupRates::from_predictions(pred, g);
    Some(r.rate_unpriv()? - r.rate_priv()?)
}

/// DI folded into [0, 1]; undefined values count as worst case.
pub fn symmetric_di(di: &DisparateImpact) -> f64 {
    match di {
        DisparateImpact::Undefined(_) => 0.0,
        DisparateImpact::Defined(v) => fold_ratio(*v),
    }
}

pub fn fold_ratio(v: f64) -> f64 {
    if v <= 1.0 {
        v.max(0.0)
    } else {
        1.0 / v
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictiveReport {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub accuracy: f64,
}

/// Favorable (1) is the positive class.
pub fn classification_metrics(y: &[u8], pred: &[u8]) -> PredictiveReport {
    assert_eq!(y.len(), pred.len(), "label/prediction length mismatch");
    let (mut tp, mut fp, mut fneg, mut correct) = (0usize, 0usize, 0usize, 0usize);
    for (&t, &p) in y.iter().zip(pred) {
        match (t, p) {
            (1, 1) => tp += 1,
            (0, 1) => fp += 1,
            (1, 0) => fneg += 1,
            _ => {}
        }
        if t == p {
            correct += 1;
        }
    }
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fneg);
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    PredictiveReport {
        precision,
        recall,
        f1,
        accuracy: ratio(correct, y.len()),
    }
}

pub const AMPLIFY_THRESHOLD: f64 = 0.66;
pub const BLEND_WEIGHT: f64 = 0.5;

/// Per-dataset reference points for [`blended_score`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScorerRefs {
    /// Symmetric DI of the true labels.
    pub min_di: f64,
    pub max_di: f64,
    /// F1 of the constant-favorable classifier.
    pub min_f1: f64,
    /// F1 of the reference boosted model.
    pub max_f1: f64,
    pub threshold: f64,
    pub blend: f64,
}

impl ScorerRefs {
    pub fn new(min_di: f64, min_f1: f64, max_f1: f64) -> Result<Self> {
        if !(min_di <= 1.0) {
            return Err(Error::DegenerateRefs(format!("min_di = {min_di} exceeds 1")));
        }
        if !(min_f1 <= max_f1) {
            return Err(Error::DegenerateRefs(format!(
                "min_f1 = {min_f1} exceeds max_f1 = {max_f1}"
            )));
        }
        Ok(ScorerRefs {
            min_di,
            max_di: 1.0,
            min_f1,
            max_f1,
            threshold: AMPLIFY_THRESHOLD,
            blend: BLEND_WEIGHT,
        })
    }

    /// Scores already-computed symmetric DI and F1.
    pub fn score(&self, sym_di: f64, f1: f64) -> Result<f64> {
        if self.max_f1 == self.min_f1 {
            return Err(Error::DegenerateRefs("max_f1 equals min_f1".into()));
        }
        if self.max_di == self.min_di {
            return Err(Error::DegenerateRefs("max_di equals min_di".into()));
        }
        let amplify = |v: f64| {
            if v < self.threshold {
                v - (self.threshold - v)
            } else {
                v
            }
        };
        let di = amplify((sym_di - self.min_di) / (self.max_di - self.min_di));
        let f1 = amplify((f1 - self.min_f1) / (self.max_f1 - self.min_f1));
        Ok(self.blend * (di + f1))
    }
}

/// Equal-weight blend of scaled symmetric DI and scaled F1, with values below
/// the threshold pushed further down. Not clamped.
pub fn blended_score(pred: &[u8], y: &[u8], g: &[u8], refs: &ScorerRefs) -> Result<f64> {
    let sdi = symmetric_di(&disparate_impact(pred, g));
    let f1 = classification_metrics(y, pred).f1;
    refs.score(sdi, f1)
}

/// Flat per-evaluation metric record; `null` DI/SPD means undefined.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub di: Option<f64>,
    pub spd: Option<f64>,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub accuracy: f64,
    pub fit_seconds: f64,
}

impl MetricReport {
    pub fn evaluate(y: &[u8], pred: &[u8], g: &[u8], fit_seconds: f64) -> Self {
        let p = classification_metrics(y, pred);
        MetricReport {
            di: disparate_impact(pred, g).value(),
            spd: statistical_parity_difference(pred, g),
            precision: p.precision,
            recall: p.recall,
            f1: p.f1,
            accuracy: p.accuracy,
            fit_seconds,
        }
    }

    /// As [`MetricReport::evaluate`], with DI and SPD restricted to rows
    /// where `counted` is true.
    pub fn evaluate_counted(y: &[u8], pred: &[u8], g: &[u8], counted: Option<&[bool]>, fit_seconds: f64) -> Self {
        let mut r = Self::evaluate(y, pred, g, fit_seconds);
        if let Some(c) = counted {
            let (p, gg): (Vec<u8>, Vec<u8>) = pred.iter().zip(g).zip(c).filter(|(_, &k)| k).map(|((&p, &g), _)| (p, g)).unzip();
            r.di = disparate_impact(&p, &gg).value();
            r.spd = statistical_parity_difference(&p, &gg);
        }
        r
    }
}

pub fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.iter().sum::<f64>() / v.len() as f64
}

/// Population standard deviation.
pub fn std_dev(v: &[f64]) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    let m = mean(v);
    (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / v.len() as f64).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn di_from_direct_counts() {
        // unpriv: 1 of 4 favorable, priv: 2 of 4
        let g = [0, 0, 0, 0, 1, 1, 1, 1];
        let p = [1, 0, 0, 0, 1, 1, 0, 0];
        assert_eq!(disparate_impact(&p, &g), DisparateImpact::Defined(0.5));
        assert_eq!(statistical_parity_difference(&p, &g), Some(-0.25));
    }

    #[test]
    fn di_equal_rates_and_degenerate_cases() {
        let g = [0, 1, 0, 1];
        assert_eq!(disparate_impact(&[1, 1, 0, 0], &g).value(), Some(1.0));
        assert_eq!(disparate_impact(&[0, 0, 0, 0], &g).value(), Some(1.0));
        assert_eq!(statistical_parity_difference(&[1, 1, 1, 1], &g), Some(0.0));
        // privileged rate 0, unprivileged > 0
        assert!(disparate_impact(&[1, 0, 0, 0], &g).value().is_none());
        assert!(disparate_impact(&[1, 0], &[1, 1]).value().is_none());
        assert!(statistical_parity_difference(&[1, 0], &[0, 0]).is_none());
    }

    #[test]
    fn symmetric_di_values() {
        assert!((symmetric_di(&DisparateImpact::Defined(1.25)) - 0.8).abs() < 1e-15);
        assert_eq!(symmetric_di(&DisparateImpact::Defined(1.0)), 1.0);
        assert_eq!(symmetric_di(&DisparateImpact::Defined(0.5)), 0.5);
        assert_eq!(symmetric_di(&DisparateImpact::Undefined("x")), 0.0);
    }

    #[test]
    fn classification_metric_cases() {
        let y = [1, 0, 1, 1, 0];
        let r = classification_metrics(&y, &y);
        assert_eq!((r.precision, r.recall, r.f1, r.accuracy), (1.0, 1.0, 1.0, 1.0));
        let r = classification_metrics(&[1, 1, 1, 0], &[1, 1, 1, 1]);
        assert_eq!(r.precision, 0.75);
        assert_eq!(r.recall, 1.0);
        assert!((r.f1 - 6.0 / 7.0).abs() < 1e-15);
        let r = classification_metrics(&[1, 0, 1], &[0, 0, 0]);
        assert_eq!((r.precision, r.recall, r.f1), (0.0, 0.0, 0.0));
    }

    #[test]
    fn blended_hand_traces() {
        let refs = ScorerRefs::new(0.4, 0.6, 0.9).unwrap();
        // di' = 0.5 -> 0.34, f1' = 1.0
        assert!((refs.score(0.7, 0.9).unwrap() - 0.67).abs() < 1e-12);
        assert!((refs.score(1.0, 0.9).unwrap() - 1.0).abs() < 1e-12);
        // di' = 0 -> -0.66; f1' = 1
        assert!((refs.score(0.4, 0.9).unwrap() - 0.5 * (1.0 - 0.66)).abs() < 1e-12);
    }

    #[test]
    fn blended_rejects_degenerate_refs() {
        assert!(ScorerRefs::new(0.5, 0.9, 0.6).is_err());
        let refs = ScorerRefs::new(0.5, 0.7, 0.7).unwrap();
        assert!(matches!(refs.score(1.0, 0.7), Err(Error::DegenerateRefs(_))));
    }

    #[test]
    fn blended_score_from_predictions() {
        let y = [1, 0, 1, 0];
        let g = [1, 1, 0, 0];
        let refs = ScorerRefs::new(0.5, 0.5, 1.0).unwrap();
        // perfect predictions: sym DI = 1, f1 = 1
        assert!((blended_score(&y, &y, &g, &refs).unwrap() - 1.0).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn symmetric_di_reciprocal_invariant(x in 1e-6f64..1e6) {
            let a = symmetric_di(&DisparateImpact::Defined(x));
            let b = symmetric_di(&DisparateImpact::Defined(1.0 / x));
            prop_assert!((a - b).abs() <= 1e-12 * a.max(1e-12));
        }

        #[test]
        fn di_permutation_invariant(
            rows in proptest::collection::vec((0u8..2, 0u8..2), 2..60),
            seed in any::<u64>(),
        ) {
            use rand::seq::SliceRandom;
            let (p, g): (Vec<u8>, Vec<u8>) = rows.iter().copied().unzip();
            let mut perm = rows.clone();
            perm.shuffle(&mut crate::seed::rng(seed));
            let (pp, gp): (Vec<u8>, Vec<u8>) = perm.into_iter().unzip();
            prop_assert_eq!(disparate_impact(&p, &g), disparate_impact(&pp, &gp));
        }

        #[test]
        fn f1_bounded_by_precision_recall(
            rows in proptest::collection::vec((0u8..2, 0u8..2), 1..60),
        ) {
            let (y, p): (Vec<u8>, Vec<u8>) = rows.into_iter().unzip();
            let r = classification_metrics(&y, &p);
            prop_assert!((0.0..=1.0).contains(&r.f1));
            prop_assert!(r.f1 <= r.precision.max(r.recall) + 1e-12);
        }

        #[test]
        fn blended_monotone(
            d1 in 0.0f64..1.0, d2 in 0.0f64..1.0,
            f1 in 0.0f64..1.0, f2 in 0.0f64..1.0,
        ) {
            let refs = ScorerRefs::new(0.3, 0.4, 0.95).unwrap();
            let (dlo, dhi) = if d1 <= d2 { (d1, d2) } else { (d2, d1) };
            let (flo, fhi) = if f1 <= f2 { (f1, f2) } else { (f2, f1) };
            prop_assert!(refs.score(dlo, flo).unwrap() <= refs.score(dhi, flo).unwrap() + 1e-12);
            prop_assert!(refs.score(dlo, flo).unwrap() <= refs.score(dlo, fhi).unwrap() + 1e-12);
        }
    }
}
