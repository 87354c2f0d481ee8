use fairens::dataset::synth_biased;
use fairens::learners::logistic::{self, normalized_weights, LogisticParams};
use fairens::metrics::{disparate_impact, symmetric_di};
use fairens::mitigation::ceo::{self, CostConstraint};
use fairens::mitigation::lfr::{self, LfrParams};
use fairens::mitigation::prejudice::{self, PrejudiceParams};
use fairens::mitigation::{reweigh, RepairModel};
use fairens::optim;
use ndarray::Array2;
use num_rational::Ratio;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rows_from_counts(c: [[usize; 2]; 2]) -> (Vec<u8>, Vec<u8>) {
    let mut y = Vec::new();
    let mut g = Vec::new();
    for grp in 0..2u8 {
        for l in 0..2u8 {
            for _ in 0..c[grp as usize][l as usize] {
                y.push(l);
                g.push(grp);
            }
        }
    }
    (y, g)
}

/// Exact rational weights straight from the counts.
fn rational_weights(c: [[usize; 2]; 2]) -> [[Ratio<i64>; 2]; 2] {
    let n = (c[0][0] + c[0][1] + c[1][0] + c[1][1]) as i64;
    let ng = |g: usize| (c[g][0] + c[g][1]) as i64;
    let nl = |l: usize| (c[0][l] + c[1][l]) as i64;
    let mut out = [[Ratio::from_integer(1); 2]; 2];
    for g in 0..2 {
        for l in 0..2 {
            out[g][l] = Ratio::new(ng(g) * nl(l), n * c[g][l] as i64);
        }
    }
    out
}

#[test]
fn reweigh_matches_rational_counts_and_equalizes_exactly() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..100 {
        let c = [
            [rng.random_range(1..40), rng.random_range(1..40)],
            [rng.random_range(1..40), rng.random_range(1..40)],
        ];
        let exact = rational_weights(c);
        // weighted favorable rates are equal in exact arithmetic
        let rate = |g: usize| {
            let fav = exact[g][1] * Ratio::from_integer(c[g][1] as i64);
            let all = fav + exact[g][0] * Ratio::from_integer(c[g][0] as i64);
            fav / all
        };
        assert_eq!(rate(0), rate(1));

        let (y, g) = rows_from_counts(c);
        let w = reweigh(&y, &g, None).unwrap();
        for grp in 0..2 {
            for l in 0..2 {
                let r = exact[grp][l];
                let v = *r.numer() as f64 / *r.denom() as f64;
                assert!((w.cells[grp][l] - v).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn reweigh_hand_instance() {
    let (y, g) = rows_from_counts([[3, 1], [1, 3]]);
    let w = reweigh(&y, &g, None).unwrap();
    assert!((w.weight(1, 1) - 2.0 / 3.0).abs() < 1e-15);
    assert!((w.weight(1, 0) - 2.0).abs() < 1e-15);
    assert!((w.weight(0, 1) - 2.0).abs() < 1e-15);
    assert!((w.weight(0, 0) - 2.0 / 3.0).abs() < 1e-15);
}

fn weighted_label_di(y: &[u8], g: &[u8], w: &[f64]) -> f64 {
    let mut fav = [0.0; 2];
    let mut tot = [0.0; 2];
    for i in 0..y.len() {
        tot[g[i] as usize] += w[i];
        fav[g[i] as usize] += w[i] * f64::from(y[i]);
    }
    (fav[0] / tot[0]) / (fav[1] / tot[1])
}

proptest! {
    #[test]
    fn reweighed_labels_have_unit_di(
        cells in prop::collection::vec(prop::collection::vec((0u8..2, 0u8..2), 8..200), 1),
        seed in any::<u64>(),
    ) {
        let mut rows = cells[0].clone();
        rows.extend([(0, 0), (0, 1), (1, 0), (1, 1)]);
        let (y, g): (Vec<u8>, Vec<u8>) = rows.iter().copied().unzip();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let base: Vec<f64> = (0..y.len()).map(|_| rng.random_range(0.1..3.0)).collect();
        let w = reweigh(&y, &g, Some(&base)).unwrap().expand(&y, &g);
        let combined: Vec<f64> = w.iter().zip(&base).map(|(a, b)| a * b).collect();
        prop_assert!((weighted_label_di(&y, &g, &combined) - 1.0).abs() < 1e-9);
    }
}

/// Sorts each group's repaired values and checks them against the
/// rank-wise median of the groups' sorted inputs.
fn brute_force_full_repair(values: &[f64], g: &[u8]) -> Vec<f64> {
    let mut per: Vec<Vec<f64>> = (0..2u8)
        .map(|grp| values.iter().zip(g).filter(|(_, &t)| t == grp).map(|(v, _)| *v).collect())
        .collect();
    for p in per.iter_mut() {
        p.sort_by(f64::total_cmp);
    }
    (0..per[0].len()).map(|i| 0.5 * (per[0][i] + per[1][i])).collect()
}

#[test]
fn full_repair_equalizes_equal_sized_groups() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..30 {
        let half = rng.random_range(3..60);
        let n = 2 * half;
        let g: Vec<u8> = (0..n).map(|i| u8::from(i % 2 == 0)).collect();
        let x = Array2::from_shape_fn((n, 2), |(i, j)| {
            rng.random_range(0.0..1.0) * (1.0 + j as f64) + 2.0 * f64::from(g[i])
        });
        let m = RepairModel::fit(x.view(), &g, &[true, true], 1.0).unwrap();
        let r = m.apply(x.view(), &g).unwrap();
        for j in 0..2 {
            let col: Vec<f64> = x.column(j).to_vec();
            let target = brute_force_full_repair(&col, &g);
            for grp in 0..2u8 {
                let mut got: Vec<f64> = (0..n).filter(|&i| g[i] == grp).map(|i| r[[i, j]]).collect();
                got.sort_by(f64::total_cmp);
                for (a, b) in got.iter().zip(&target) {
                    assert!((a - b).abs() < 1e-6);
                }
            }
        }
    }
}

#[test]
fn hand_repair_instance() {
    let x = Array2::from_shape_vec((6, 1), vec![1.0, 2.0, 3.0, 3.0, 4.0, 5.0]).unwrap();
    let g = [1, 1, 1, 0, 0, 0];
    let r = RepairModel::fit(x.view(), &g, &[true], 1.0).unwrap().apply(x.view(), &g).unwrap();
    assert_eq!(r.column(0).to_vec(), vec![2.0, 3.0, 4.0, 2.0, 3.0, 4.0]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]
    #[test]
    fn repair_is_monotone_within_groups_and_continuous_in_level(
        vals in prop::collection::vec(-50.0f64..50.0, 6..60),
        level in 0.0f64..0.999,
        seed in any::<u64>(),
    ) {
        let n = vals.len();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut g: Vec<u8> = (0..n).map(|_| rng.random_range(0..2u8)).collect();
        g[0] = 0;
        g[1] = 1;
        let x = Array2::from_shape_vec((n, 1), vals.clone()).unwrap();
        let fit = |l: f64| RepairModel::fit(x.view(), &g, &[true], l).unwrap().apply(x.view(), &g).unwrap();
        let a = fit(level);
        let b = fit(level + 1e-3);
        let range = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
            - vals.iter().cloned().fold(f64::INFINITY, f64::min);
        for i in 0..n {
            prop_assert!((a[[i, 0]] - b[[i, 0]]).abs() <= 1e-2 * range.max(1e-12));
            for k in 0..n {
                if g[i] == g[k] && vals[i] <= vals[k] {
                    prop_assert!(a[[i, 0]] <= a[[k, 0]] + 1e-9);
                }
            }
        }
    }
}

#[test]
fn prejudice_without_penalty_matches_logistic() {
    for s in 0..5 {
        let ds = synth_biased(200, 0.8, 0.4, 4, s).unwrap();
        let pr = prejudice::fit(ds.x.view(), &ds.y, &ds.g, None, PrejudiceParams { eta: 0.0, ..Default::default() }).unwrap();
        let lr = logistic::fit(ds.x.view(), &ds.y, None, &LogisticParams::default()).unwrap();
        for (a, b) in pr.logistic.theta().iter().zip(lr.theta()) {
            assert!((a - b).abs() < 1e-4, "{a} vs {b}");
        }
    }
}

#[test]
fn prejudice_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for s in 0..20 {
        let ds = synth_biased(60, 0.8, 0.4, 3, s).unwrap();
        let w: Vec<f64> = (0..60).map(|_| rng.random_range(0.5..2.0)).collect();
        let w = normalized_weights(60, Some(&w));
        let params = PrejudiceParams { eta: rng.random_range(0.0..50.0), ..Default::default() };
        let theta: Vec<f64> = (0..4).map(|_| rng.random_range(-1.5..1.5)).collect();
        let (_, grad) = prejudice::objective(ds.x.view(), &ds.y, &ds.g, &w, &params, &theta);
        for j in 0..theta.len() {
            let h = 1e-6;
            let mut a = theta.clone();
            a[j] += h;
            let mut b = theta.clone();
            b[j] -= h;
            let f = |t: &[f64]| prejudice::objective(ds.x.view(), &ds.y, &ds.g, &w, &params, t).0;
            let fd = (f(&a) - f(&b)) / (2.0 * h);
            let rel = (fd - grad[j]).abs() / fd.abs().max(1e-6);
            assert!(rel < 1e-4, "instance {s}, component {j}: {fd} vs {}", grad[j]);
        }
    }
}

#[test]
fn prejudice_loss_decreases_over_accepted_steps() {
    let ds = synth_biased(300, 0.8, 0.4, 6, 9).unwrap();
    let w = vec![1.0; 300];
    let params = PrejudiceParams { eta: 100.0, ..Default::default() };
    let out = optim::minimize(
        |t| prejudice::objective(ds.x.view(), &ds.y, &ds.g, &w, &params, t),
        vec![0.0; 7],
        optim::Options::default(),
    )
    .unwrap();
    assert!(out.history.windows(2).all(|p| p[1] < p[0]));
}

#[test]
fn strong_prejudice_penalty_improves_disparate_impact() {
    let mut wins = 0;
    for s in 0..20 {
        let ds = synth_biased(400, 0.8, 0.4, 6, 100 + s).unwrap();
        let di_at = |eta: f64| {
            let m = prejudice::fit(ds.x.view(), &ds.y, &ds.g, None, PrejudiceParams { eta, ..Default::default() }).unwrap();
            let pred: Vec<u8> = ds.x.rows().into_iter().map(|r| u8::from(m.logistic.proba_row(&r.to_vec()) > 0.5)).collect();
            symmetric_di(&disparate_impact(&pred, &ds.g))
        };
        if di_at(100.0) > di_at(0.0) {
            wins += 1;
        }
    }
    assert!(wins > 10, "{wins}/20");
}

fn mean_membership_gap(t: &Array2<f64>, g: &[u8]) -> f64 {
    let k = t.ncols();
    let mut m = vec![[0.0; 2]; k];
    let n1 = g.iter().filter(|&&v| v == 1).count() as f64;
    let n0 = g.len() as f64 - n1;
    for (i, row) in t.rows().into_iter().enumerate() {
        for c in 0..k {
            m[c][g[i] as usize] += row[c];
        }
    }
    (0..k).map(|c| (m[c][1] / n1 - m[c][0] / n0).abs()).sum()
}

#[test]
fn lfr_parity_weight_reduces_group_gap() {
    let ds = synth_biased(300, 0.8, 0.4, 6, 21).unwrap();
    let fit = |az: f64| {
        let p = LfrParams { az, max_iter: 100, ..Default::default() };
        let m = lfr::fit(ds.x.view(), &ds.y, &ds.g, p, 4).unwrap();
        mean_membership_gap(&m.transform(ds.x.view()).unwrap(), &ds.g)
    };
    let (fair, free) = (fit(100.0), fit(0.0));
    assert!(fair < free, "{fair} vs {free}");
}

#[test]
fn lfr_objective_non_increasing() {
    let ds = synth_biased(120, 0.8, 0.4, 3, 2).unwrap();
    let p = lfr::Problem { x: ds.x.view(), y: &ds.y, g: &ds.g, params: LfrParams::default() };
    let theta0: Vec<f64> = (0..20).map(|i| (i as f64 * 0.37).sin()).collect();
    let out = optim::minimize(|t| p.evaluate(t), theta0, optim::Options { max_iters: 60, ..Default::default() }).unwrap();
    assert!(out.history.windows(2).all(|w| w[1] <= w[0]));
}

/// Independent cost: expected-mixed scores, then generalized rates.
fn oracle_cost(scores: &[f64], y: &[u8], fp_w: f64, fn_w: f64) -> f64 {
    let pos: Vec<f64> = scores.iter().zip(y).filter(|(_, &l)| l == 1).map(|(s, _)| *s).collect();
    let neg: Vec<f64> = scores.iter().zip(y).filter(|(_, &l)| l == 0).map(|(s, _)| *s).collect();
    let base = pos.len() as f64 / y.len() as f64;
    let gfnr = pos.iter().map(|s| 1.0 - s).sum::<f64>() / pos.len() as f64;
    let gfpr = neg.iter().sum::<f64>() / neg.len() as f64;
    (fp_w * gfpr * (1.0 - base) + fn_w * gfnr * base) / (fp_w + fn_w)
}

#[test]
fn ceo_alpha_matches_exhaustive_grid() {
    // 8 rows, unequal false-negative costs
    let s = [0.95, 0.85, 0.2, 0.1, 0.55, 0.35, 0.3, 0.05];
    let y = [1, 1, 0, 0, 1, 1, 0, 0];
    let g = [1, 1, 1, 1, 0, 0, 0, 0];
    let m = ceo::fit(&s, &y, &g, CostConstraint::Fnr).unwrap();

    let priv_s: Vec<f64> = s[..4].to_vec();
    let unpriv_s: Vec<f64> = s[4..].to_vec();
    let target = oracle_cost(&unpriv_s, &y[4..], 0.0, 1.0);
    let mut best = (f64::INFINITY, 0.0);
    for i in 0..=100 {
        let a = i as f64 / 100.0;
        let mixed: Vec<f64> = priv_s.iter().map(|v| (1.0 - a) * v + a * 0.5).collect();
        let gap = (oracle_cost(&mixed, &y[..4], 0.0, 1.0) - target).abs();
        if gap < best.0 - 1e-15 {
            best = (gap, a);
        }
    }
    assert_eq!(m.alpha[0], 0.0);
    assert!((m.alpha[1] - best.1).abs() < 1e-12, "{} vs {}", m.alpha[1], best.1);
}

#[test]
fn ceo_refit_on_own_output_is_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for cost in [CostConstraint::Weighted, CostConstraint::Fpr, CostConstraint::Fnr] {
        for _ in 0..30 {
            let n = 80;
            let g: Vec<u8> = (0..n).map(|i| u8::from(i % 2 == 0)).collect();
            let y: Vec<u8> = (0..n).map(|i| u8::from(i % 4 < 2)).collect();
            let s: Vec<f64> = (0..n)
                .map(|i| (0.5 * f64::from(y[i]) + 0.3 * f64::from(g[i]) + rng.random_range(0.0..0.3)).min(1.0))
                .collect();
            let m = ceo::fit(&s, &y, &g, cost).unwrap();
            let adjusted = m.expected_scores(&s, &g);
            assert!(adjusted.iter().all(|v| (0.0..=1.0).contains(v)));
            let again = ceo::fit(&adjusted, &y, &g, cost).unwrap();
            assert_eq!(again.alpha, [0.0, 0.0], "{cost}: first {:?}", m.alpha);
        }
    }
}
