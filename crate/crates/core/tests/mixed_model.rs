mod common;

use std::collections::BTreeMap;

use approx::assert_relative_eq;
use common::*;
use freetree::error::Error;
use freetree::mixed_model::{
    fit_random_intercept, fit_random_intercept_dropping, loglik_score_beta, marginal_loglik, predict_lmm,
    profile_loglik,
};
use nalgebra::DMatrix;
use proptest::prelude::*;

#[test]
fn no_cluster_effect_reduces_to_ols() {
    // Residuals cancel within each cluster, so the between-cluster variance
    // estimate sits on the boundary.
    let mut r = rng(1);
    let n_clusters = 30;
    let mut x = DMatrix::<f64>::zeros(2 * n_clusters, 2);
    let mut y = Vec::new();
    let mut clusters = Vec::new();
    for c in 0..n_clusters {
        let xi = normal_vec(1, 1.0, &mut r)[0];
        let e = normal_vec(1, 0.5, &mut r)[0];
        for s in [1.0, -1.0] {
            let i = y.len();
            x[(i, 0)] = 1.0;
            x[(i, 1)] = xi;
            y.push(1.0 + 2.0 * xi + s * e);
            clusters.push(c);
        }
    }
    let fit = fit_random_intercept(&x, &y, &clusters).unwrap();
    let ols = ols_normal_equations(&x, &y);
    assert!(fit.theta() < 1e-6, "theta {}", fit.theta());
    for (a, b) in fit.beta.iter().zip(&ols) {
        assert!((a - b).abs() < 1e-6);
    }
}

#[test]
fn variance_components_are_calibrated_per_seed() {
    for seed in 0..20 {
        let d = lmm_data(200, 5, &[2.0], 3.0, 1.0, 300 + seed);
        let fit = fit_random_intercept(&d.x, &d.y, &d.clusters).unwrap();
        assert!((2.0..=4.0).contains(&fit.sigma2_b), "seed {seed}: {}", fit.sigma2_b);
        assert!((0.8..=1.2).contains(&fit.sigma2_e), "seed {seed}: {}", fit.sigma2_e);
        assert_eq!(fit.n_obs, 1000);
        assert_eq!(fit.n_clusters, 200);
    }
}

#[test]
fn blups_follow_shrinkage_formula_and_sum_to_zero() {
    let d = lmm_data(25, 4, &[1.0, 0.5], 2.0, 1.0, 77);
    let fit = fit_random_intercept(&d.x, &d.y, &d.clusters).unwrap();
    let mut groups: BTreeMap<usize, (f64, f64)> = BTreeMap::new();
    for i in 0..d.y.len() {
        let fitted: f64 = (0..2).map(|j| d.x[(i, j)] * fit.beta[j]).sum();
        let e = groups.entry(d.clusters[i]).or_default();
        e.0 += 1.0;
        e.1 += d.y[i] - fitted;
    }
    let mut total = 0.0;
    for (c, (n, sum)) in &groups {
        let shrink = n * fit.sigma2_b / (n * fit.sigma2_b + fit.sigma2_e);
        assert_relative_eq!(fit.blups[c], shrink * sum / n, epsilon = 1e-10);
        total += fit.blups[c];
    }
    assert!(total.abs() < 1e-8, "sum of BLUPs {total}");
}

#[test]
fn prediction_rules() {
    let d = lmm_data(60, 5, &[2.0, 1.0], 3.0, 1.0, 5);
    let fit = fit_random_intercept(&d.x, &d.y, &d.clusters).unwrap();

    let mut zero = DMatrix::<f64>::zeros(2, 2);
    zero[(0, 0)] = 1.0;
    zero[(1, 0)] = 1.0;
    let p = predict_lmm(&fit, &zero, &[0, 999], true);
    assert_relative_eq!(p[0], fit.beta[0] + fit.blups[&0], epsilon = 1e-14);
    assert_relative_eq!(p[1], fit.beta[0], epsilon = 1e-14);
    let p_off = predict_lmm(&fit, &zero, &[0, 999], false);
    assert_eq!(p_off, vec![fit.beta[0]; 2]);

    let var = |pred: &[f64]| {
        let r: Vec<f64> = d.y.iter().zip(pred).map(|(y, p)| y - p).collect();
        let m = r.iter().sum::<f64>() / r.len() as f64;
        r.iter().map(|v| (v - m) * (v - m)).sum::<f64>()
    };
    let with = predict_lmm(&fit, &d.x, &d.clusters, true);
    let without = predict_lmm(&fit, &d.x, &d.clusters, false);
    assert!(var(&with) < var(&without));
}

#[test]
fn rank_deficiency_is_reported_or_dropped() {
    let d = lmm_data(20, 3, &[1.0, 2.0], 1.0, 1.0, 9);
    let mut x = DMatrix::<f64>::zeros(d.y.len(), 3);
    for i in 0..d.y.len() {
        x[(i, 0)] = 1.0;
        x[(i, 1)] = d.x[(i, 1)];
        x[(i, 2)] = 2.0 * d.x[(i, 1)];
    }
    let err = fit_random_intercept(&x, &d.y, &d.clusters).unwrap_err();
    assert!(matches!(err, Error::Rank { .. }), "{err}");
    let fit = fit_random_intercept_dropping(&x, &d.y, &d.clusters).unwrap();
    assert_eq!(fit.dropped, vec![2]);
    assert_eq!(fit.beta[2], 0.0);
    let reference = fit_random_intercept(&d.x, &d.y, &d.clusters).unwrap();
    assert_relative_eq!(fit.beta[1], reference.beta[1], epsilon = 1e-8);
    assert_relative_eq!(fit.loglik, reference.loglik, epsilon = 1e-8);
}

#[test]
fn single_observation_is_insufficient() {
    let x = DMatrix::from_element(1, 1, 1.0);
    let err = fit_random_intercept(&x, &[1.0], &[0]).unwrap_err();
    assert!(matches!(err, Error::InsufficientData(_)), "{err}");
}

#[test]
fn mismatched_lengths_are_rejected() {
    let x = DMatrix::from_element(3, 1, 1.0);
    assert!(fit_random_intercept(&x, &[1.0, 2.0], &[0, 1]).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn loglik_matches_dense_oracle(
        n_clusters in 3usize..25,
        per in 1usize..8,
        s2b in 0.0f64..4.0,
        seed in any::<u64>(),
    ) {
        let d = lmm_data(n_clusters, per + 1, &[0.5, -1.0, 2.0], s2b, 1.0, seed);
        prop_assume!(d.y.len() <= 200);
        let fit = fit_random_intercept(&d.x, &d.y, &d.clusters).unwrap();
        let oracle = dense_loglik(&d.x, &d.y, &d.clusters, &fit.beta, fit.sigma2_e, fit.sigma2_b);
        prop_assert!((fit.loglik - oracle).abs() <= 1e-8, "{} vs {}", fit.loglik, oracle);
        let ols = profile_loglik(&d.x, &d.y, &d.clusters, 0.0).unwrap();
        prop_assert!(fit.loglik >= ols - 1e-9);
    }

    #[test]
    fn score_matches_finite_differences(seed in any::<u64>(), shift in -1.0f64..1.0) {
        let d = lmm_data(12, 4, &[1.0, 0.3], 1.5, 0.7, seed);
        let beta = [1.0 + shift, 0.3 - shift];
        let (s2e, s2b) = (0.7, 1.5);
        let score = loglik_score_beta(&d.x, &d.y, &d.clusters, &beta, s2e, s2b);
        for j in 0..2 {
            let h = 1e-6;
            let mut up = beta;
            let mut dn = beta;
            up[j] += h;
            dn[j] -= h;
            let fd = (dense_loglik(&d.x, &d.y, &d.clusters, &up, s2e, s2b)
                - dense_loglik(&d.x, &d.y, &d.clusters, &dn, s2e, s2b)) / (2.0 * h);
            prop_assert!((fd - score[j]).abs() <= 1e-6 * score[j].abs().max(1.0), "{fd} vs {}", score[j]);
        }
        let m = marginal_loglik(&d.x, &d.y, &d.clusters, &beta, s2e, s2b);
        prop_assert!((m - dense_loglik(&d.x, &d.y, &d.clusters, &beta, s2e, s2b)).abs() < 1e-9);
    }

    #[test]
    fn fit_is_invariant_to_row_order_and_relabeling(seed in any::<u64>(), perm_seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        let d = lmm_data(15, 4, &[1.0, -0.5], 2.0, 1.0, seed);
        let fit = fit_random_intercept(&d.x, &d.y, &d.clusters).unwrap();
        let n = d.y.len();
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng(perm_seed));
        let x2 = DMatrix::from_fn(n, 2, |i, j| d.x[(perm[i], j)]);
        let y2: Vec<f64> = perm.iter().map(|&i| d.y[i]).collect();
        let c2: Vec<usize> = perm.iter().map(|&i| 1000 - d.clusters[i]).collect();
        let fit2 = fit_random_intercept(&x2, &y2, &c2).unwrap();
        prop_assert!((fit.loglik - fit2.loglik).abs() < 1e-8);
        prop_assert!((fit.sigma2_b - fit2.sigma2_b).abs() < 1e-6);
        for j in 0..2 {
            prop_assert!((fit.beta[j] - fit2.beta[j]).abs() < 1e-7);
        }
        for (c, b) in &fit.blups {
            prop_assert!((b - fit2.blups[&(1000 - c)]).abs() < 1e-7);
        }
    }
}
