mod common;

use std::collections::BTreeSet;

use freetree::error::Error;
use freetree::panel_data::{Column, PanelDataset};
use freetree::simulate::{f_true, gen_features, gen_panel, Design, SimConfig};
use nalgebra::DMatrix;

fn noiseless(design: Design, n: usize, seed: u64) -> SimConfig {
    let mut cfg = SimConfig::new(design, n, seed);
    cfg.sigma2_b = 0.0;
    cfg.sigma2_eps = 0.0;
    cfg
}

fn row_features(ds: &PanelDataset, names: &[String], row: usize) -> Vec<f64> {
    names.iter().map(|f| ds.numeric(f).unwrap()[row]).collect()
}

fn corr(rows: &[Vec<f64>], a: usize, b: usize) -> f64 {
    let n = rows.len() as f64;
    let (ma, mb) = rows.iter().fold((0.0, 0.0), |acc, r| (acc.0 + r[a], acc.1 + r[b]));
    let (ma, mb) = (ma / n, mb / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for r in rows {
        let (da, db) = (r[a] - ma, r[b] - mb);
        sab += da * db;
        saa += da * da;
        sbb += db * db;
    }
    sab / (saa * sbb).sqrt()
}

fn variance(rows: &[Vec<f64>], a: usize) -> f64 {
    let n = rows.len() as f64;
    let m = rows.iter().map(|r| r[a]).sum::<f64>() / n;
    rows.iter().map(|r| (r[a] - m).powi(2)).sum::<f64>() / (n - 1.0)
}

#[test]
fn f_true_examples() {
    let mut x = vec![0.0; 400];
    x[300] = 1.0;
    assert_eq!(f_true(&x).unwrap(), 5.0);
    x[301] = 2.0;
    x[302] = -1.0;
    assert_eq!(f_true(&x).unwrap(), 5.0 + 4.0 - 2.0 - 10.0);
    x[0] = -1.0;
    assert_eq!(f_true(&x).unwrap(), -8.0);
    assert!(matches!(f_true(&[0.0; 10]), Err(Error::Argument(_))));
    assert_eq!(f_true(&[1.0; 303]).unwrap(), 28.0);
}

#[test]
fn noiseless_sim2_response_is_f() {
    let cfg = noiseless(Design::Sim2, 8, 11);
    let (ds, truth) = gen_panel(&cfg).unwrap();
    let names = cfg.feature_names();
    for row in 0..ds.n_rows() {
        assert_eq!(ds.response()[row], f_true(&row_features(&ds, &names, row)).unwrap());
    }
    assert_eq!(truth.true_features, ["X1", "X2", "X3", "X301", "X302", "X303"]);
    assert!(truth.random_intercepts.values().all(|b| *b == 0.0));
}

#[test]
fn noiseless_sim1_adds_arm_specific_trend() {
    let cfg = noiseless(Design::Sim1, 6, 5);
    let (ds, truth) = gen_panel(&cfg).unwrap();
    let names = cfg.feature_names();
    let Column::Categorical { codes, levels } = ds.column("treatment").unwrap() else {
        panic!("treatment should be categorical");
    };
    assert_eq!(levels, &["treatment1", "treatment2"]);
    let expected = [4.0, 1.0, 0.0, 1.0, 4.0, 9.0];
    for row in 0..ds.n_rows() {
        let resid = ds.response()[row] - f_true(&row_features(&ds, &names, row)).unwrap();
        let t = ds.time().unwrap()[row];
        assert_eq!(ds.numeric("time").unwrap()[row], t);
        assert_eq!(ds.numeric("time2").unwrap()[row], t * t);
        let sign = if codes[row] == 0 { 1.0 } else { -1.0 };
        assert!((resid - sign * expected[row % 6]).abs() < 1e-12, "row {row}");
        let [a, b, c] = truth.treatment_trend[&levels[codes[row] as usize]];
        assert!((a + b * t + c * t * t - sign * expected[row % 6]).abs() < 1e-12);
    }
}

#[test]
fn feature_moments_match_design() {
    let cfg = SimConfig::new(Design::Sim2, 10_000, 21);
    let rows = gen_features(&cfg).unwrap();
    assert_eq!(rows.len(), 60_000);
    for j in [0, 150, 299, 350, 399] {
        let v = variance(&rows, j);
        assert!((0.98..=1.02).contains(&v), "var X{}: {v}", j + 1);
    }
    for (a, b) in [(0, 1), (0, 99), (100, 150), (200, 299)] {
        let r = corr(&rows, a, b);
        assert!((0.79..=0.81).contains(&r), "corr X{} X{}: {r}", a + 1, b + 1);
    }
    let tol = 4.0 / (rows.len() as f64).sqrt();
    for (a, b) in [(0, 100), (0, 300), (150, 250), (300, 301), (350, 399)] {
        let r = corr(&rows, a, b);
        assert!(r.abs() <= tol, "corr X{} X{}: {r}", a + 1, b + 1);
    }
}

#[test]
fn zero_correlation_makes_modules_independent() {
    let mut cfg = SimConfig::new(Design::Sim2, 4_000, 8);
    cfg.within_corr = 0.0;
    let rows = gen_features(&cfg).unwrap();
    let tol = 4.0 / (rows.len() as f64).sqrt();
    for (a, b) in [(0, 1), (5, 50), (120, 180), (0, 399)] {
        assert!(corr(&rows, a, b).abs() <= tol);
    }
}

#[test]
fn module_features_are_exchangeable() {
    let cfg = SimConfig::new(Design::Sim2, 3_000, 2);
    let rows = gen_features(&cfg).unwrap();
    let top = |start: usize| {
        let m = DMatrix::from_fn(10, 10, |i, j| corr(&rows, start + i, start + j));
        m.symmetric_eigen().eigenvalues.max()
    };
    let expected = 1.0 + 9.0 * 0.8;
    for start in [0, 45, 90, 130, 200] {
        let l = top(start);
        assert!((l - expected).abs() / expected < 0.03, "block at X{}: {l}", start + 1);
    }
    // The independent module has no dominant direction.
    assert!(top(320) < 1.5);
}

#[test]
fn subject_mean_residual_variance() {
    let target = 3.0 + 1.0 / 6.0;
    let mut total = 0.0;
    let seeds = 20;
    for seed in 0..seeds {
        let cfg = SimConfig::new(Design::Sim2, 200, 100 + seed);
        let (ds, _) = gen_panel(&cfg).unwrap();
        let names = cfg.feature_names();
        let means: Vec<f64> = (0..ds.n_clusters())
            .map(|c| {
                (0..6)
                    .map(|t| {
                        let row = 6 * c + t;
                        ds.response()[row] - f_true(&row_features(&ds, &names, row)).unwrap()
                    })
                    .sum::<f64>()
                    / 6.0
            })
            .collect();
        let m = means.iter().sum::<f64>() / means.len() as f64;
        total += means.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (means.len() as f64 - 1.0);
    }
    let mean = total / seeds as f64;
    assert!((mean - target).abs() / target < 0.15, "{mean}");
}

#[test]
fn generation_is_deterministic() {
    let cfg = SimConfig::new(Design::Sim1, 15, 42);
    let csv = |cfg: &SimConfig| {
        let mut buf = Vec::new();
        gen_panel(cfg).unwrap().0.write_csv(&mut buf).unwrap();
        buf
    };
    assert_eq!(csv(&cfg), csv(&cfg));
    assert_ne!(csv(&cfg), csv(&SimConfig::new(Design::Sim1, 15, 43)));
}

#[test]
fn id_offsets_give_disjoint_subjects_and_balanced_arms() {
    let a = SimConfig::new(Design::Sim1, 40, 9);
    let mut b = SimConfig::new(Design::Sim1, 20, 10);
    b.id_offset = 40;
    let (da, _) = gen_panel(&a).unwrap();
    let (db, _) = gen_panel(&b).unwrap();
    let ia: BTreeSet<&String> = da.cluster_names().iter().collect();
    let ib: BTreeSet<&String> = db.cluster_names().iter().collect();
    assert_eq!((ia.len(), ib.len()), (40, 20));
    assert!(ia.is_disjoint(&ib));
    for ds in [&da, &db] {
        let Column::Categorical { codes, .. } = ds.column("treatment").unwrap() else { unreachable!() };
        let first = codes.iter().filter(|c| **c == 0).count();
        assert_eq!(2 * first, codes.len());
    }
}

#[test]
fn frozen_features_repeat_within_subject() {
    let mut cfg = SimConfig::new(Design::Sim2, 3, 1);
    cfg.freeze_features = true;
    let rows = gen_features(&cfg).unwrap();
    for s in 0..3 {
        for t in 1..6 {
            assert_eq!(rows[6 * s + t], rows[6 * s]);
        }
    }
    cfg.freeze_features = false;
    let rows = gen_features(&cfg).unwrap();
    assert_ne!(rows[0], rows[1]);
}

#[test]
fn panel_survives_csv_round_trip() {
    let (ds, _) = gen_panel(&SimConfig::new(Design::Sim2, 7, 3)).unwrap();
    let mut buf = Vec::new();
    ds.write_csv(&mut buf).unwrap();
    let back = PanelDataset::read_csv(buf.as_slice(), ds.roles()).unwrap();
    assert_eq!(back, ds);
}

#[test]
fn invalid_configs_are_rejected() {
    let base = SimConfig::new(Design::Sim2, 10, 1);
    let mut c = base.clone();
    c.module_sizes = vec![100, 100];
    assert!(gen_panel(&c).is_err());
    let mut c = base.clone();
    c.within_corr = 1.0;
    assert!(c.validate().is_err());
    let mut c = base.clone();
    c.sigma2_b = -1.0;
    assert!(c.validate().is_err());
    let mut c = base.clone();
    c.n_features = 300;
    c.module_sizes = vec![100, 100, 100];
    assert!(c.validate().is_err());
    let mut c = base;
    c.n_subjects = 0;
    assert!(gen_features(&c).is_err());
}
