//! Independent reference computations shared by the integration suites.
#![allow(dead_code)]

use std::collections::HashMap;
use std::io::Write;

use freetree::panel_data::{Column, FeatureRoles, PanelDataset};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

/// Writes straight to the process stderr so the line survives libtest's
/// output capture.
pub fn verdict(criterion: u32, pass: bool, detail: &str) {
    let tag = if pass { "PASS" } else { "FAIL" };
    let mut err = std::io::stderr().lock();
    let _ = writeln!(err, "criterion {criterion}: {tag} ({detail})");
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Textbook O(p^3) topological overlap with r ranging over everything but
/// u and v.
pub fn tom_brute_force(a: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let p = a.len();
    let mut w = vec![vec![0.0; p]; p];
    for u in 0..p {
        for v in 0..p {
            if u == v {
                w[u][v] = 1.0;
                continue;
            }
            let mut q = 0.0;
            for r in 0..p {
                if r != u && r != v {
                    q += a[u][r] * a[r][v];
                }
            }
            let cu: f64 = (0..p).filter(|&r| r != u).map(|r| a[u][r]).sum();
            let cv: f64 = (0..p).filter(|&r| r != v).map(|r| a[v][r]).sum();
            w[u][v] = (q + a[u][v]) / (cu.min(cv) + 1.0 - a[u][v]);
        }
    }
    w
}

/// Symmetric matrix with unit diagonal and off-diagonal entries in [0, 1].
pub fn random_adjacency(p: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut a = vec![vec![0.0; p]; p];
    for u in 0..p {
        a[u][u] = 1.0;
        for v in u + 1..p {
            let x: f64 = rng.random();
            a[u][v] = x;
            a[v][u] = x;
        }
    }
    a
}

fn choose2(n: usize) -> f64 {
    (n * n.saturating_sub(1)) as f64 / 2.0
}

/// Adjusted Rand index of two labelings of the same items.
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> f64 {
    assert_eq!(a.len(), b.len());
    let mut table: HashMap<(usize, usize), usize> = HashMap::new();
    let mut ra: HashMap<usize, usize> = HashMap::new();
    let mut rb: HashMap<usize, usize> = HashMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *table.entry((x, y)).or_default() += 1;
        *ra.entry(x).or_default() += 1;
        *rb.entry(y).or_default() += 1;
    }
    let index: f64 = table.values().map(|&c| choose2(c)).sum();
    let sa: f64 = ra.values().map(|&c| choose2(c)).sum();
    let sb: f64 = rb.values().map(|&c| choose2(c)).sum();
    let total = choose2(a.len());
    let expected = sa * sb / total;
    let max = 0.5 * (sa + sb);
    if (max - expected).abs() < 1e-300 {
        return 1.0;
    }
    (index - expected) / (max - expected)
}

/// Gaussian log-density of `y` under mean `X beta` and covariance
/// `s2e I + s2b Z Z^T`, built densely.
pub fn dense_loglik(x: &DMatrix<f64>, y: &[f64], clusters: &[usize], beta: &[f64], s2e: f64, s2b: f64) -> f64 {
    let n = y.len();
    let mut v = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            if clusters[i] == clusters[j] {
                v[(i, j)] = s2b;
            }
        }
        v[(i, i)] += s2e;
    }
    let chol = v.cholesky().expect("positive definite covariance");
    let mu = x * nalgebra::DVector::from_column_slice(beta);
    let r = nalgebra::DVector::from_column_slice(y) - mu;
    let z = chol.l().solve_lower_triangular(&r).expect("triangular solve");
    let logdet: f64 = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    -0.5 * (n as f64 * (2.0 * std::f64::consts::PI).ln() + logdet + z.dot(&z))
}

/// Random-intercept data: `n_clusters` groups of `per` rows, an intercept
/// column plus `extra` standard-normal covariates, coefficients `beta`.
pub struct LmmData {
    pub x: DMatrix<f64>,
    pub y: Vec<f64>,
    pub clusters: Vec<usize>,
}

pub fn lmm_data(
    n_clusters: usize,
    per: usize,
    beta: &[f64],
    s2b: f64,
    s2e: f64,
    seed: u64,
) -> LmmData {
    let mut r = rng(seed);
    let std = Normal::new(0.0, 1.0).unwrap();
    let n = n_clusters * per;
    let q = beta.len();
    let mut x = DMatrix::<f64>::zeros(n, q);
    let mut y = Vec::with_capacity(n);
    let mut clusters = Vec::with_capacity(n);
    for c in 0..n_clusters {
        let b = s2b.sqrt() * std.sample(&mut r);
        for _ in 0..per {
            let i = clusters.len();
            x[(i, 0)] = 1.0;
            for j in 1..q {
                x[(i, j)] = std.sample(&mut r);
            }
            let mean: f64 = (0..q).map(|j| x[(i, j)] * beta[j]).sum();
            y.push(mean + b + s2e.sqrt() * std.sample(&mut r));
            clusters.push(c);
        }
    }
    LmmData { x, y, clusters }
}

/// Ordinary least squares by explicit normal equations.
pub fn ols_normal_equations(x: &DMatrix<f64>, y: &[f64]) -> Vec<f64> {
    let xtx = x.transpose() * x;
    let xty = x.transpose() * nalgebra::DVector::from_column_slice(y);
    let sol = xtx.lu().solve(&xty).expect("non-singular normal equations");
    sol.iter().copied().collect()
}

/// Panel with one row per cluster-time cell built from named numeric
/// columns. Clusters are `c0, c1, ...` of `per` rows each.
pub fn numeric_panel(y: Vec<f64>, per: usize, columns: Vec<(&str, Vec<f64>)>) -> PanelDataset {
    let n = y.len();
    let ids: Vec<String> = (0..n).map(|i| format!("c{:04}", i / per)).collect();
    let time: Vec<f64> = (0..n).map(|i| (i % per + 1) as f64).collect();
    let mut roles = FeatureRoles::new("id", "y");
    roles.time_col = Some("time".into());
    let cols = columns
        .into_iter()
        .map(|(name, v)| (name.to_string(), Column::Numeric(v)))
        .collect();
    PanelDataset::from_parts(roles, ids, Some(time), y, cols).expect("valid panel")
}

pub fn normal_vec(n: usize, sd: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let d = Normal::new(0.0, sd).unwrap();
    (0..n).map(|_| d.sample(rng)).collect()
}

pub fn uniform_vec(n: usize, lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}
