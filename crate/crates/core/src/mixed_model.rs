//! Random-intercept linear mixed model fitted by maximum likelihood.
//!
//! The model is `y = X beta + Z b + e` with `b_i ~ N(0, s2_b)` per cluster and
//! `e ~ N(0, s2_e I)`. For a fixed ratio `theta = s2_b / s2_e` both `beta` and
//! `s2_e` have closed forms, so the likelihood is profiled down to one
//! dimension and maximized over `theta` by a grid scan followed by
//! golden-section search on the `ln(1 + theta)` scale. All cluster algebra
//! uses the rank-one structure of each cluster block; the `n x n` marginal
//! covariance is never formed.

use std::collections::{BTreeMap, HashMap};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{PivotedCholesky, RANK_TOL};

/// Upper end of the variance-ratio search interval.
pub const THETA_MAX: f64 = 1e4;
/// Absolute tolerance on the variance ratio.
pub const THETA_TOL: f64 = 1e-8;
const GRID_POINTS: usize = 24;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LmmFit {
    /// Fixed effects, one per design column; dropped columns are zero.
    pub beta: Vec<f64>,
    /// Indices of design columns dropped as linearly dependent.
    pub dropped: Vec<usize>,
    pub sigma2_e: f64,
    pub sigma2_b: f64,
    /// Cluster code -> predicted random intercept.
    pub blups: BTreeMap<usize, f64>,
    pub loglik: f64,
    pub n_obs: usize,
    pub n_clusters: usize,
}

impl LmmFit {
    pub fn theta(&self) -> f64 {
        self.sigma2_b / self.sigma2_e
    }
}

/// Sufficient statistics of a design restricted to its independent columns.
struct Profile<'a> {
    x: DMatrix<f64>,
    y: &'a [f64],
    /// per-row cluster slot
    slot: Vec<usize>,
    sizes: Vec<usize>,
    gram: DMatrix<f64>,
    xty: DVector<f64>,
    /// per distinct cluster size: sum of s_i s_i^T and sum of s_i * ysum_i
    by_size: Vec<(usize, DMatrix<f64>, DVector<f64>)>,
}

struct Evaluated {
    theta: f64,
    beta: DVector<f64>,
    sigma2_e: f64,
    loglik: f64,
    resid: Vec<f64>,
}

impl<'a> Profile<'a> {
    fn new(x: DMatrix<f64>, y: &'a [f64], clusters: &[usize]) -> Self {
        let (n, q) = x.shape();
        let mut lookup: HashMap<usize, usize> = HashMap::new();
        let mut slot = Vec::with_capacity(n);
        for &c in clusters {
            let next = lookup.len();
            slot.push(*lookup.entry(c).or_insert(next));
        }
        let m = lookup.len();
        let mut sizes = vec![0usize; m];
        let mut sums = DMatrix::<f64>::zeros(m, q);
        let mut ysum = vec![0.0; m];
        for i in 0..n {
            let s = slot[i];
            sizes[s] += 1;
            ysum[s] += y[i];
            for j in 0..q {
                sums[(s, j)] += x[(i, j)];
            }
        }
        let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (s, &size) in sizes.iter().enumerate() {
            groups.entry(size).or_default().push(s);
        }
        let by_size = groups
            .into_iter()
            .map(|(size, members)| {
                let sub = DMatrix::from_fn(members.len(), q, |a, j| sums[(members[a], j)]);
                let ys = DVector::from_iterator(members.len(), members.iter().map(|&s| ysum[s]));
                (size, sub.tr_mul(&sub), sub.tr_mul(&ys))
            })
            .collect();
        let gram = x.tr_mul(&x);
        let xty = x.tr_mul(&DVector::from_column_slice(y));
        Self {
            x,
            y,
            slot,
            sizes,
            gram,
            xty,
            by_size,
        }
    }

    fn n(&self) -> usize {
        self.y.len()
    }

    fn evaluate(&self, theta: f64) -> Result<Evaluated> {
        let mut a = self.gram.clone();
        let mut rhs = self.xty.clone();
        if theta > 0.0 {
            for (size, mss, msy) in &self.by_size {
                let w = theta / (1.0 + *size as f64 * theta);
                a -= mss * w;
                rhs -= msy * w;
            }
        }
        let chol = a
            .cholesky()
            .ok_or_else(|| Error::Numeric(format!("GLS system not positive definite at theta = {theta}")))?;
        let beta = chol.solve(&rhs);
        let fitted = &self.x * &beta;
        let resid: Vec<f64> = self.y.iter().zip(fitted.iter()).map(|(y, f)| y - f).collect();
        let mut rsum = vec![0.0; self.sizes.len()];
        for (i, r) in resid.iter().enumerate() {
            rsum[self.slot[i]] += r;
        }
        let mut quad: f64 = resid.iter().map(|r| r * r).sum();
        let mut logdet = 0.0;
        for (s, &size) in self.sizes.iter().enumerate() {
            let ni = size as f64;
            quad -= theta / (1.0 + ni * theta) * rsum[s] * rsum[s];
            logdet += (1.0 + ni * theta).ln();
        }
        let n = self.n() as f64;
        let sigma2_e = (quad / n).max(f64::MIN_POSITIVE);
        let loglik = -0.5 * n * ((2.0 * std::f64::consts::PI * sigma2_e).ln() + 1.0) - 0.5 * logdet;
        Ok(Evaluated {
            theta,
            beta,
            sigma2_e,
            loglik,
            resid,
        })
    }

    fn maximize(&self) -> Result<Evaluated> {
        let to_theta = |u: f64| u.exp_m1();
        let u_max = THETA_MAX.ln_1p();
        let grid: Vec<f64> = (0..GRID_POINTS)
            .map(|i| u_max * i as f64 / (GRID_POINTS - 1) as f64)
            .collect();
        let mut values = Vec::with_capacity(GRID_POINTS);
        for &u in &grid {
            values.push(self.evaluate(to_theta(u))?.loglik);
        }
        let best = (0..GRID_POINTS)
            .fold(0, |b, i| if values[i] > values[b] { i } else { b });
        let mut lo = grid[best.saturating_sub(1)];
        let mut hi = grid[(best + 1).min(GRID_POINTS - 1)];
        let phi = 0.5 * (5f64.sqrt() - 1.0);
        let mut c = hi - phi * (hi - lo);
        let mut d = lo + phi * (hi - lo);
        let mut fc = self.evaluate(to_theta(c))?.loglik;
        let mut fd = self.evaluate(to_theta(d))?.loglik;
        for _ in 0..200 {
            if to_theta(hi) - to_theta(lo) < THETA_TOL {
                break;
            }
            if fc >= fd {
                hi = d;
                d = c;
                fd = fc;
                c = hi - phi * (hi - lo);
                fc = self.evaluate(to_theta(c))?.loglik;
            } else {
                lo = c;
                c = d;
                fc = fd;
                d = lo + phi * (hi - lo);
                fd = self.evaluate(to_theta(d))?.loglik;
            }
        }
        let mut cand = self.evaluate(to_theta(0.5 * (lo + hi)))?;
        for theta in [to_theta(grid[best]), 0.0] {
            let e = self.evaluate(theta)?;
            if e.loglik > cand.loglik {
                cand = e;
            }
        }
        Ok(cand)
    }
}

fn validate(x: &DMatrix<f64>, y: &[f64], clusters: &[usize]) -> Result<()> {
    let (n, q) = x.shape();
    if y.len() != n || clusters.len() != n {
        return Err(Error::Argument(format!(
            "design has {n} rows but response has {} and clusters {}",
            y.len(),
            clusters.len()
        )));
    }
    if n < 2 {
        return Err(Error::InsufficientData(format!(
            "mixed model needs at least 2 observations, got {n}"
        )));
    }
    if q == 0 {
        return Err(Error::Argument("design has no columns".into()));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite design or response value".into()));
    }
    Ok(())
}

/// Fits the random-intercept model by maximum likelihood. A rank-deficient
/// design is an error naming the dependent columns.
pub fn fit_random_intercept(x: &DMatrix<f64>, y: &[f64], clusters: &[usize]) -> Result<LmmFit> {
    fit_impl(x, y, clusters, false)
}

/// As [`fit_random_intercept`], but later-indexed dependent columns are
/// dropped (with a warning) and receive zero coefficients.
pub fn fit_random_intercept_dropping(
    x: &DMatrix<f64>,
    y: &[f64],
    clusters: &[usize],
) -> Result<LmmFit> {
    fit_impl(x, y, clusters, true)
}

fn fit_impl(x: &DMatrix<f64>, y: &[f64], clusters: &[usize], drop: bool) -> Result<LmmFit> {
    validate(x, y, clusters)?;
    let (n, q) = x.shape();
    let gram = x.tr_mul(x);
    let gram_rm: Vec<f64> = (0..q * q).map(|k| gram[(k / q, k % q)]).collect();
    let pivot = PivotedCholesky::new(&gram_rm, q, RANK_TOL);
    let dropped = pivot.dropped();
    if !dropped.is_empty() {
        if !drop {
            return Err(Error::Rank {
                columns: dropped.iter().map(|j| format!("column {j}")).collect(),
            });
        }
        log::warn!("dropping {} linearly dependent design column(s): {dropped:?}", dropped.len());
    }
    let kept = pivot.kept().to_vec();
    if n <= kept.len() {
        return Err(Error::InsufficientData(format!(
            "{n} observations for {} fixed effects",
            kept.len()
        )));
    }
    let xk = x.select_columns(kept.iter());
    let profile = Profile::new(xk, y, clusters);
    let best = profile.maximize()?;

    let mut beta = vec![0.0; q];
    for (a, &j) in kept.iter().enumerate() {
        beta[j] = best.beta[a];
    }
    let theta = best.theta;
    let mut rsum = vec![0.0; profile.sizes.len()];
    for (i, r) in best.resid.iter().enumerate() {
        rsum[profile.slot[i]] += r;
    }
    let mut blups = BTreeMap::new();
    for (i, &c) in clusters.iter().enumerate() {
        let s = profile.slot[i];
        blups.entry(c).or_insert_with(|| {
            let ni = profile.sizes[s] as f64;
            theta * rsum[s] / (1.0 + ni * theta)
        });
    }
    Ok(LmmFit {
        beta,
        dropped,
        sigma2_e: best.sigma2_e,
        sigma2_b: theta * best.sigma2_e,
        blups,
        loglik: best.loglik,
        n_obs: n,
        n_clusters: profile.sizes.len(),
    })
}

/// Profiled log-likelihood at a fixed variance ratio (beta and s2_e at their
/// conditional optima).
pub fn profile_loglik(x: &DMatrix<f64>, y: &[f64], clusters: &[usize], theta: f64) -> Result<f64> {
    validate(x, y, clusters)?;
    Ok(Profile::new(x.clone(), y, clusters).evaluate(theta)?.loglik)
}

/// Marginal Gaussian log-likelihood at arbitrary parameters.
pub fn marginal_loglik(
    x: &DMatrix<f64>,
    y: &[f64],
    clusters: &[usize],
    beta: &[f64],
    sigma2_e: f64,
    sigma2_b: f64,
) -> f64 {
    let theta = sigma2_b / sigma2_e;
    let resid: Vec<f64> = (0..y.len())
        .map(|i| y[i] - (0..beta.len()).map(|j| x[(i, j)] * beta[j]).sum::<f64>())
        .collect();
    let mut groups: BTreeMap<usize, (usize, f64)> = BTreeMap::new();
    for (i, &c) in clusters.iter().enumerate() {
        let e = groups.entry(c).or_default();
        e.0 += 1;
        e.1 += resid[i];
    }
    let mut quad: f64 = resid.iter().map(|r| r * r).sum();
    let mut logdet = 0.0;
    for (ni, rs) in groups.values() {
        let ni = *ni as f64;
        quad -= theta / (1.0 + ni * theta) * rs * rs;
        logdet += (1.0 + ni * theta).ln();
    }
    let n = y.len() as f64;
    -0.5 * (n * (2.0 * std::f64::consts::PI * sigma2_e).ln() + logdet + quad / sigma2_e)
}

/// Gradient of [`marginal_loglik`] with respect to beta:
/// `X^T V^{-1} (y - X beta)` with `V = s2_e I + s2_b Z Z^T`.
pub fn loglik_score_beta(
    x: &DMatrix<f64>,
    y: &[f64],
    clusters: &[usize],
    beta: &[f64],
    sigma2_e: f64,
    sigma2_b: f64,
) -> Vec<f64> {
    let theta = sigma2_b / sigma2_e;
    let q = beta.len();
    let resid: Vec<f64> = (0..y.len())
        .map(|i| y[i] - (0..q).map(|j| x[(i, j)] * beta[j]).sum::<f64>())
        .collect();
    let mut groups: BTreeMap<usize, (usize, f64)> = BTreeMap::new();
    for (i, &c) in clusters.iter().enumerate() {
        let e = groups.entry(c).or_default();
        e.0 += 1;
        e.1 += resid[i];
    }
    let mut score = vec![0.0; q];
    for (i, &c) in clusters.iter().enumerate() {
        let (ni, rs) = groups[&c];
        let vinv_r = resid[i] - theta / (1.0 + ni as f64 * theta) * rs;
        for (j, s) in score.iter_mut().enumerate() {
            *s += x[(i, j)] * vinv_r / sigma2_e;
        }
    }
    score
}

/// `X beta` plus the cluster's random intercept when `include_random` is set
/// and the cluster was seen during fitting. Unknown clusters contribute zero.
pub fn predict_lmm(fit: &LmmFit, x: &DMatrix<f64>, clusters: &[usize], include_random: bool) -> Vec<f64> {
    (0..x.nrows())
        .map(|i| {
            let fixed: f64 = fit.beta.iter().enumerate().map(|(j, b)| x[(i, j)] * b).sum();
            let random = if include_random {
                fit.blups.get(&clusters[i]).copied().unwrap_or(0.0)
            } else {
                0.0
            };
            fixed + random
        })
        .collect()
}
