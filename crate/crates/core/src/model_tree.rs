//! Model-based recursive partitioning with linear (or constant) leaf models
//! and a global random intercept per cluster.
//!
//! Growing a node fits an ordinary least-squares model, tests every splitting
//! variable for parameter instability of that model, and splits on the most
//! significant variable when its Bonferroni-adjusted p-value is below `alpha`.
//! [`fit_lmm_tree`] alternates tree growth on the response with random
//! intercepts removed and a joint mixed-model refit of all leaf coefficients.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::linalg::{PivotedCholesky, RANK_TOL};
use crate::mixed_model::fit_random_intercept_dropping;
use crate::panel_data::{Column, PanelDataset};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LeafKind {
    Linear,
    Constant,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PValueMethod {
    /// Asymptotic tail approximation of the sup-LM statistic; chi-square for
    /// categorical variables.
    Asymptotic,
    /// Monte Carlo permutation of score rows.
    Permutation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MobParams {
    pub alpha: f64,
    /// Explicit minimum leaf size. When absent, `min_node_factor` times the
    /// number of leaf parameters plus one is used.
    pub min_node_size: Option<usize>,
    pub min_node_factor: usize,
    pub max_depth: usize,
    pub trim: f64,
    pub n_perm: usize,
    pub pvalue: PValueMethod,
    pub bonferroni: bool,
    pub max_em_iter: usize,
    pub em_tol: f64,
    pub seed: u64,
}

impl Default for MobParams {
    fn default() -> Self {
        Self {
            alpha: 0.05,
            min_node_size: None,
            min_node_factor: 10,
            max_depth: 10,
            trim: 0.1,
            n_perm: 199,
            pvalue: PValueMethod::Asymptotic,
            bonferroni: true,
            max_em_iter: 50,
            em_tol: 1e-4,
            seed: 0,
        }
    }
}

impl MobParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Argument(format!("alpha must lie in (0, 1), got {}", self.alpha)));
        }
        if !(0.0..0.5).contains(&self.trim) {
            return Err(Error::Argument(format!("trim must lie in [0, 0.5), got {}", self.trim)));
        }
        if self.pvalue == PValueMethod::Permutation && self.n_perm == 0 {
            return Err(Error::Argument("permutation p-values need n_perm >= 1".into()));
        }
        if self.min_node_factor == 0 && self.min_node_size.is_none() {
            return Err(Error::Argument("min_node_factor must be positive".into()));
        }
        Ok(())
    }

    /// 10 x (regressors + 2) for linear leaves and 20 for constant leaves
    /// under the default factor.
    pub fn effective_min_node_size(&self, n_regressors: usize, leaf_kind: LeafKind) -> usize {
        let floor = n_coefficients(n_regressors, leaf_kind) + 1;
        let size = self.min_node_size.unwrap_or(match leaf_kind {
            LeafKind::Linear => self.min_node_factor * (n_regressors + 2),
            LeafKind::Constant => self.min_node_factor * 2,
        });
        size.max(floor)
    }
}

fn n_coefficients(n_regressors: usize, leaf_kind: LeafKind) -> usize {
    match leaf_kind {
        LeafKind::Linear => n_regressors + 1,
        LeafKind::Constant => 1,
    }
}

/// Least-squares model of one node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeModel {
    /// Intercept followed by one coefficient per regressor.
    pub coefficients: Vec<f64>,
    /// Residual sum of squares.
    pub objective: f64,
    pub n_obs: usize,
    /// Per-observation scores, row-major `n_obs x coefficients.len()`.
    #[serde(skip)]
    pub scores: Vec<f64>,
    /// Design rows (intercept first), same layout as `scores`.
    #[serde(skip)]
    pub design: Vec<f64>,
}

impl NodeModel {
    pub fn n_params(&self) -> usize {
        self.coefficients.len()
    }

    pub fn score_row(&self, i: usize) -> &[f64] {
        let k = self.n_params();
        &self.scores[i * k..(i + 1) * k]
    }

    pub fn design_row(&self, i: usize) -> &[f64] {
        let k = self.n_params();
        &self.design[i * k..(i + 1) * k]
    }

    fn clear_row_data(&mut self) {
        self.scores = Vec::new();
        self.design = Vec::new();
    }
}

/// Gram statistics `(X^T X, X^T y, y^T y, n)` of an intercept-augmented design.
#[derive(Debug, Clone)]
struct Suff {
    k: usize,
    gram: Vec<f64>,
    xty: Vec<f64>,
    yty: f64,
    n: usize,
}

impl Suff {
    fn new(k: usize) -> Self {
        Self {
            k,
            gram: vec![0.0; k * k],
            xty: vec![0.0; k],
            yty: 0.0,
            n: 0,
        }
    }

    fn add(&mut self, x: &[f64], y: f64, sign: f64) {
        let k = self.k;
        for a in 0..k {
            let xa = x[a] * sign;
            self.xty[a] += xa * y;
            for b in 0..k {
                self.gram[a * k + b] += xa * x[b];
            }
        }
        self.yty += sign * y * y;
        if sign > 0.0 {
            self.n += 1;
        } else {
            self.n -= 1;
        }
    }

    fn merge(&mut self, other: &Suff) {
        for (a, b) in self.gram.iter_mut().zip(&other.gram) {
            *a += b;
        }
        for (a, b) in self.xty.iter_mut().zip(&other.xty) {
            *a += b;
        }
        self.yty += other.yty;
        self.n += other.n;
    }

    fn minus(&self, other: &Suff) -> Suff {
        Suff {
            k: self.k,
            gram: self.gram.iter().zip(&other.gram).map(|(a, b)| a - b).collect(),
            xty: self.xty.iter().zip(&other.xty).map(|(a, b)| a - b).collect(),
            yty: self.yty - other.yty,
            n: self.n - other.n,
        }
    }

    fn solve(&self) -> (Vec<f64>, f64) {
        if self.k == 1 {
            let mean = self.xty[0] / self.gram[0];
            return (vec![mean], (self.yty - mean * self.xty[0]).max(0.0));
        }
        let ch = PivotedCholesky::new(&self.gram, self.k, RANK_TOL);
        let beta = ch.solve(&self.xty);
        let fit: f64 = beta.iter().zip(&self.xty).map(|(b, v)| b * v).sum();
        (beta, (self.yty - fit).max(0.0))
    }
}

fn design_row(regressors: &[&[f64]], i: usize, leaf_kind: LeafKind, out: &mut Vec<f64>) {
    out.clear();
    out.push(1.0);
    if leaf_kind == LeafKind::Linear {
        out.extend(regressors.iter().map(|r| r[i]));
    }
}

/// Ordinary least squares of `y` on an intercept plus `regressors` (intercept
/// only for constant leaves). Scores are design row times residual.
pub fn fit_node_model(y: &[f64], regressors: &[&[f64]], leaf_kind: LeafKind) -> Result<NodeModel> {
    let n = y.len();
    let k = n_coefficients(regressors.len(), leaf_kind);
    if n < k + 1 {
        return Err(Error::InsufficientData(format!(
            "node with {n} rows cannot fit {k} coefficients"
        )));
    }
    if regressors.iter().any(|r| r.len() != n) {
        return Err(Error::Argument("regressor length mismatch".into()));
    }
    let mut suff = Suff::new(k);
    let mut row = Vec::with_capacity(k);
    for i in 0..n {
        design_row(regressors, i, leaf_kind, &mut row);
        suff.add(&row, y[i], 1.0);
    }
    let (coefficients, _) = suff.solve();
    let mut scores = vec![0.0; n * k];
    let mut design = vec![0.0; n * k];
    let mut objective = 0.0;
    for i in 0..n {
        design_row(regressors, i, leaf_kind, &mut row);
        let fitted: f64 = row.iter().zip(&coefficients).map(|(x, b)| x * b).sum();
        let resid = y[i] - fitted;
        objective += resid * resid;
        for a in 0..k {
            scores[i * k + a] = row[a] * resid;
            design[i * k + a] = row[a];
        }
    }
    Ok(NodeModel {
        coefficients,
        objective,
        n_obs: n,
        scores,
        design,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitKind {
    Numeric,
    Categorical,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityResult {
    pub variable: String,
    pub kind: SplitKind,
    /// sup-LM statistic (numeric) or chi-square LM statistic (categorical).
    pub statistic: f64,
    pub p_value: f64,
    /// Natural log of the p-value; finite even when `p_value` underflows.
    pub log_p_value: f64,
    /// Set when the variable carries no ordering or grouping information.
    pub degenerate: bool,
}

/// Splitting-variable values aligned with the rows of a [`NodeModel`].
#[derive(Debug, Clone, Copy)]
pub enum SplitValues<'a> {
    Numeric(&'a [f64]),
    Categorical(&'a [u32]),
}

fn derive_seed(seed: u64, node: &str, variable: &str) -> u64 {
    // FNV-1a; stable across platforms and releases
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    let mut eat = |bytes: &[u8]| {
        for &b in bytes {
            h ^= b as u64;
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
    };
    eat(&seed.to_le_bytes());
    eat(node.as_bytes());
    eat(&[0xff]);
    eat(variable.as_bytes());
    h
}

/// Log upper-tail probability of the sup-LM statistic over the trimmed
/// interval `[pi1, pi2]` for `k` parameters (Bessel-process tail
/// approximation).
pub fn sup_lm_log_pvalue(stat: f64, k: usize, pi1: f64, pi2: f64) -> f64 {
    if !(stat > 0.0) || k == 0 {
        return 0.0;
    }
    let kf = k as f64;
    let lambda = (pi2 * (1.0 - pi1)) / (pi1 * (1.0 - pi2));
    let bracket = (1.0 - kf / stat) * lambda.ln() + 2.0 / stat;
    if !(bracket > 0.0) {
        return 0.0;
    }
    let lp = 0.5 * kf * stat.ln() - 0.5 * stat - 0.5 * kf * std::f64::consts::LN_2 - ln_gamma(0.5 * kf)
        + bracket.ln();
    lp.min(0.0)
}

/// Log survival function of the chi-square distribution.
pub fn chi2_log_sf(stat: f64, df: f64) -> f64 {
    if !(stat > 0.0) {
        return 0.0;
    }
    let sf = ChiSquared::new(df).map(|d| d.sf(stat)).unwrap_or(f64::NAN);
    if sf > 1e-250 {
        return sf.ln().min(0.0);
    }
    let a = 0.5 * df;
    let z = 0.5 * stat;
    let series = 1.0 + (a - 1.0) / z + (a - 1.0) * (a - 2.0) / (z * z);
    ((a - 1.0) * z.ln() - z - ln_gamma(a) + series.max(f64::MIN_POSITIVE).ln()).min(0.0)
}

/// Cumulative score process of a node model along an ordering. Each partial
/// sum is standardized by its exact variance given the regressors, which
/// reduces to `t (1 - t) J` when the regressors do not vary with the ordering.
struct ScoreProcess<'a> {
    model: &'a NodeModel,
    /// Coefficients with linearly independent design columns.
    kept: Vec<usize>,
    gram: PivotedCholesky,
    /// sum psi psi^T over kept coordinates
    j: Vec<f64>,
}

impl<'a> ScoreProcess<'a> {
    fn new(model: &'a NodeModel) -> Self {
        let k = model.n_params();
        let mut a = vec![0.0; k * k];
        for i in 0..model.n_obs {
            let x = model.design_row(i);
            for p in 0..k {
                for q in 0..k {
                    a[p * k + q] += x[p] * x[q];
                }
            }
        }
        let kept = PivotedCholesky::new(&a, k, RANK_TOL).kept().to_vec();
        let r = kept.len();
        let reduce = |m: &[f64]| -> Vec<f64> {
            let mut out = vec![0.0; r * r];
            for (p, &kp) in kept.iter().enumerate() {
                for (q, &kq) in kept.iter().enumerate() {
                    out[p * r + q] = m[kp * k + kq];
                }
            }
            out
        };
        let gram = PivotedCholesky::new(&reduce(&a), r, RANK_TOL);
        let mut j = vec![0.0; k * k];
        for i in 0..model.n_obs {
            let s = model.score_row(i);
            for p in 0..k {
                for q in 0..k {
                    j[p * k + q] += s[p] * s[q];
                }
            }
        }
        let j = reduce(&j);
        Self { model, kept, gram, j }
    }

    fn rank(&self) -> usize {
        self.kept.len()
    }

    fn sup_lm(&self, perm: &[usize], breaks: &[usize]) -> f64 {
        let r = self.kept.len();
        let mut s = vec![0.0; r];
        let mut jc = vec![0.0; r * r];
        let mut ac = vec![0.0; r * r];
        let mut x_mat = vec![0.0; r * r];
        let mut col = vec![0.0; r];
        let mut v = vec![0.0; r * r];
        let mut jx = vec![0.0; r * r];
        let (mut psi, mut x) = (vec![0.0; r], vec![0.0; r]);
        let mut next = 0;
        let mut best = 0.0f64;
        for (pos, &row) in perm.iter().enumerate() {
            if next == breaks.len() {
                break;
            }
            let (sr, dr) = (self.model.score_row(row), self.model.design_row(row));
            for (p, &kp) in self.kept.iter().enumerate() {
                psi[p] = sr[kp];
                x[p] = dr[kp];
            }
            for p in 0..r {
                s[p] += psi[p];
                for q in 0..r {
                    jc[p * r + q] += psi[p] * psi[q];
                    ac[p * r + q] += x[p] * x[q];
                }
            }
            if pos + 1 != breaks[next] {
                continue;
            }
            next += 1;
            // X = A^{-1} A_c
            for q in 0..r {
                for p in 0..r {
                    col[p] = ac[p * r + q];
                }
                let sol = self.gram.solve(&col);
                for p in 0..r {
                    x_mat[p * r + q] = sol[p];
                }
            }
            // V = Jc - X'Jc - Jc X + X'JX
            for p in 0..r {
                for q in 0..r {
                    jx[p * r + q] = (0..r).map(|m| self.j[p * r + m] * x_mat[m * r + q]).sum();
                }
            }
            for p in 0..r {
                for q in 0..r {
                    let mut acc = jc[p * r + q];
                    for m in 0..r {
                        acc += x_mat[m * r + p] * (jx[m * r + q] - jc[m * r + q]) - jc[p * r + m] * x_mat[m * r + q];
                    }
                    v[p * r + q] = acc;
                }
            }
            let vc = PivotedCholesky::new(&v, r, 1e-10);
            if vc.rank() > 0 {
                best = best.max(vc.quad_form(&s));
            }
        }
        best
    }
}

/// Parameter-stability test of `model` along one splitting variable.
///
/// Numeric variables use the supremum of the standardized cumulative score
/// process over the trimmed range; categorical variables use the chi-square
/// LM statistic of within-level score sums. Permutation p-values are
/// `(1 + #{perm >= observed}) / (n_perm + 1)` with a seed derived from
/// `params.seed`, `node_key` and `variable`.
pub fn stability_test(
    model: &NodeModel,
    values: SplitValues<'_>,
    variable: &str,
    params: &MobParams,
    node_key: &str,
) -> StabilityResult {
    let n = model.n_obs;
    let k = model.n_params();
    let kind = match values {
        SplitValues::Numeric(_) => SplitKind::Numeric,
        SplitValues::Categorical(_) => SplitKind::Categorical,
    };
    let degenerate = StabilityResult {
        variable: variable.to_string(),
        kind,
        statistic: 0.0,
        p_value: 1.0,
        log_p_value: 0.0,
        degenerate: true,
    };
    // J = (1/n) sum psi psi^T
    let mut j = vec![0.0; k * k];
    for i in 0..n {
        let s = model.score_row(i);
        for a in 0..k {
            for b in 0..k {
                j[a * k + b] += s[a] * s[b];
            }
        }
    }
    j.iter_mut().for_each(|v| *v /= n as f64);
    let chol = PivotedCholesky::new(&j, k, 1e-10);
    if chol.rank() == 0 || n < 2 {
        return degenerate;
    }
    let rank = chol.rank();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(params.seed, node_key, variable));

    match values {
        SplitValues::Numeric(x) => {
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|&a, &b| x[a].total_cmp(&x[b]).then(a.cmp(&b)));
            let i_lo = ((params.trim * n as f64).ceil() as usize).max(1);
            let i_hi = n.saturating_sub(i_lo);
            let breaks: Vec<usize> = (i_lo..=i_hi)
                .filter(|&i| i >= 1 && i < n && x[order[i - 1]] < x[order[i]])
                .collect();
            if breaks.is_empty() {
                return degenerate;
            }
            let proc = ScoreProcess::new(model);
            let sup = |perm: &[usize]| proc.sup_lm(perm, &breaks);
            let stat = sup(&order);
            let log_p = match params.pvalue {
                PValueMethod::Asymptotic => {
                    let pi1 = i_lo as f64 / n as f64;
                    let pi2 = i_hi as f64 / n as f64;
                    sup_lm_log_pvalue(stat, proc.rank(), pi1, pi2)
                }
                PValueMethod::Permutation => {
                    let mut perm = order.clone();
                    let mut hits = 0usize;
                    for _ in 0..params.n_perm {
                        perm.shuffle(&mut rng);
                        if sup(&perm) >= stat * (1.0 - 1e-12) {
                            hits += 1;
                        }
                    }
                    ((1 + hits) as f64 / (params.n_perm + 1) as f64).ln()
                }
            };
            StabilityResult {
                variable: variable.to_string(),
                kind,
                statistic: stat,
                p_value: log_p.exp(),
                log_p_value: log_p,
                degenerate: false,
            }
        }
        SplitValues::Categorical(codes) => {
            let n_levels = codes.iter().map(|&c| c as usize + 1).max().unwrap_or(0);
            let lm_stat = |assign: &[u32]| -> (f64, usize) {
                let mut sums = vec![0.0; n_levels * k];
                let mut counts = vec![0usize; n_levels];
                for (i, &c) in assign.iter().enumerate() {
                    let c = c as usize;
                    counts[c] += 1;
                    for (a, s) in model.score_row(i).iter().enumerate() {
                        sums[c * k + a] += s;
                    }
                }
                let mut stat = 0.0;
                let mut present = 0;
                for c in 0..n_levels {
                    if counts[c] > 0 {
                        present += 1;
                        stat += chol.quad_form(&sums[c * k..(c + 1) * k]) / counts[c] as f64;
                    }
                }
                (stat, present)
            };
            let (stat, present) = lm_stat(codes);
            if present < 2 {
                return degenerate;
            }
            let log_p = match params.pvalue {
                PValueMethod::Asymptotic => chi2_log_sf(stat, (rank * (present - 1)) as f64),
                PValueMethod::Permutation => {
                    let mut perm = codes.to_vec();
                    let mut hits = 0usize;
                    for _ in 0..params.n_perm {
                        perm.shuffle(&mut rng);
                        if lm_stat(&perm).0 >= stat * (1.0 - 1e-12) {
                            hits += 1;
                        }
                    }
                    ((1 + hits) as f64 / (params.n_perm + 1) as f64).ln()
                }
            };
            StabilityResult {
                variable: variable.to_string(),
                kind,
                statistic: stat,
                p_value: log_p.exp(),
                log_p_value: log_p,
                degenerate: false,
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum SplitRule {
    /// Rows with `value <= threshold` go left.
    Numeric { variable: String, threshold: f64 },
    /// Rows whose level is in `left_levels` go left. Levels never seen in
    /// training go to the side that held more training rows.
    Categorical {
        variable: String,
        left_levels: Vec<String>,
        right_levels: Vec<String>,
        unseen_left: bool,
    },
}

impl SplitRule {
    pub fn variable(&self) -> &str {
        match self {
            SplitRule::Numeric { variable, .. } | SplitRule::Categorical { variable, .. } => variable,
        }
    }

    fn describe(&self) -> String {
        match self {
            SplitRule::Numeric { variable, threshold } => format!("{variable} <= {threshold}"),
            SplitRule::Categorical {
                variable, left_levels, ..
            } => format!("{variable} in {{{}}}", left_levels.join(", ")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum NodeKind {
    Split {
        rule: SplitRule,
        left: usize,
        right: usize,
        /// Adjusted p-value of the winning stability test.
        p_value: f64,
        log_p_value: f64,
    },
    Leaf {
        model: NodeModel,
        /// Training-row counts per level of every categorical splitter.
        level_counts: BTreeMap<String, BTreeMap<String, usize>>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeNode {
    pub id: usize,
    /// `root`, `root.L`, `root.L.R`, ...
    pub path: String,
    pub depth: usize,
    pub n_obs: usize,
    pub kind: NodeKind,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RandomEffects {
    /// Cluster id -> predicted random intercept.
    pub blups: BTreeMap<String, f64>,
    pub sigma2_b: f64,
    pub sigma2_e: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelTree {
    /// Pre-order node arena; node 0 is the root.
    pub nodes: Vec<TreeNode>,
    pub leaf_kind: LeafKind,
    pub regressors: Vec<String>,
    pub splitters: Vec<String>,
    pub min_node_size: usize,
    pub random: RandomEffects,
    pub loglik: Option<f64>,
    /// Joint log-likelihood of every accepted alternation step.
    pub loglik_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

impl ModelTree {
    pub fn root(&self) -> &TreeNode {
        &self.nodes[0]
    }

    pub fn leaves(&self) -> impl Iterator<Item = &TreeNode> {
        self.nodes.iter().filter(|n| matches!(n.kind, NodeKind::Leaf { .. }))
    }

    pub fn n_leaves(&self) -> usize {
        self.leaves().count()
    }

    pub fn depth(&self) -> usize {
        self.nodes.iter().map(|n| n.depth).max().unwrap_or(0)
    }

    /// Names of the coefficients stored in every leaf.
    pub fn coefficient_names(&self) -> Vec<String> {
        let mut names = vec!["(Intercept)".to_string()];
        if self.leaf_kind == LeafKind::Linear {
            names.extend(self.regressors.iter().cloned());
        }
        names
    }

    /// Indented text form: one node per line with its path, split rule or
    /// leaf coefficients.
    pub fn to_text(&self) -> String {
        let names = self.coefficient_names();
        let mut out = String::new();
        for node in &self.nodes {
            let indent = "  ".repeat(node.depth);
            match &node.kind {
                NodeKind::Split { rule, p_value, .. } => {
                    let _ = writeln!(
                        out,
                        "{indent}[{}] n={} split {} (p={:.3e})",
                        node.path,
                        node.n_obs,
                        rule.describe(),
                        p_value
                    );
                }
                NodeKind::Leaf { model, .. } => {
                    let coefs: Vec<String> = names
                        .iter()
                        .zip(&model.coefficients)
                        .map(|(n, c)| format!("{n}={c:.6}"))
                        .collect();
                    let _ = writeln!(
                        out,
                        "{indent}[{}] n={} leaf {}",
                        node.path,
                        node.n_obs,
                        coefs.join(" ")
                    );
                }
            }
        }
        out
    }
}

#[derive(Clone, Copy)]
enum SplitCol<'a> {
    Numeric(&'a [f64]),
    Categorical { codes: &'a [u32], levels: &'a [String] },
}

struct Ctx<'a> {
    response: &'a [f64],
    regressors: Vec<&'a [f64]>,
    splitters: Vec<(String, SplitCol<'a>)>,
    leaf_kind: LeafKind,
    params: &'a MobParams,
    min_node: usize,
    fit_min: usize,
}

impl<'a> Ctx<'a> {
    fn new(
        ds: &'a PanelDataset,
        response: &'a [f64],
        regressors: &[String],
        splitters: &[String],
        leaf_kind: LeafKind,
        params: &'a MobParams,
    ) -> Result<Self> {
        params.validate()?;
        if response.len() != ds.n_rows() {
            return Err(Error::Argument("working response length mismatch".into()));
        }
        let regs = match leaf_kind {
            LeafKind::Linear => regressors
                .iter()
                .map(|r| ds.numeric(r))
                .collect::<Result<Vec<_>>>()?,
            LeafKind::Constant => Vec::new(),
        };
        let mut splits = Vec::with_capacity(splitters.len());
        for s in splitters {
            let col = match ds.column(s) {
                Some(Column::Numeric(v)) => SplitCol::Numeric(v),
                Some(Column::Categorical { codes, levels }) => SplitCol::Categorical { codes, levels },
                None => return Err(Error::Schema(format!("missing column `{s}`"))),
            };
            splits.push((s.clone(), col));
        }
        let n_reg = regs.len();
        Ok(Self {
            response,
            regressors: regs,
            splitters: splits,
            leaf_kind,
            params,
            min_node: params.effective_min_node_size(n_reg, leaf_kind),
            fit_min: n_coefficients(n_reg, leaf_kind) + 1,
        })
    }

    fn n_coef(&self) -> usize {
        n_coefficients(self.regressors.len(), self.leaf_kind)
    }

    fn row_design(&self, r: usize, out: &mut Vec<f64>) {
        design_row(&self.regressors, r, self.leaf_kind, out);
    }

    fn level_counts(&self, rows: &[usize]) -> BTreeMap<String, BTreeMap<String, usize>> {
        let mut out = BTreeMap::new();
        for (name, col) in &self.splitters {
            if let SplitCol::Categorical { codes, levels } = col {
                let mut counts: BTreeMap<String, usize> = BTreeMap::new();
                for &r in rows {
                    *counts.entry(levels[codes[r] as usize].clone()).or_default() += 1;
                }
                out.insert(name.clone(), counts);
            }
        }
        out
    }
}

enum Grown {
    Leaf {
        model: NodeModel,
        level_counts: BTreeMap<String, BTreeMap<String, usize>>,
        n: usize,
    },
    Split {
        rule: SplitRule,
        p_value: f64,
        log_p_value: f64,
        n: usize,
        left: Box<Grown>,
        right: Box<Grown>,
    },
}

fn grow_node(ctx: &Ctx<'_>, rows: Vec<usize>, depth: usize, path: String) -> Result<Grown> {
    let n = rows.len();
    let y: Vec<f64> = rows.iter().map(|&r| ctx.response[r]).collect();
    let regs: Vec<Vec<f64>> = ctx
        .regressors
        .iter()
        .map(|col| rows.iter().map(|&r| col[r]).collect())
        .collect();
    let reg_refs: Vec<&[f64]> = regs.iter().map(|v| v.as_slice()).collect();
    let mut model = fit_node_model(&y, &reg_refs, ctx.leaf_kind)?;

    let leaf = |mut model: NodeModel| {
        model.clear_row_data();
        Ok(Grown::Leaf {
            model,
            level_counts: ctx.level_counts(&rows),
            n,
        })
    };
    if depth >= ctx.params.max_depth || n < 2 * ctx.min_node || ctx.splitters.is_empty() {
        return leaf(model);
    }

    let tests: Vec<StabilityResult> = ctx
        .splitters
        .par_iter()
        .map(|(name, col)| match col {
            SplitCol::Numeric(v) => {
                let vals: Vec<f64> = rows.iter().map(|&r| v[r]).collect();
                stability_test(&model, SplitValues::Numeric(&vals), name, ctx.params, &path)
            }
            SplitCol::Categorical { codes, .. } => {
                let vals: Vec<u32> = rows.iter().map(|&r| codes[r]).collect();
                stability_test(&model, SplitValues::Categorical(&vals), name, ctx.params, &path)
            }
        })
        .collect();
    let (best, best_test) = tests
        .iter()
        .enumerate()
        .fold(None::<(usize, &StabilityResult)>, |acc, (j, t)| match acc {
            Some((_, b)) if b.log_p_value <= t.log_p_value => acc,
            _ => Some((j, t)),
        })
        .expect("at least one splitter");
    let mut log_p = best_test.log_p_value;
    if ctx.params.bonferroni {
        log_p = (log_p + (ctx.splitters.len() as f64).ln()).min(0.0);
    }
    if best_test.degenerate || log_p >= ctx.params.alpha.ln() {
        return leaf(model);
    }

    let Some((rule, goes_left)) = best_split(ctx, &rows, &y, best) else {
        return leaf(model);
    };
    model.clear_row_data();
    drop(model);
    let (left_rows, right_rows): (Vec<usize>, Vec<usize>) = rows
        .iter()
        .zip(&goes_left)
        .fold((Vec::new(), Vec::new()), |(mut l, mut r), (&row, &g)| {
            if g {
                l.push(row);
            } else {
                r.push(row);
            }
            (l, r)
        });
    let (left, right) = rayon::join(
        || grow_node(ctx, left_rows, depth + 1, format!("{path}.L")),
        || grow_node(ctx, right_rows, depth + 1, format!("{path}.R")),
    );
    Ok(Grown::Split {
        rule,
        p_value: log_p.exp(),
        log_p_value: log_p,
        n,
        left: Box::new(left?),
        right: Box::new(right?),
    })
}

/// Best admissible binary split of `rows` on splitter `j` by total child SSE.
/// Returns the rule and a per-row left/right flag.
fn best_split(ctx: &Ctx<'_>, rows: &[usize], y: &[f64], j: usize) -> Option<(SplitRule, Vec<bool>)> {
    let n = rows.len();
    let k = ctx.n_coef();
    let min = ctx.min_node.max(ctx.fit_min);
    let (name, col) = &ctx.splitters[j];
    let mut xrow = Vec::with_capacity(k);
    match *col {
        SplitCol::Numeric(v) => {
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|&a, &b| v[rows[a]].total_cmp(&v[rows[b]]).then(a.cmp(&b)));
            let mut total = Suff::new(k);
            for i in 0..n {
                ctx.row_design(rows[i], &mut xrow);
                total.add(&xrow, y[i], 1.0);
            }
            let mut left = Suff::new(k);
            let mut best: Option<(f64, f64)> = None;
            for pos in 0..n - 1 {
                let i = order[pos];
                ctx.row_design(rows[i], &mut xrow);
                left.add(&xrow, y[i], 1.0);
                let (lo, hi) = (v[rows[i]], v[rows[order[pos + 1]]]);
                let nl = pos + 1;
                if lo == hi || nl < min || n - nl < min {
                    continue;
                }
                let right = total.minus(&left);
                let obj = left.solve().1 + right.solve().1;
                if best.is_none_or(|(b, _)| obj < b) {
                    best = Some((obj, 0.5 * (lo + hi)));
                }
            }
            let (_, threshold) = best?;
            let goes_left = rows.iter().map(|&r| v[r] <= threshold).collect();
            Some((
                SplitRule::Numeric {
                    variable: name.clone(),
                    threshold,
                },
                goes_left,
            ))
        }
        SplitCol::Categorical { codes, levels } => {
            let mut by_level: BTreeMap<u32, Suff> = BTreeMap::new();
            for i in 0..n {
                ctx.row_design(rows[i], &mut xrow);
                by_level
                    .entry(codes[rows[i]])
                    .or_insert_with(|| Suff::new(k))
                    .add(&xrow, y[i], 1.0);
            }
            let mut present: Vec<(u32, Suff)> = by_level.into_iter().collect();
            let l = present.len();
            if l < 2 {
                return None;
            }
            let combine = |members: &mut dyn Iterator<Item = usize>, present: &[(u32, Suff)]| {
                let mut s = Suff::new(k);
                for m in members {
                    s.merge(&present[m].1);
                }
                s
            };
            // candidate partitions as left-membership masks over `present`
            let candidates: Vec<Vec<bool>> = if l <= 10 {
                (0..(1usize << (l - 1)) - 1)
                    .map(|mask| {
                        (0..l)
                            .map(|m| m == 0 || (mask >> (m - 1)) & 1 == 1)
                            .collect()
                    })
                    .collect()
            } else {
                present.sort_by(|a, b| {
                    let ma = a.1.xty[0] / a.1.n as f64;
                    let mb = b.1.xty[0] / b.1.n as f64;
                    ma.total_cmp(&mb).then(a.0.cmp(&b.0))
                });
                (1..l).map(|cut| (0..l).map(|m| m < cut).collect()).collect()
            };
            let mut best: Option<(f64, usize)> = None;
            for (ci, cand) in candidates.iter().enumerate() {
                let left = combine(&mut (0..l).filter(|&m| cand[m]), &present);
                let right = combine(&mut (0..l).filter(|&m| !cand[m]), &present);
                if left.n < min || right.n < min {
                    continue;
                }
                let obj = left.solve().1 + right.solve().1;
                if best.is_none_or(|(b, _)| obj < b) {
                    best = Some((obj, ci));
                }
            }
            let (_, ci) = best?;
            let cand = &candidates[ci];
            let mut left_codes = Vec::new();
            let (mut left_levels, mut right_levels) = (Vec::new(), Vec::new());
            let (mut nl, mut nr) = (0, 0);
            for (m, (code, s)) in present.iter().enumerate() {
                if cand[m] {
                    left_codes.push(*code);
                    left_levels.push(levels[*code as usize].clone());
                    nl += s.n;
                } else {
                    right_levels.push(levels[*code as usize].clone());
                    nr += s.n;
                }
            }
            let goes_left = rows.iter().map(|&r| left_codes.contains(&codes[r])).collect();
            Some((
                SplitRule::Categorical {
                    variable: name.clone(),
                    left_levels,
                    right_levels,
                    unseen_left: nl >= nr,
                },
                goes_left,
            ))
        }
    }
}

fn flatten(grown: Grown, path: String, depth: usize, nodes: &mut Vec<TreeNode>) -> usize {
    let id = nodes.len();
    match grown {
        Grown::Leaf {
            model,
            level_counts,
            n,
        } => {
            nodes.push(TreeNode {
                id,
                path,
                depth,
                n_obs: n,
                kind: NodeKind::Leaf { model, level_counts },
            });
        }
        Grown::Split {
            rule,
            p_value,
            log_p_value,
            n,
            left,
            right,
        } => {
            nodes.push(TreeNode {
                id,
                path: path.clone(),
                depth,
                n_obs: n,
                kind: NodeKind::Leaf {
                    model: NodeModel {
                        coefficients: Vec::new(),
                        objective: 0.0,
                        n_obs: n,
                        scores: Vec::new(),
                        design: Vec::new(),
                    },
                    level_counts: BTreeMap::new(),
                },
            });
            let l = flatten(*left, format!("{path}.L"), depth + 1, nodes);
            let r = flatten(*right, format!("{path}.R"), depth + 1, nodes);
            nodes[id].kind = NodeKind::Split {
                rule,
                left: l,
                right: r,
                p_value,
                log_p_value,
            };
        }
    }
    id
}

fn grow_with(ctx: &Ctx<'_>, rows: Vec<usize>, regressors: &[String], splitters: &[String]) -> Result<ModelTree> {
    let n = rows.len();
    if n < ctx.fit_min {
        return Err(Error::InsufficientData(format!(
            "{n} rows cannot support a root model with {} coefficients",
            ctx.n_coef()
        )));
    }
    let grown = grow_node(ctx, rows, 0, "root".to_string())?;
    let mut nodes = Vec::new();
    flatten(grown, "root".to_string(), 0, &mut nodes);
    Ok(ModelTree {
        nodes,
        leaf_kind: ctx.leaf_kind,
        regressors: match ctx.leaf_kind {
            LeafKind::Linear => regressors.to_vec(),
            LeafKind::Constant => Vec::new(),
        },
        splitters: splitters.to_vec(),
        min_node_size: ctx.min_node,
        random: RandomEffects::default(),
        loglik: None,
        loglik_trace: Vec::new(),
        iterations: 0,
        converged: true,
    })
}

/// Grows the fixed-effect tree on `working_response` (indexed by dataset
/// row). Leaves hold ordinary least-squares fits; no random part is fitted.
pub fn grow_mob_tree(
    ds: &PanelDataset,
    working_response: &[f64],
    regressors: &[String],
    splitters: &[String],
    leaf_kind: LeafKind,
    params: &MobParams,
) -> Result<ModelTree> {
    let ctx = Ctx::new(ds, working_response, regressors, splitters, leaf_kind, params)?;
    grow_with(&ctx, ds.canonical_order(), regressors, splitters)
}

/// Leaf node id for every row of `ds`.
fn route(tree: &ModelTree, ds: &PanelDataset) -> Result<(Vec<usize>, usize)> {
    enum Lookup<'a> {
        Num(&'a [f64]),
        Cat(&'a [u32], &'a [String]),
    }
    let mut cols: HashMap<&str, Lookup<'_>> = HashMap::new();
    for node in &tree.nodes {
        if let NodeKind::Split { rule, .. } = &node.kind {
            let name = rule.variable();
            if cols.contains_key(name) {
                continue;
            }
            let col = ds
                .column(name)
                .ok_or_else(|| Error::Schema(format!("missing column `{name}`")))?;
            let lookup = match (rule, col) {
                (SplitRule::Numeric { .. }, Column::Numeric(v)) => Lookup::Num(v),
                (SplitRule::Categorical { .. }, Column::Categorical { codes, levels }) => {
                    Lookup::Cat(codes, levels)
                }
                _ => {
                    return Err(Error::Schema(format!(
                        "column `{name}` has a different type than in training"
                    )))
                }
            };
            cols.insert(name, lookup);
        }
    }
    let mut unseen = 0;
    let mut out = Vec::with_capacity(ds.n_rows());
    for row in 0..ds.n_rows() {
        let mut id = 0;
        let mut flagged = false;
        loop {
            match &tree.nodes[id].kind {
                NodeKind::Leaf { .. } => break,
                NodeKind::Split { rule, left, right, .. } => {
                    let go_left = match (rule, &cols[rule.variable()]) {
                        (SplitRule::Numeric { threshold, .. }, Lookup::Num(v)) => v[row] <= *threshold,
                        (
                            SplitRule::Categorical {
                                left_levels,
                                right_levels,
                                unseen_left,
                                ..
                            },
                            Lookup::Cat(codes, levels),
                        ) => {
                            let level = &levels[codes[row] as usize];
                            if left_levels.contains(level) {
                                true
                            } else if right_levels.contains(level) {
                                false
                            } else {
                                flagged = true;
                                *unseen_left
                            }
                        }
                        _ => unreachable!("checked above"),
                    };
                    id = if go_left { *left } else { *right };
                }
            }
        }
        unseen += flagged as usize;
        out.push(id);
    }
    Ok((out, unseen))
}

/// Leaf node id for every row of `ds`.
pub fn leaf_assignment(tree: &ModelTree, ds: &PanelDataset) -> Result<Vec<usize>> {
    Ok(route(tree, ds)?.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub values: Vec<f64>,
    /// Rows routed through a split whose categorical level was unseen in
    /// training.
    pub unseen_level_rows: usize,
}

/// Leaf-model predictions plus the cluster's random intercept when
/// `include_random` is set and the cluster was seen in training.
pub fn predict_tree_detailed(tree: &ModelTree, ds: &PanelDataset, include_random: bool) -> Result<Prediction> {
    let (leaves, unseen) = route(tree, ds)?;
    let regs: Vec<&[f64]> = tree
        .regressors
        .iter()
        .map(|r| ds.numeric(r))
        .collect::<Result<_>>()?;
    if unseen > 0 {
        log::warn!("{unseen} row(s) carried a categorical level unseen in training");
    }
    let values = leaves
        .iter()
        .enumerate()
        .map(|(row, &leaf)| {
            let NodeKind::Leaf { model, .. } = &tree.nodes[leaf].kind else {
                unreachable!("routing ends at a leaf")
            };
            let c = &model.coefficients;
            let mut v = c[0] + regs.iter().zip(&c[1..]).map(|(r, b)| r[row] * b).sum::<f64>();
            if include_random {
                v += tree.random.blups.get(ds.cluster_label(row)).copied().unwrap_or(0.0);
            }
            v
        })
        .collect();
    Ok(Prediction {
        values,
        unseen_level_rows: unseen,
    })
}

pub fn predict_tree(tree: &ModelTree, ds: &PanelDataset, include_random: bool) -> Result<Vec<f64>> {
    Ok(predict_tree_detailed(tree, ds, include_random)?.values)
}

/// Split variables of all internal nodes, minus `exclude`, in splitter
/// declaration order.
pub fn used_split_features<S: AsRef<str>>(tree: &ModelTree, exclude: &[S]) -> Vec<String> {
    let used: Vec<&str> = tree
        .nodes
        .iter()
        .filter_map(|n| match &n.kind {
            NodeKind::Split { rule, .. } => Some(rule.variable()),
            NodeKind::Leaf { .. } => None,
        })
        .collect();
    tree.splitters
        .iter()
        .filter(|s| used.contains(&s.as_str()) && !exclude.iter().any(|e| e.as_ref() == s.as_str()))
        .cloned()
        .collect()
}

/// Fits the mixed-effects tree by alternating (1) tree growth on the response
/// minus current random intercepts and (2) a joint random-intercept fit of all
/// leaf coefficients given the tree structure. Stops when the joint
/// log-likelihood changes by less than `em_tol`, after `max_em_iter`
/// alternations, or when a step would lower the likelihood (the better
/// previous step is kept). Constant leaves give the RE-EM tree.
pub fn fit_lmm_tree(
    ds: &PanelDataset,
    regressors: &[String],
    splitters: &[String],
    leaf_kind: LeafKind,
    params: &MobParams,
) -> Result<ModelTree> {
    let n = ds.n_rows();
    let y = ds.response();
    let codes = ds.cluster_codes();
    let canonical = ds.canonical_order();
    let mut b = vec![0.0; ds.n_clusters()];
    let mut best: Option<ModelTree> = None;
    let mut trace: Vec<f64> = Vec::new();
    let mut iterations = 0;
    let mut converged = false;

    for iter in 0..=params.max_em_iter {
        let working: Vec<f64> = (0..n).map(|i| y[i] - b[codes[i]]).collect();
        let ctx = Ctx::new(ds, &working, regressors, splitters, leaf_kind, params)?;
        let mut tree = grow_with(&ctx, canonical.clone(), regressors, splitters)?;
        let fit_b = refit_jointly(&mut tree, ds, &ctx, &canonical)?;
        let ll = tree.loglik.expect("set by refit");
        iterations = iter;
        if let Some(prev) = &best {
            let prev_ll = prev.loglik.expect("set by refit");
            if ll < prev_ll {
                log::debug!("alternation step {iter} lowered the log-likelihood; keeping step {}", iter - 1);
                converged = prev_ll - ll < params.em_tol;
                iterations = iter - 1;
                break;
            }
            trace.push(ll);
            best = Some(tree);
            b = fit_b;
            if ll - prev_ll < params.em_tol {
                converged = true;
                break;
            }
        } else {
            trace.push(ll);
            best = Some(tree);
            b = fit_b;
        }
    }
    let mut tree = best.expect("at least one step");
    if params.max_em_iter == 0 {
        converged = true;
    }
    tree.loglik_trace = trace;
    tree.iterations = iterations;
    tree.converged = converged;
    Ok(tree)
}

/// Joint mixed-model fit of leaf-specific coefficients for a fixed structure.
/// Updates leaf coefficients and random effects in place; returns BLUPs per
/// cluster code.
fn refit_jointly(tree: &mut ModelTree, ds: &PanelDataset, ctx: &Ctx<'_>, rows: &[usize]) -> Result<Vec<f64>> {
    let leaves = leaf_assignment(tree, ds)?;
    let leaf_ids: Vec<usize> = tree.leaves().map(|n| n.id).collect();
    let slot: HashMap<usize, usize> = leaf_ids.iter().enumerate().map(|(s, &id)| (id, s)).collect();
    let k = ctx.n_coef();
    let q = leaf_ids.len() * k;
    let n = rows.len();
    let mut x = DMatrix::<f64>::zeros(n, q);
    let mut xrow = Vec::with_capacity(k);
    for (i, &r) in rows.iter().enumerate() {
        let base = slot[&leaves[r]] * k;
        ctx.row_design(r, &mut xrow);
        for (a, v) in xrow.iter().enumerate() {
            x[(i, base + a)] = *v;
        }
    }
    let y: Vec<f64> = rows.iter().map(|&r| ds.response()[r]).collect();
    let cl: Vec<usize> = rows.iter().map(|&r| ds.cluster_codes()[r]).collect();
    let fit = fit_random_intercept_dropping(&x, &y, &cl)?;

    let mut sse = vec![0.0; leaf_ids.len()];
    for (i, &r) in rows.iter().enumerate() {
        let s = slot[&leaves[r]];
        let fitted: f64 = (0..k).map(|a| x[(i, s * k + a)] * fit.beta[s * k + a]).sum();
        let e = y[i] - fitted - fit.blups[&cl[i]];
        sse[s] += e * e;
    }
    for (s, &id) in leaf_ids.iter().enumerate() {
        if let NodeKind::Leaf { model, .. } = &mut tree.nodes[id].kind {
            model.coefficients = fit.beta[s * k..(s + 1) * k].to_vec();
            model.objective = sse[s];
        }
    }
    let mut b = vec![0.0; ds.n_clusters()];
    let mut blups = BTreeMap::new();
    for (&code, &v) in &fit.blups {
        b[code] = v;
        blups.insert(ds.cluster_names()[code].clone(), v);
    }
    tree.random = RandomEffects {
        blups,
        sigma2_b: fit.sigma2_b,
        sigma2_e: fit.sigma2_e,
    };
    tree.loglik = Some(fit.loglik);
    Ok(b)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_leaf_mean_and_sse() {
        let m = fit_node_model(&[1.0, 2.0, 3.0], &[], LeafKind::Constant).unwrap();
        assert_eq!(m.coefficients, vec![2.0]);
        assert!((m.objective - 2.0).abs() < 1e-15);
    }

    #[test]
    fn exact_line_interpolates() {
        let x = [0.0, 1.0, 2.0, 3.0, 4.0];
        let y: Vec<f64> = x.iter().map(|v| 3.0 + 2.0 * v).collect();
        let m = fit_node_model(&y, &[&x], LeafKind::Linear).unwrap();
        assert!((m.coefficients[0] - 3.0).abs() < 1e-12);
        assert!((m.coefficients[1] - 2.0).abs() < 1e-12);
        assert!(m.objective < 1e-20);
    }

    #[test]
    fn too_few_rows_not_fittable() {
        assert!(matches!(
            fit_node_model(&[1.0, 2.0], &[&[1.0, 2.0]], LeafKind::Linear),
            Err(Error::InsufficientData(_))
        ));
    }

    #[test]
    fn scores_sum_to_zero() {
        let x = [0.3, 1.1, 2.7, 3.2, 4.9, 5.5];
        let y = [1.0, 0.2, 2.5, 1.9, 4.4, 3.0];
        let m = fit_node_model(&y, &[&x], LeafKind::Linear).unwrap();
        for a in 0..2 {
            let s: f64 = (0..6).map(|i| m.score_row(i)[a]).sum();
            assert!(s.abs() < 1e-10);
        }
    }

    #[test]
    fn constant_split_column_is_degenerate() {
        let y = [1.0, 2.0, 0.5, 3.0, 2.2, 1.7];
        let m = fit_node_model(&y, &[], LeafKind::Constant).unwrap();
        let p = MobParams::default();
        let r = stability_test(&m, SplitValues::Numeric(&[4.0; 6]), "z", &p, "root");
        assert_eq!(r.p_value, 1.0);
        assert!(r.degenerate);
        let r = stability_test(&m, SplitValues::Categorical(&[0; 6]), "g", &p, "root");
        assert_eq!(r.p_value, 1.0);
    }

    #[test]
    fn params_validation() {
        let mut p = MobParams::default();
        assert!(p.validate().is_ok());
        p.alpha = 1.0;
        assert!(p.validate().is_err());
        let p = MobParams {
            trim: 0.5,
            ..MobParams::default()
        };
        assert!(p.validate().is_err());
        let p = MobParams::default();
        assert_eq!(p.effective_min_node_size(2, LeafKind::Linear), 40);
        assert_eq!(p.effective_min_node_size(0, LeafKind::Constant), 20);
    }

    #[test]
    fn chi2_tail_is_continuous_across_switch() {
        // the asymptotic branch should agree with the exact one where both work
        let exact = chi2_log_sf(400.0, 3.0);
        assert!(exact < -180.0 && exact.is_finite());
        let far = chi2_log_sf(5000.0, 3.0);
        assert!(far < exact);
    }
}
