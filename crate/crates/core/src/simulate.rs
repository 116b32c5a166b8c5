//! Synthetic longitudinal panels with block-correlated features.
//!
//! Every subject draws from its own ChaCha stream (derived from the seed and
//! the subject index), so output does not depend on the number of threads.

use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::panel_data::{Column, FeatureRoles, PanelDataset};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Design {
    /// f(X) plus a +/-(t-3)^2 time trend by treatment arm.
    Sim1,
    /// f(X) only.
    Sim2,
}

impl std::fmt::Display for Design {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Design::Sim1 => "sim1",
            Design::Sim2 => "sim2",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub design: Design,
    pub n_subjects: usize,
    pub n_timepoints: usize,
    pub n_features: usize,
    /// All modules but the last are equicorrelated; the last is independent.
    pub module_sizes: Vec<usize>,
    pub within_corr: f64,
    pub sigma2_b: f64,
    pub sigma2_eps: f64,
    /// Draw features once per subject instead of once per time point.
    pub freeze_features: bool,
    /// Subject ids start at `id_offset + 1`, so separately generated panels
    /// can have disjoint subjects.
    #[serde(default)]
    pub id_offset: usize,
    pub seed: u64,
}

impl SimConfig {
    pub fn new(design: Design, n_subjects: usize, seed: u64) -> Self {
        Self {
            design,
            n_subjects,
            n_timepoints: 6,
            n_features: 400,
            module_sizes: vec![100; 4],
            within_corr: 0.8,
            sigma2_b: 3.0,
            sigma2_eps: 1.0,
            freeze_features: false,
            id_offset: 0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.module_sizes.iter().sum::<usize>() != self.n_features {
            return Err(Error::Argument(format!(
                "module sizes sum to {}, expected {} features",
                self.module_sizes.iter().sum::<usize>(),
                self.n_features
            )));
        }
        if !(0.0..1.0).contains(&self.within_corr) {
            return Err(Error::Argument(format!("within_corr must lie in [0, 1), got {}", self.within_corr)));
        }
        if self.sigma2_b < 0.0 || self.sigma2_eps < 0.0 {
            return Err(Error::Argument("variances must be non-negative".into()));
        }
        if self.n_features < 303 {
            return Err(Error::Argument("the fixed-effect function needs at least 303 features".into()));
        }
        if self.n_subjects == 0 || self.n_timepoints == 0 {
            return Err(Error::Argument("need at least one subject and one time point".into()));
        }
        Ok(())
    }

    pub fn feature_names(&self) -> Vec<String> {
        (1..=self.n_features).map(|j| format!("X{j}")).collect()
    }

    pub fn subject_id(&self, i: usize) -> String {
        let width = (self.n_subjects + self.id_offset).to_string().len().max(3);
        format!("S{:0width$}", self.id_offset + i + 1)
    }
}

pub const TRUE_FEATURES: [&str; 6] = ["X1", "X2", "X3", "X301", "X302", "X303"];

/// 5x1 + 2x2 + 2x3 + 5x2x3 + 5x301 + 2x302 + 2x303 + 5x302x303 (1-based).
pub fn f_true(x: &[f64]) -> Result<f64> {
    if x.len() < 303 {
        return Err(Error::Argument(format!("need at least 303 features, got {}", x.len())));
    }
    let v = |j: usize| x[j - 1];
    Ok(5.0 * v(1) + 2.0 * v(2) + 2.0 * v(3) + 5.0 * v(2) * v(3)
        + 5.0 * v(301) + 2.0 * v(302) + 2.0 * v(303) + 5.0 * v(302) * v(303))
}

fn subject_rng(seed: u64, subject: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(subject as u64 + 1);
    rng
}

fn draw_features(cfg: &SimConfig, rng: &mut ChaCha8Rng, out: &mut Vec<f64>) {
    out.clear();
    let last = cfg.module_sizes.len().saturating_sub(1);
    let (a, c) = (cfg.within_corr.sqrt(), (1.0 - cfg.within_corr).sqrt());
    for (m, &size) in cfg.module_sizes.iter().enumerate() {
        if m < last {
            let g: f64 = rng.sample(StandardNormal);
            for _ in 0..size {
                let e: f64 = rng.sample(StandardNormal);
                out.push(a * g + c * e);
            }
        } else {
            for _ in 0..size {
                out.push(rng.sample(StandardNormal));
            }
        }
    }
}

struct Subject {
    features: Vec<Vec<f64>>,
    eps: Vec<f64>,
    b: f64,
}

fn draw_subject(cfg: &SimConfig, i: usize) -> Subject {
    let mut rng = subject_rng(cfg.seed, cfg.id_offset + i);
    let mut features = Vec::with_capacity(cfg.n_timepoints);
    let mut eps = Vec::with_capacity(cfg.n_timepoints);
    let mut row = Vec::with_capacity(cfg.n_features);
    for t in 0..cfg.n_timepoints {
        if t == 0 || !cfg.freeze_features {
            draw_features(cfg, &mut rng, &mut row);
        }
        features.push(row.clone());
        let e: f64 = rng.sample(StandardNormal);
        eps.push(e * cfg.sigma2_eps.sqrt());
    }
    let b: f64 = rng.sample(StandardNormal);
    Subject {
        features,
        eps,
        b: b * cfg.sigma2_b.sqrt(),
    }
}

/// Feature rows in subject-major, time-minor order.
pub fn gen_features(cfg: &SimConfig) -> Result<Vec<Vec<f64>>> {
    cfg.validate()?;
    let subjects: Vec<Subject> = (0..cfg.n_subjects).into_par_iter().map(|i| draw_subject(cfg, i)).collect();
    Ok(subjects.into_iter().flat_map(|s| s.features).collect())
}

fn treatment_of(i: usize) -> &'static str {
    if i % 2 == 0 {
        "treatment1"
    } else {
        "treatment2"
    }
}

/// Ground truth written next to a simulated dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimTruth {
    pub config: SimConfig,
    pub true_features: Vec<String>,
    /// Linear coefficients of f.
    pub coefficients: BTreeMap<String, f64>,
    /// Pairwise interaction coefficients of f, keyed `"Xa*Xb"`.
    pub interactions: BTreeMap<String, f64>,
    /// sim1 only: treatment level -> (intercept, time, time2) of the time trend.
    pub treatment_trend: BTreeMap<String, [f64; 3]>,
    pub random_intercepts: BTreeMap<String, f64>,
}

impl SimTruth {
    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::io::BufWriter::new(std::fs::File::create(path)?);
        serde_json::to_writer_pretty(f, self)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::io::BufReader::new(std::fs::File::open(path)?);
        Ok(serde_json::from_reader(f)?)
    }
}

pub fn sim_roles(design: Design, features: &[String]) -> FeatureRoles {
    let mut roles = FeatureRoles::new("id", "y");
    roles.time_col = Some("time".into());
    roles.var_select = features.to_vec();
    if design == Design::Sim1 {
        roles.fixed_regress = vec!["time".into(), "time2".into()];
        roles.fixed_split = vec!["treatment".into()];
        roles.categorical = vec!["treatment".into()];
    }
    roles
}

/// Generates the panel and its truth sidecar. Time points are 1..=T.
pub fn gen_panel(cfg: &SimConfig) -> Result<(PanelDataset, SimTruth)> {
    cfg.validate()?;
    let subjects: Vec<Subject> = (0..cfg.n_subjects).into_par_iter().map(|i| draw_subject(cfg, i)).collect();
    let t_count = cfg.n_timepoints;
    let n = cfg.n_subjects * t_count;
    let names = cfg.feature_names();
    let mut cols: Vec<Vec<f64>> = vec![Vec::with_capacity(n); cfg.n_features];
    let mut ids = Vec::with_capacity(n);
    let mut time = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    let mut treat = Vec::with_capacity(n);
    let mut blups = BTreeMap::new();
    for (i, s) in subjects.iter().enumerate() {
        let id = cfg.subject_id(i);
        blups.insert(id.clone(), s.b);
        for t in 0..t_count {
            let tt = (t + 1) as f64;
            let x = &s.features[t];
            for (c, v) in cols.iter_mut().zip(x) {
                c.push(*v);
            }
            let mut v = f_true(x)? + s.b + s.eps[t];
            if cfg.design == Design::Sim1 {
                let trend = (tt - 3.0) * (tt - 3.0);
                let arm = (cfg.id_offset + i) % 2;
                v += if arm == 0 { trend } else { -trend };
                treat.push(arm as u32);
            }
            ids.push(id.clone());
            time.push(tt);
            y.push(v);
        }
    }
    let mut columns: Vec<(String, Column)> = Vec::with_capacity(cfg.n_features + 3);
    if cfg.design == Design::Sim1 {
        columns.push(("time".into(), Column::Numeric(time.clone())));
        columns.push(("time2".into(), Column::Numeric(time.iter().map(|t| t * t).collect())));
        columns.push((
            "treatment".into(),
            Column::Categorical {
                codes: treat,
                levels: vec![treatment_of(0).into(), treatment_of(1).into()],
            },
        ));
    }
    columns.extend(names.iter().cloned().zip(cols.into_iter().map(Column::Numeric)));
    let ds = PanelDataset::from_parts(sim_roles(cfg.design, &names), ids, Some(time), y, columns)?;

    let coefficients = [("X1", 5.0), ("X2", 2.0), ("X3", 2.0), ("X301", 5.0), ("X302", 2.0), ("X303", 2.0)]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect();
    let interactions = [("X2*X3", 5.0), ("X302*X303", 5.0)]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect();
    let mut treatment_trend = BTreeMap::new();
    if cfg.design == Design::Sim1 {
        treatment_trend.insert(treatment_of(0).into(), [9.0, -6.0, 1.0]);
        treatment_trend.insert(treatment_of(1).into(), [-9.0, 6.0, -1.0]);
    }
    let truth = SimTruth {
        config: cfg.clone(),
        true_features: TRUE_FEATURES.iter().map(|s| s.to_string()).collect(),
        coefficients,
        interactions,
        treatment_trend,
        random_intercepts: blups,
    };
    Ok((ds, truth))
}
