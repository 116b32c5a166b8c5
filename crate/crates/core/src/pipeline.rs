//! Cluster, screen, select and refit.
//!
//! Features in `var_select` are grouped into network modules. Each module is
//! screened by its own mixed-effects tree, the survivors compete in a
//! selection tree, and a final tree is fitted on the selected features plus
//! the fixed roles. With no fixed regressors, the first principal component
//! of each non-grey module serves as the screening regressor.

use std::collections::BTreeMap;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corr_net::{build_network, ModuleAssignment, NetworkParams};
use crate::error::{Error, Result};
use crate::model_tree::{
    fit_lmm_tree, predict_tree, used_split_features, LeafKind, MobParams, ModelTree, NodeKind,
};
use crate::panel_data::{mean_sd, Column, FeatureRoles, PanelDataset};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FreetreeOptions {
    pub fuzzy: bool,
    pub mob: MobParams,
    pub network: NetworkParams,
}

impl Default for FreetreeOptions {
    fn default() -> Self {
        Self {
            fuzzy: true,
            mob: MobParams::default(),
            network: NetworkParams::default(),
        }
    }
}

impl FreetreeOptions {
    pub fn validate(&self) -> Result<()> {
        self.mob.validate()?;
        if self.network.beta_candidates.is_empty() {
            return Err(Error::Argument("no soft-threshold candidates".into()));
        }
        Ok(())
    }
}

/// Which dispatch branch ran.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    /// Fixed regressors present, screening results pooled.
    Fuzzy,
    /// Fixed regressors present, grey module screened last.
    NonFuzzy,
    /// No fixed regressors; principal components as screening regressors.
    PrincipalComponentFuzzy,
    PrincipalComponentNonFuzzy,
    /// Nothing to select; single tree on the fixed roles.
    FixedOnly,
}

/// One tree fitted during screening or selection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTree {
    pub stage: String,
    pub module: Option<usize>,
    pub regressors: Vec<String>,
    pub splitters: Vec<String>,
    pub selected: Vec<String>,
    pub tree: Option<ModelTree>,
    pub diagnostic: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionReport {
    pub strategy: Strategy,
    pub modules: ModuleAssignment,
    pub soft_threshold: Option<u32>,
    /// Module id -> features surviving that module's screening tree.
    pub screened: BTreeMap<usize, Vec<String>>,
    /// Module id -> features picked by the non-grey selection tree or the grey
    /// tree (non-fuzzy strategies only).
    pub selected_non_grey: BTreeMap<usize, Vec<String>>,
    /// Final selected features, in `var_select` order.
    pub selected: Vec<String>,
    pub stages: Vec<StageTree>,
    pub diagnostics: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FreetreeFit {
    pub roles: FeatureRoles,
    pub options: FreetreeOptions,
    pub report: SelectionReport,
    pub final_tree: ModelTree,
    /// Wall-clock seconds per stage. Not serialized so fits stay reproducible.
    #[serde(skip)]
    pub timing: BTreeMap<String, f64>,
}

impl FreetreeFit {
    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let f = std::io::BufWriter::new(std::fs::File::create(path)?);
        serde_json::to_writer_pretty(f, self)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let f = std::io::BufReader::new(std::fs::File::open(path)?);
        Ok(serde_json::from_reader(f)?)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FirstPc {
    pub scores: Vec<f64>,
    /// Unit-norm loadings on the standardized features.
    pub loadings: Vec<f64>,
    pub eigenvalue: f64,
}

const PC_TOL: f64 = 1e-10;
const PC_MAX_ITER: usize = 200_000;

/// First principal component of the standardized columns `features`, by
/// power iteration on their correlation matrix.
pub fn first_pc<S: AsRef<str>>(ds: &PanelDataset, features: &[S]) -> Result<FirstPc> {
    if features.len() < 2 {
        return Err(Error::Argument("first_pc needs at least two features".into()));
    }
    let n = ds.n_rows();
    if n < 2 {
        return Err(Error::InsufficientData("first_pc needs at least two rows".into()));
    }
    let mut z: Vec<Vec<f64>> = Vec::with_capacity(features.len());
    for f in features {
        let col = ds.numeric(f.as_ref())?;
        let (mean, sd) = mean_sd(col);
        let sd = if sd > 0.0 { sd } else { f64::INFINITY };
        z.push(col.iter().map(|v| (v - mean) / sd).collect());
    }
    let p = z.len();
    let mut r = vec![0.0; p * p];
    r.par_chunks_mut(p).enumerate().for_each(|(a, row)| {
        for b in 0..p {
            row[b] = z[a].iter().zip(&z[b]).map(|(x, y)| x * y).sum::<f64>() / (n - 1) as f64;
        }
    });
    if r.iter().all(|v| *v == 0.0) {
        return Err(Error::Numeric("all features in the block have zero variance".into()));
    }
    // deterministic start with no special symmetry
    let mut v: Vec<f64> = (0..p).map(|j| 1.0 + 0.25 * ((j + 1) as f64).sin()).collect();
    normalize(&mut v);
    let mut lambda = 0.0;
    let mut w = vec![0.0; p];
    for iter in 0.. {
        for a in 0..p {
            w[a] = r[a * p..(a + 1) * p].iter().zip(&v).map(|(x, y)| x * y).sum();
        }
        let new_lambda: f64 = w.iter().zip(&v).map(|(x, y)| x * y).sum();
        normalize(&mut w);
        let change = w.iter().zip(&v).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        std::mem::swap(&mut v, &mut w);
        let settled = (new_lambda - lambda).abs() <= PC_TOL * new_lambda.abs();
        lambda = new_lambda;
        if settled && change <= PC_TOL {
            break;
        }
        if iter >= PC_MAX_ITER {
            return Err(Error::Numeric("power iteration did not converge".into()));
        }
    }
    let sum: f64 = v.iter().sum();
    let first_nonzero = v.iter().copied().find(|x| *x != 0.0).unwrap_or(0.0);
    if sum < 0.0 || (sum == 0.0 && first_nonzero < 0.0) {
        v.iter_mut().for_each(|x| *x = -*x);
    }
    let scores = (0..n)
        .map(|i| z.iter().zip(&v).map(|(col, l)| col[i] * l).sum())
        .collect();
    let eigenvalue = (0..p)
        .map(|a| v[a] * r[a * p..(a + 1) * p].iter().zip(&v).map(|(x, y)| x * y).sum::<f64>())
        .sum();
    Ok(FirstPc {
        scores,
        loadings: v,
        eigenvalue,
    })
}

fn normalize(v: &mut [f64]) {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
}

struct Runner<'a> {
    roles: &'a FeatureRoles,
    opts: &'a FreetreeOptions,
}

impl Runner<'_> {
    fn concat(&self, a: &[String], b: &[String]) -> Vec<String> {
        let mut out = a.to_vec();
        out.extend(b.iter().filter(|x| !a.contains(x)).cloned());
        out
    }

    /// Fits one stage tree; failures become an empty selection plus a note.
    fn stage(
        &self,
        ds: &PanelDataset,
        stage: String,
        module: Option<usize>,
        regressors: Vec<String>,
        candidates: &[String],
        leaf_kind: LeafKind,
    ) -> StageTree {
        let splitters = self.concat(&self.roles.fixed_split, candidates);
        match fit_lmm_tree(ds, &regressors, &splitters, leaf_kind, &self.opts.mob) {
            Ok(tree) => StageTree {
                selected: used_split_features(&tree, &self.roles.fixed_split),
                stage,
                module,
                regressors,
                splitters,
                tree: Some(tree),
                diagnostic: None,
            },
            Err(e) => StageTree {
                diagnostic: Some(format!("{stage} tree failed: {e}")),
                stage,
                module,
                regressors,
                splitters,
                selected: Vec::new(),
                tree: None,
            },
        }
    }
}

fn in_order(universe: &[String], picked: &[String]) -> Vec<String> {
    universe.iter().filter(|f| picked.contains(f)).cloned().collect()
}

/// Runs the full selection pipeline on `train` and fits the final tree.
pub fn run_freetree(train: &PanelDataset, roles: &FeatureRoles, opts: &FreetreeOptions) -> Result<FreetreeFit> {
    opts.validate()?;
    roles.validate()?;
    if train.n_rows() == 0 {
        return Err(Error::InsufficientData("empty training set".into()));
    }
    let ds = train.with_roles(roles.clone())?;
    let ds = ds.select_rows(&ds.canonical_order());
    let runner = Runner { roles, opts };
    let mut timing = BTreeMap::new();
    let mut diagnostics = Vec::new();
    let var = &roles.var_select;
    let pc_path = roles.fixed_regress.is_empty();

    let strategy = match (var.is_empty(), pc_path, opts.fuzzy) {
        (true, _, _) => Strategy::FixedOnly,
        (false, false, true) => Strategy::Fuzzy,
        (false, false, false) => Strategy::NonFuzzy,
        (false, true, true) => Strategy::PrincipalComponentFuzzy,
        (false, true, false) => Strategy::PrincipalComponentNonFuzzy,
    };

    let clock = Instant::now();
    let (mut modules, soft_threshold) = if var.len() >= 2 {
        let net = build_network(&ds, var, &opts.network)?;
        if net.soft_threshold.fallback {
            diagnostics.push(format!(
                "no soft threshold reached the scale-free target; using beta = {}",
                net.soft_threshold.beta
            ));
        }
        (net.modules, Some(net.soft_threshold.beta))
    } else {
        (ModuleAssignment::all_grey(var.clone()), None)
    };
    timing.insert("clustering".into(), clock.elapsed().as_secs_f64());
    if pc_path && !var.is_empty() && modules.non_grey_count() == 0 {
        diagnostics.push("network produced no non-grey module; screening everything as grey".into());
    }

    let clock = Instant::now();
    let non_grey: Vec<usize> = (1..modules.module_count).collect();
    let grey = modules.grey();

    // screening inputs per module: (module id, dataset, regressors, leaf kind)
    let mut pc_ds = ds.clone();
    let mut screen_specs: Vec<(usize, Vec<String>, LeafKind)> = Vec::new();
    let screen_grey_now = matches!(strategy, Strategy::Fuzzy | Strategy::PrincipalComponentFuzzy);
    for &l in &non_grey {
        if pc_path {
            let members = modules.members(l);
            match first_pc(&ds, &members) {
                Ok(pc) => {
                    let name = pc_column_name(&ds, l);
                    pc_ds = pc_ds.with_numeric_column(&name, pc.scores)?;
                    screen_specs.push((l, vec![name], LeafKind::Linear));
                }
                Err(e) => {
                    diagnostics.push(format!("module {l}: principal component failed ({e}); screening with constant leaves"));
                    screen_specs.push((l, Vec::new(), LeafKind::Constant));
                }
            }
        } else {
            screen_specs.push((l, roles.fixed_regress.clone(), LeafKind::Linear));
        }
    }
    if screen_grey_now && !grey.is_empty() {
        let kind = if pc_path { LeafKind::Constant } else { LeafKind::Linear };
        screen_specs.push((0, roles.fixed_regress.clone(), kind));
    }
    let mut stages: Vec<StageTree> = screen_specs
        .par_iter()
        .map(|(l, regs, kind)| {
            runner.stage(
                &pc_ds,
                format!("screen module {l}"),
                Some(*l),
                regs.clone(),
                &modules.members(*l),
                *kind,
            )
        })
        .collect();
    let mut screened = BTreeMap::new();
    for s in &stages {
        if let Some(d) = &s.diagnostic {
            diagnostics.push(d.clone());
        }
        screened.insert(s.module.expect("screening stage"), s.selected.clone());
    }
    timing.insert("screening".into(), clock.elapsed().as_secs_f64());

    let clock = Instant::now();
    let select_kind = if pc_path { LeafKind::Constant } else { LeafKind::Linear };
    let pooled: Vec<String> = in_order(var, &screened.values().flatten().cloned().collect::<Vec<_>>());
    let mut selected_non_grey = BTreeMap::new();
    let selected: Vec<String> = match strategy {
        Strategy::FixedOnly => Vec::new(),
        Strategy::Fuzzy | Strategy::PrincipalComponentFuzzy => {
            if pooled.is_empty() {
                Vec::new()
            } else {
                let s = runner.stage(&ds, "select".into(), None, roles.fixed_regress.clone(), &pooled, select_kind);
                let picked = s.selected.clone();
                if let Some(d) = &s.diagnostic {
                    diagnostics.push(d.clone());
                }
                stages.push(s);
                picked
            }
        }
        Strategy::NonFuzzy | Strategy::PrincipalComponentNonFuzzy => {
            let q: Vec<String> = if pooled.is_empty() {
                Vec::new()
            } else {
                let s = runner.stage(
                    &ds,
                    "select non-grey".into(),
                    None,
                    roles.fixed_regress.clone(),
                    &pooled,
                    select_kind,
                );
                let picked = s.selected.clone();
                if let Some(d) = &s.diagnostic {
                    diagnostics.push(d.clone());
                }
                stages.push(s);
                picked
            };
            for f in &q {
                let l = modules.label_of(f).expect("selected feature is in var_select");
                selected_non_grey.entry(l).or_insert_with(Vec::new).push(f.clone());
            }
            let mut all = q.clone();
            if !grey.is_empty() {
                let regs = runner.concat(&roles.fixed_regress, &q);
                let s = runner.stage(&ds, "screen module 0".into(), Some(0), regs, &grey, LeafKind::Linear);
                let grey_picked: Vec<String> = s.selected.iter().filter(|f| grey.contains(f)).cloned().collect();
                if let Some(d) = &s.diagnostic {
                    diagnostics.push(d.clone());
                }
                screened.insert(0, grey_picked.clone());
                selected_non_grey.insert(0, grey_picked.clone());
                all.extend(grey_picked);
                stages.push(s);
            }
            in_order(var, &all)
        }
    };
    let selected = in_order(var, &selected);
    timing.insert("selection".into(), clock.elapsed().as_secs_f64());

    let clock = Instant::now();
    let (final_regs, final_splits) = if selected.is_empty() {
        if strategy != Strategy::FixedOnly {
            diagnostics.push("no feature selected; final tree uses fixed roles only".into());
        }
        (roles.fixed_regress.clone(), roles.fixed_split.clone())
    } else {
        (
            runner.concat(&roles.fixed_regress, &selected),
            runner.concat(&roles.fixed_split, &selected),
        )
    };
    let final_tree = fit_lmm_tree(&ds, &final_regs, &final_splits, LeafKind::Linear, &opts.mob)?;
    timing.insert("final".into(), clock.elapsed().as_secs_f64());

    // containment checks
    for f in &selected {
        debug_assert!(pooled.contains(f) || screened.get(&0).is_some_and(|g| g.contains(f)));
        if roles.fixed_split.contains(f) {
            return Err(Error::Numeric(format!("fixed splitter `{f}` leaked into the selection")));
        }
    }
    if strategy == Strategy::FixedOnly {
        modules = ModuleAssignment::all_grey(Vec::new());
    }
    Ok(FreetreeFit {
        roles: roles.clone(),
        options: opts.clone(),
        report: SelectionReport {
            strategy,
            modules,
            soft_threshold,
            screened,
            selected_non_grey,
            selected,
            stages,
            diagnostics,
        },
        final_tree,
        timing,
    })
}

fn pc_column_name(ds: &PanelDataset, module: usize) -> String {
    let mut name = format!("PC_module{module}");
    while ds.column(&name).is_some() {
        name.push('_');
    }
    name
}

/// Predictions of the final tree; random intercepts are added only for
/// clusters seen in training and only when `include_random` is set.
pub fn predict_freetree(fit: &FreetreeFit, rows: &PanelDataset, include_random: bool) -> Result<Vec<f64>> {
    predict_tree(&fit.final_tree, rows, include_random)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeafCoefficientRow {
    pub level: String,
    pub n_rows: usize,
    pub coefficients: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeafCoefficientTable {
    pub group_by: String,
    pub coefficient_names: Vec<String>,
    pub rows: Vec<LeafCoefficientRow>,
    /// Set when the tree has constant leaves and the table is empty.
    pub constant_leaves: bool,
}

impl LeafCoefficientTable {
    pub fn get(&self, level: &str, coefficient: &str) -> Option<f64> {
        let j = self.coefficient_names.iter().position(|c| c == coefficient)?;
        self.rows.iter().find(|r| r.level == level).map(|r| r.coefficients[j])
    }
}

/// Row-weighted mean leaf coefficients per level of the categorical splitter
/// `group_by`. A leaf contributes to each level in proportion to its training
/// rows at that level.
pub fn leaf_coefficient_summary(fit: &FreetreeFit, group_by: &str) -> Result<LeafCoefficientTable> {
    tree_coefficient_summary(&fit.final_tree, group_by)
}

pub fn tree_coefficient_summary(tree: &ModelTree, group_by: &str) -> Result<LeafCoefficientTable> {
    let names = tree.coefficient_names();
    if tree.leaf_kind == LeafKind::Constant || tree.regressors.is_empty() {
        return Ok(LeafCoefficientTable {
            group_by: group_by.to_string(),
            coefficient_names: names,
            rows: Vec::new(),
            constant_leaves: true,
        });
    }
    if !tree.splitters.iter().any(|s| s == group_by) {
        return Err(Error::Argument(format!("`{group_by}` is not a splitter of the tree")));
    }
    let mut acc: BTreeMap<String, (usize, Vec<f64>)> = BTreeMap::new();
    for leaf in tree.leaves() {
        let NodeKind::Leaf { model, level_counts } = &leaf.kind else { continue };
        let counts = level_counts
            .get(group_by)
            .ok_or_else(|| Error::Argument(format!("`{group_by}` is not categorical")))?;
        for (level, &c) in counts {
            let e = acc
                .entry(level.clone())
                .or_insert_with(|| (0, vec![0.0; names.len()]));
            e.0 += c;
            for (s, b) in e.1.iter_mut().zip(&model.coefficients) {
                *s += c as f64 * b;
            }
        }
    }
    let rows = acc
        .into_iter()
        .map(|(level, (n, sums))| LeafCoefficientRow {
            level,
            n_rows: n,
            coefficients: sums.into_iter().map(|s| s / n as f64).collect(),
        })
        .collect();
    Ok(LeafCoefficientTable {
        group_by: group_by.to_string(),
        coefficient_names: names,
        rows,
        constant_leaves: false,
    })
}

/// Column type check used by callers that need a categorical grouping column.
pub fn is_categorical(ds: &PanelDataset, name: &str) -> bool {
    matches!(ds.column(name), Some(Column::Categorical { .. }))
}
