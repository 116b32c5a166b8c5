//! Evaluation, sample-size sweeps and report tables.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model_tree::{fit_lmm_tree, predict_tree, LeafKind, ModelTree};
use crate::panel_data::PanelDataset;
use crate::pipeline::{
    leaf_coefficient_summary, predict_freetree, run_freetree, tree_coefficient_summary, FreetreeFit,
    FreetreeOptions, LeafCoefficientTable,
};
use crate::simulate::{gen_panel, Design, SimConfig, SimTruth};

/// Root mean squared error.
pub fn rmse(predicted: &[f64], actual: &[f64]) -> f64 {
    assert_eq!(predicted.len(), actual.len());
    if actual.is_empty() {
        return 0.0;
    }
    let sse: f64 = predicted.iter().zip(actual).map(|(p, a)| (p - a) * (p - a)).sum();
    (sse / actual.len() as f64).sqrt()
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SelectionScore {
    pub selected: Vec<String>,
    pub true_positives: Vec<String>,
    pub false_positives: Vec<String>,
    pub missed: Vec<String>,
    pub exact: bool,
}

impl SelectionScore {
    pub fn new(selected: &[String], truth: &[String]) -> Self {
        let truth_set: BTreeSet<&String> = truth.iter().collect();
        let sel_set: BTreeSet<&String> = selected.iter().collect();
        let true_positives: Vec<String> = selected.iter().filter(|f| truth_set.contains(f)).cloned().collect();
        let false_positives: Vec<String> = selected.iter().filter(|f| !truth_set.contains(f)).cloned().collect();
        let missed: Vec<String> = truth.iter().filter(|f| !sel_set.contains(f)).cloned().collect();
        Self {
            selected: selected.to_vec(),
            exact: false_positives.is_empty() && missed.is_empty(),
            true_positives,
            false_positives,
            missed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub rmse_test: f64,
    pub n_test_rows: usize,
    pub selection: Option<SelectionScore>,
    pub leaf_coefficients: Option<LeafCoefficientTable>,
    pub options: FreetreeOptions,
    #[serde(skip)]
    pub timing: BTreeMap<String, f64>,
}

/// Fails when any test cluster also appears in the training fit.
pub fn check_leakage(tree: &ModelTree, test: &PanelDataset) -> Result<()> {
    let shared: Vec<&String> = test
        .cluster_names()
        .iter()
        .filter(|c| tree.random.blups.contains_key(*c))
        .collect();
    if shared.is_empty() {
        Ok(())
    } else {
        Err(Error::Leakage(format!(
            "{} test cluster(s) were used in training, e.g. `{}`",
            shared.len(),
            shared[0]
        )))
    }
}

/// Categorical fixed splitter used to group leaf coefficients, if any.
fn group_column(fit: &FreetreeFit) -> Option<&str> {
    fit.roles
        .fixed_split
        .iter()
        .find(|s| fit.roles.categorical.contains(s))
        .map(|s| s.as_str())
}

/// Scores a fit on held-out subjects. Predictions exclude random intercepts.
pub fn evaluate(fit: &FreetreeFit, test: &PanelDataset, truth: Option<&SimTruth>) -> Result<EvalReport> {
    check_leakage(&fit.final_tree, test)?;
    let clock = Instant::now();
    let pred = predict_freetree(fit, test, false)?;
    let mut timing = fit.timing.clone();
    timing.insert("predict".into(), clock.elapsed().as_secs_f64());
    let leaf_coefficients = match group_column(fit) {
        Some(g) if fit.final_tree.splitters.iter().any(|s| s == g) => Some(leaf_coefficient_summary(fit, g)?),
        _ => None,
    };
    Ok(EvalReport {
        rmse_test: rmse(&pred, test.response()),
        n_test_rows: test.n_rows(),
        selection: truth.map(|t| SelectionScore::new(&fit.report.selected, &t.true_features)),
        leaf_coefficients,
        options: fit.options.clone(),
        timing,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepOptions {
    pub design: Design,
    pub n_list: Vec<usize>,
    pub seeds: Vec<u64>,
    pub workers: usize,
    pub n_validation: usize,
    pub n_test: usize,
    pub n_timepoints: usize,
    pub alphas: Vec<f64>,
    pub min_node_factors: Vec<usize>,
    pub base: FreetreeOptions,
}

impl SweepOptions {
    pub fn new(design: Design, n_list: Vec<usize>, seeds: Vec<u64>) -> Self {
        Self {
            design,
            n_list,
            seeds,
            workers: 1,
            n_validation: 100,
            n_test: 100,
            n_timepoints: 6,
            alphas: vec![0.01, 0.05, 0.1],
            min_node_factors: vec![10, 20],
            base: FreetreeOptions::default(),
        }
    }
}

/// One row of the sweep table. Column order is the CSV schema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub design: String,
    pub n: usize,
    pub seed: u64,
    pub data_seed: u64,
    pub method: String,
    pub fuzzy: bool,
    pub alpha: f64,
    pub min_node_factor: usize,
    pub n_validation: usize,
    pub n_test: usize,
    pub n_timepoints: usize,
    pub rmse_validation: f64,
    pub rmse_test: f64,
    pub n_leaves: usize,
    pub n_selected: usize,
    pub selected: String,
    pub true_positives: usize,
    pub false_positives: usize,
    pub missed: usize,
    pub exact_recovery: bool,
    /// Row-weighted mean leaf coefficients `level:coef=value` joined by `;`.
    pub leaf_coefficients: String,
    pub failed: bool,
    pub error: String,
}

pub const SWEEP_HEADER: &str = "design,n,seed,data_seed,method,fuzzy,alpha,min_node_factor,n_validation,n_test,n_timepoints,rmse_validation,rmse_test,n_leaves,n_selected,selected,true_positives,false_positives,missed,exact_recovery,leaf_coefficients,failed,error";

pub const METHOD_FREETREE: &str = "freetree";
pub const METHOD_REEM_ALL: &str = "reem_all_features";
pub const METHOD_LMM_FIXED: &str = "lmm_tree_fixed_roles";

/// Seed of the simulated data for one sweep cell.
pub fn cell_seed(n: usize, seed: u64) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (n as u64).wrapping_mul(0xBF58_476D_1CE4_E5B9)
}

/// Train, validation and test panels of one cell (disjoint subjects).
pub fn cell_data(opts: &SweepOptions, n: usize, seed: u64) -> Result<(PanelDataset, PanelDataset, PanelDataset, SimTruth)> {
    let mut cfg = SimConfig::new(opts.design, n + opts.n_validation + opts.n_test, cell_seed(n, seed));
    cfg.n_timepoints = opts.n_timepoints;
    let (ds, truth) = gen_panel(&cfg)?;
    let ids = ds.cluster_names().to_vec();
    let train = ds.subset_clusters(&ids[..n]);
    let val = ds.subset_clusters(&ids[n..n + opts.n_validation]);
    let test = ds.subset_clusters(&ids[n + opts.n_validation..]);
    Ok((train, val, test, truth))
}

enum Fitted {
    Freetree(Box<FreetreeFit>),
    Tree(Box<ModelTree>),
}

impl Fitted {
    fn predict(&self, ds: &PanelDataset) -> Result<Vec<f64>> {
        match self {
            Fitted::Freetree(f) => predict_freetree(f, ds, false),
            Fitted::Tree(t) => predict_tree(t, ds, false),
        }
    }

    fn tree(&self) -> &ModelTree {
        match self {
            Fitted::Freetree(f) => &f.final_tree,
            Fitted::Tree(t) => t,
        }
    }
}

fn fit_method(method: &str, train: &PanelDataset, opts: &FreetreeOptions) -> Result<Fitted> {
    let roles = train.roles();
    match method {
        METHOD_FREETREE => Ok(Fitted::Freetree(Box::new(run_freetree(train, roles, opts)?))),
        METHOD_REEM_ALL => {
            let mut splitters = roles.fixed_split.clone();
            splitters.extend(roles.var_select.iter().cloned());
            Ok(Fitted::Tree(Box::new(fit_lmm_tree(
                train,
                &[],
                &splitters,
                LeafKind::Constant,
                &opts.mob,
            )?)))
        }
        METHOD_LMM_FIXED => Ok(Fitted::Tree(Box::new(fit_lmm_tree(
            train,
            &roles.fixed_regress,
            &roles.fixed_split,
            LeafKind::Linear,
            &opts.mob,
        )?))),
        other => Err(Error::Argument(format!("unknown method `{other}`"))),
    }
}

fn format_leaf_table(t: &LeafCoefficientTable) -> String {
    let mut parts = Vec::new();
    for row in &t.rows {
        for (name, v) in t.coefficient_names.iter().zip(&row.coefficients) {
            parts.push(format!("{}:{}={}", row.level, name, v));
        }
    }
    parts.join(";")
}

/// Fits one method on one cell, tuning alpha and the minimum node size on
/// validation RMSE. Ties keep the earlier grid point.
fn run_cell_method(
    opts: &SweepOptions,
    n: usize,
    seed: u64,
    method: &str,
    data: &(PanelDataset, PanelDataset, PanelDataset, SimTruth),
) -> SweepRow {
    let (train, val, test, truth) = data;
    let mut row = SweepRow {
        design: opts.design.to_string(),
        n,
        seed,
        data_seed: cell_seed(n, seed),
        method: method.to_string(),
        fuzzy: opts.base.fuzzy,
        alpha: f64::NAN,
        min_node_factor: 0,
        n_validation: opts.n_validation,
        n_test: opts.n_test,
        n_timepoints: opts.n_timepoints,
        rmse_validation: f64::NAN,
        rmse_test: f64::NAN,
        n_leaves: 0,
        n_selected: 0,
        selected: String::new(),
        true_positives: 0,
        false_positives: 0,
        missed: 0,
        exact_recovery: false,
        leaf_coefficients: String::new(),
        failed: false,
        error: String::new(),
    };
    let mut best: Option<(f64, f64, usize, Fitted)> = None;
    let mut last_err = None;
    for &alpha in &opts.alphas {
        for &factor in &opts.min_node_factors {
            let mut o = opts.base.clone();
            o.mob.alpha = alpha;
            o.mob.min_node_factor = factor;
            let scored = fit_method(method, train, &o).and_then(|f| {
                let p = f.predict(val)?;
                Ok((rmse(&p, val.response()), f))
            });
            match scored {
                Ok((r, f)) => {
                    if best.as_ref().is_none_or(|b| r < b.0) {
                        best = Some((r, alpha, factor, f));
                    }
                }
                Err(e) => last_err = Some(e),
            }
        }
    }
    let Some((val_rmse, alpha, factor, fitted)) = best else {
        row.failed = true;
        row.error = last_err.map(|e| e.to_string()).unwrap_or_default();
        return row;
    };
    row.alpha = alpha;
    row.min_node_factor = factor;
    row.rmse_validation = val_rmse;
    match fitted.predict(test) {
        Ok(p) => row.rmse_test = rmse(&p, test.response()),
        Err(e) => {
            row.failed = true;
            row.error = e.to_string();
        }
    }
    row.n_leaves = fitted.tree().n_leaves();
    if let Fitted::Freetree(fit) = &fitted {
        let score = SelectionScore::new(&fit.report.selected, &truth.true_features);
        row.n_selected = score.selected.len();
        row.selected = score.selected.join(";");
        row.true_positives = score.true_positives.len();
        row.false_positives = score.false_positives.len();
        row.missed = score.missed.len();
        row.exact_recovery = score.exact;
    }
    if let Some(g) = train.roles().fixed_split.iter().find(|s| train.roles().categorical.contains(s)) {
        if fitted.tree().splitters.contains(g) {
            if let Ok(t) = tree_coefficient_summary(fitted.tree(), g) {
                row.leaf_coefficients = format_leaf_table(&t);
            }
        }
    }
    row
}

pub fn methods_for(design: Design) -> Vec<&'static str> {
    match design {
        Design::Sim1 => vec![METHOD_FREETREE, METHOD_REEM_ALL, METHOD_LMM_FIXED],
        Design::Sim2 => vec![METHOD_FREETREE, METHOD_REEM_ALL],
    }
}

/// Runs every (n, seed, method) cell; rows come back sorted by n, seed and
/// method regardless of scheduling.
pub fn sweep(opts: &SweepOptions) -> Result<Vec<SweepRow>> {
    if opts.n_list.is_empty() || opts.seeds.is_empty() {
        return Err(Error::Argument("sweep needs at least one sample size and one seed".into()));
    }
    if opts.alphas.is_empty() || opts.min_node_factors.is_empty() {
        return Err(Error::Argument("empty tuning grid".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.workers.max(1))
        .build()
        .map_err(|e| Error::Argument(format!("thread pool: {e}")))?;
    let cells: Vec<(usize, u64)> = opts
        .n_list
        .iter()
        .flat_map(|&n| opts.seeds.iter().map(move |&s| (n, s)))
        .collect();
    let methods = methods_for(opts.design);
    let mut rows: Vec<SweepRow> = pool.install(|| {
        cells
            .par_iter()
            .flat_map_iter(|&(n, seed)| {
                let clock = Instant::now();
                let rows: Vec<SweepRow> = match cell_data(opts, n, seed) {
                    Ok(data) => methods
                        .iter()
                        .map(|m| run_cell_method(opts, n, seed, m, &data))
                        .collect(),
                    Err(e) => methods
                        .iter()
                        .map(|m| failed_row(opts, n, seed, m, &e))
                        .collect(),
                };
                log::info!("cell n={n} seed={seed} done in {:.1}s", clock.elapsed().as_secs_f64());
                rows
            })
            .collect()
    });
    rows.sort_by(|a, b| {
        a.n.cmp(&b.n)
            .then(a.seed.cmp(&b.seed))
            .then(a.method.cmp(&b.method))
    });
    Ok(rows)
}

fn failed_row(opts: &SweepOptions, n: usize, seed: u64, method: &str, e: &Error) -> SweepRow {
    SweepRow {
        design: opts.design.to_string(),
        n,
        seed,
        data_seed: cell_seed(n, seed),
        method: method.to_string(),
        fuzzy: opts.base.fuzzy,
        alpha: f64::NAN,
        min_node_factor: 0,
        n_validation: opts.n_validation,
        n_test: opts.n_test,
        n_timepoints: opts.n_timepoints,
        rmse_validation: f64::NAN,
        rmse_test: f64::NAN,
        n_leaves: 0,
        n_selected: 0,
        selected: String::new(),
        true_positives: 0,
        false_positives: 0,
        missed: 0,
        exact_recovery: false,
        leaf_coefficients: String::new(),
        failed: true,
        error: e.to_string(),
    }
}

pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(SWEEP_HEADER.split(','))?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_sweep_csv<R: std::io::Read>(input: R) -> Result<Vec<SweepRow>> {
    let mut r = csv::Reader::from_reader(input);
    let header: Vec<String> = r.headers()?.iter().map(|s| s.to_string()).collect();
    if header.join(",") != SWEEP_HEADER {
        return Err(Error::Schema("sweep CSV header does not match the expected schema".into()));
    }
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

/// Per (design, method, n) aggregate of a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub design: String,
    pub method: String,
    pub n: usize,
    pub runs: usize,
    pub failed: usize,
    pub mean_rmse: f64,
    pub sd_rmse: f64,
    pub se_rmse: f64,
    pub exact_recovery_rate: f64,
    pub mean_selected: f64,
}

pub fn summarize(rows: &[SweepRow]) -> Vec<SummaryRow> {
    let mut groups: BTreeMap<(String, String, usize), Vec<&SweepRow>> = BTreeMap::new();
    for r in rows {
        groups
            .entry((r.design.clone(), r.method.clone(), r.n))
            .or_default()
            .push(r);
    }
    groups
        .into_iter()
        .map(|((design, method, n), rs)| {
            let ok: Vec<&&SweepRow> = rs.iter().filter(|r| !r.failed && r.rmse_test.is_finite()).collect();
            let vals: Vec<f64> = ok.iter().map(|r| r.rmse_test).collect();
            let (mean, sd) = crate::panel_data::mean_sd(&vals);
            let m = vals.len().max(1) as f64;
            SummaryRow {
                design,
                method,
                n,
                runs: rs.len(),
                failed: rs.len() - ok.len(),
                mean_rmse: mean,
                sd_rmse: sd,
                se_rmse: sd / m.sqrt(),
                exact_recovery_rate: ok.iter().filter(|r| r.exact_recovery).count() as f64 / m,
                mean_selected: ok.iter().map(|r| r.n_selected as f64).sum::<f64>() / m,
            }
        })
        .collect()
}

pub fn write_summary_csv<W: Write>(rows: &[SummaryRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Mean test RMSE against n, one polyline per method.
pub fn summary_svg(rows: &[SummaryRow]) -> String {
    const W: f64 = 640.0;
    const H: f64 = 400.0;
    const PAD: f64 = 56.0;
    const COLORS: [&str; 6] = ["#1b6ca8", "#d1495b", "#2e933c", "#edae49", "#66488c", "#555555"];
    let mut by_method: BTreeMap<&str, Vec<(f64, f64)>> = BTreeMap::new();
    for r in rows.iter().filter(|r| r.mean_rmse.is_finite()) {
        by_method.entry(&r.method).or_default().push((r.n as f64, r.mean_rmse));
    }
    let xs: Vec<f64> = by_method.values().flatten().map(|p| p.0).collect();
    let ys: Vec<f64> = by_method.values().flatten().map(|p| p.1).collect();
    let (x0, x1) = bounds(&xs);
    let (y0, y1) = bounds(&ys);
    let sx = |x: f64| PAD + (x - x0) / (x1 - x0) * (W - 2.0 * PAD);
    let sy = |y: f64| H - PAD - (y - y0) / (y1 - y0) * (H - 2.0 * PAD);
    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" font-family=\"sans-serif\" font-size=\"12\">\n"
    );
    svg.push_str(&format!(
        "<line x1=\"{PAD}\" y1=\"{0}\" x2=\"{1}\" y2=\"{0}\" stroke=\"black\"/>\n<line x1=\"{PAD}\" y1=\"{PAD}\" x2=\"{PAD}\" y2=\"{0}\" stroke=\"black\"/>\n",
        H - PAD,
        W - PAD
    ));
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">training subjects (n)</text>\n<text x=\"14\" y=\"{}\" transform=\"rotate(-90 14 {})\" text-anchor=\"middle\">mean test RMSE</text>\n",
        W / 2.0,
        H - 14.0,
        H / 2.0,
        H / 2.0
    ));
    for (v, label) in [(x0, x0), (x1, x1)] {
        svg.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{label}</text>\n",
            sx(v),
            H - PAD + 16.0
        ));
    }
    for v in [y0, y1] {
        svg.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\">{v:.3}</text>\n",
            PAD - 4.0,
            sy(v) + 4.0
        ));
    }
    for (i, (method, pts)) in by_method.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let path: Vec<String> = pts.iter().map(|&(x, y)| format!("{:.1},{:.1}", sx(x), sy(y))).collect();
        svg.push_str(&format!(
            "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"2\" points=\"{}\"/>\n",
            path.join(" ")
        ));
        for &(x, y) in pts {
            svg.push_str(&format!("<circle cx=\"{:.1}\" cy=\"{:.1}\" r=\"3\" fill=\"{color}\"/>\n", sx(x), sy(y)));
        }
        svg.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{:.1}\" fill=\"{color}\">{method}</text>\n",
            W - PAD - 150.0,
            PAD + 16.0 * i as f64
        ));
    }
    svg.push_str("</svg>\n");
    svg
}

fn bounds(v: &[f64]) -> (f64, f64) {
    let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !lo.is_finite() {
        (0.0, 1.0)
    } else if hi > lo {
        (lo, hi)
    } else {
        (lo - 0.5, hi + 0.5)
    }
}
