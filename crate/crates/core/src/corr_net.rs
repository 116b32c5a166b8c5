//! Weighted correlation network analysis.
//!
//! Features are compared by absolute Pearson correlation, soft-thresholded into
//! an adjacency matrix, converted to a topological overlap matrix and clustered
//! by average-linkage hierarchical clustering. Features that end up in small
//! clusters form the grey module (module id 0).

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::panel_data::PanelDataset;

/// Dense symmetric matrix stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix {
    order: usize,
    data: Vec<f64>,
}

impl SymMatrix {
    /// Builds a matrix from a full row-major buffer. The upper triangle is
    /// mirrored onto the lower one so symmetry holds exactly.
    pub fn from_row_major(order: usize, mut data: Vec<f64>) -> Result<Self> {
        if data.len() != order * order {
            return Err(Error::Argument(format!(
                "expected {} entries for order {order}, got {}",
                order * order,
                data.len()
            )));
        }
        for u in 0..order {
            for v in 0..u {
                data[u * order + v] = data[v * order + u];
            }
        }
        Ok(Self { order, data })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    #[inline]
    pub fn get(&self, u: usize, v: usize) -> f64 {
        self.data[u * self.order + v]
    }

    pub fn row(&self, u: usize) -> &[f64] {
        &self.data[u * self.order..(u + 1) * self.order]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn write_csv<W: Write>(&self, names: &[String], out: W) -> Result<()> {
        write_matrix_csv(self.order, &self.data, names, out)
    }
}

/// Topological overlap matrix; entries in [0, 1] with unit diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct TomMatrix(SymMatrix);

impl TomMatrix {
    /// Wraps a precomputed overlap matrix, checking its range.
    pub fn from_matrix(m: SymMatrix) -> Result<Self> {
        if m.data.iter().any(|w| !(0.0..=1.0).contains(w)) {
            return Err(Error::Argument("overlap entries must lie in [0, 1]".into()));
        }
        Ok(Self(m))
    }

    pub fn order(&self) -> usize {
        self.0.order
    }

    #[inline]
    pub fn get(&self, u: usize, v: usize) -> f64 {
        self.0.get(u, v)
    }

    pub fn matrix(&self) -> &SymMatrix {
        &self.0
    }
}

fn write_matrix_csv<W: Write>(order: usize, data: &[f64], names: &[String], out: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    let mut header = vec![String::new()];
    header.extend(names.iter().cloned());
    wtr.write_record(&header)?;
    for u in 0..order {
        let mut rec = vec![names.get(u).cloned().unwrap_or_else(|| u.to_string())];
        rec.extend(data[u * order..(u + 1) * order].iter().map(|x| format!("{x}")));
        wtr.write_record(&rec)?;
    }
    wtr.flush()?;
    Ok(())
}

/// Absolute Pearson correlations between the named numeric columns, computed
/// over all observation rows.
pub fn similarity_matrix<S: AsRef<str>>(ds: &PanelDataset, features: &[S]) -> Result<SymMatrix> {
    let cols = features
        .iter()
        .map(|f| ds.numeric(f.as_ref()))
        .collect::<Result<Vec<_>>>()?;
    similarity_from_columns(&cols)
}

/// Absolute Pearson correlation matrix of the given columns. A constant column
/// correlates 0 with every other column.
pub fn similarity_from_columns(cols: &[&[f64]]) -> Result<SymMatrix> {
    let p = cols.len();
    let n = cols.first().map_or(0, |c| c.len());
    if n < 2 {
        return Err(Error::InsufficientData(format!(
            "similarity needs at least 2 rows, got {n}"
        )));
    }
    if cols.iter().any(|c| c.len() != n) {
        return Err(Error::Argument("columns differ in length".into()));
    }
    // unit-norm centered copies
    let unit: Vec<Vec<f64>> = cols
        .par_iter()
        .map(|c| {
            let mean = c.iter().sum::<f64>() / n as f64;
            let centered: Vec<f64> = c.iter().map(|x| x - mean).collect();
            let norm = centered.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 0.0 && norm.is_finite() {
                centered.into_iter().map(|x| x / norm).collect()
            } else {
                vec![0.0; n]
            }
        })
        .collect();
    let mut data = vec![0.0; p * p];
    data.par_chunks_mut(p).enumerate().for_each(|(u, row)| {
        row[u] = 1.0;
        for v in u + 1..p {
            let r: f64 = unit[u].iter().zip(&unit[v]).map(|(a, b)| a * b).sum();
            row[v] = r.abs().min(1.0);
        }
    });
    SymMatrix::from_row_major(p, data)
}

/// One row of the scale-free topology fit table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleFreeFit {
    pub beta: u32,
    /// `-sign(slope) * R^2`; NaN when the fit is undefined.
    pub signed_r2: f64,
    pub slope: f64,
    pub mean_k: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoftThreshold {
    pub beta: u32,
    pub table: Vec<ScaleFreeFit>,
    /// Set when no candidate produced a usable fit and the fallback power was
    /// returned.
    pub fallback: bool,
}

pub const FALLBACK_BETA: u32 = 6;
const SCALE_FREE_BINS: usize = 10;

/// Chooses the soft-threshold power by the scale-free topology criterion:
/// the smallest candidate whose signed R^2 reaches `r2_target`, otherwise the
/// candidate with the largest positive signed R^2, otherwise [`FALLBACK_BETA`]
/// with `fallback` set.
pub fn pick_soft_threshold(s: &SymMatrix, candidates: &[u32], r2_target: f64) -> Result<SoftThreshold> {
    if candidates.is_empty() || candidates.contains(&0) {
        return Err(Error::Argument(
            "soft-threshold candidates must be non-empty and >= 1".into(),
        ));
    }
    let table: Vec<ScaleFreeFit> = candidates
        .par_iter()
        .map(|&beta| scale_free_fit(s, beta))
        .collect();
    if candidates.len() == 1 {
        let fallback = !table[0].signed_r2.is_finite();
        return Ok(SoftThreshold {
            beta: candidates[0],
            table,
            fallback,
        });
    }
    if let Some(fit) = table
        .iter()
        .filter(|f| f.signed_r2.is_finite() && f.signed_r2 >= r2_target)
        .min_by_key(|f| f.beta)
    {
        return Ok(SoftThreshold {
            beta: fit.beta,
            table,
            fallback: false,
        });
    }
    // a non-positive signed R^2 everywhere means no candidate shows any
    // scale-free tendency; treat like a degenerate network
    let best = table
        .iter()
        .filter(|f| f.signed_r2.is_finite() && f.signed_r2 > 0.0)
        .fold(None::<&ScaleFreeFit>, |best, f| match best {
            Some(b) if b.signed_r2 > f.signed_r2 || (b.signed_r2 == f.signed_r2 && b.beta < f.beta) => {
                Some(b)
            }
            _ => Some(f),
        });
    match best {
        Some(fit) => Ok(SoftThreshold {
            beta: fit.beta,
            table,
            fallback: false,
        }),
        None => {
            let beta = if candidates.contains(&FALLBACK_BETA) {
                FALLBACK_BETA
            } else {
                let mut sorted = candidates.to_vec();
                sorted.sort_unstable();
                sorted[sorted.len() / 2]
            };
            Ok(SoftThreshold {
                beta,
                table,
                fallback: true,
            })
        }
    }
}

fn scale_free_fit(s: &SymMatrix, beta: u32) -> ScaleFreeFit {
    let p = s.order();
    let k: Vec<f64> = (0..p)
        .map(|u| {
            s.row(u)
                .iter()
                .enumerate()
                .filter(|&(r, _)| r != u)
                .map(|(_, x)| x.powi(beta as i32))
                .sum()
        })
        .collect();
    let mean_k = if p > 0 { k.iter().sum::<f64>() / p as f64 } else { 0.0 };
    let undefined = ScaleFreeFit {
        beta,
        signed_r2: f64::NAN,
        slope: f64::NAN,
        mean_k,
    };
    let logs: Vec<(f64, f64)> = k
        .iter()
        .filter(|&&x| x > 0.0)
        .map(|&x| (x.log10(), x))
        .collect();
    if logs.len() < 2 {
        return undefined;
    }
    let lo = logs.iter().map(|l| l.0).fold(f64::INFINITY, f64::min);
    let hi = logs.iter().map(|l| l.0).fold(f64::NEG_INFINITY, f64::max);
    if hi - lo <= 0.0 {
        return undefined;
    }
    let width = (hi - lo) / SCALE_FREE_BINS as f64;
    let mut count = [0usize; SCALE_FREE_BINS];
    let mut sum_k = [0.0f64; SCALE_FREE_BINS];
    for &(lk, x) in &logs {
        let b = (((lk - lo) / width) as usize).min(SCALE_FREE_BINS - 1);
        count[b] += 1;
        sum_k[b] += x;
    }
    let pts: Vec<(f64, f64)> = (0..SCALE_FREE_BINS)
        .filter(|&b| count[b] > 0)
        .map(|b| {
            let kbar = sum_k[b] / count[b] as f64;
            (kbar.log10(), (count[b] as f64 / p as f64).log10())
        })
        .collect();
    if pts.len() < 2 {
        return undefined;
    }
    let m = pts.len() as f64;
    let mx = pts.iter().map(|q| q.0).sum::<f64>() / m;
    let my = pts.iter().map(|q| q.1).sum::<f64>() / m;
    let sxx: f64 = pts.iter().map(|q| (q.0 - mx).powi(2)).sum();
    let syy: f64 = pts.iter().map(|q| (q.1 - my).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|q| (q.0 - mx) * (q.1 - my)).sum();
    if sxx <= 0.0 {
        return undefined;
    }
    let slope = sxy / sxx;
    let r2 = if syy > 0.0 { sxy * sxy / (sxx * syy) } else { 0.0 };
    ScaleFreeFit {
        beta,
        signed_r2: -slope.signum() * r2,
        slope,
        mean_k,
    }
}

/// Soft-thresholded adjacency `a_uv = s_uv^beta` with unit diagonal.
pub fn adjacency(s: &SymMatrix, beta: u32) -> Result<SymMatrix> {
    if beta == 0 {
        return Err(Error::Argument("soft-threshold power must be >= 1".into()));
    }
    let p = s.order();
    let mut data: Vec<f64> = s.as_slice().par_iter().map(|x| x.powi(beta as i32)).collect();
    for u in 0..p {
        data[u * p + u] = 1.0;
    }
    SymMatrix::from_row_major(p, data)
}

/// Topological overlap
/// `w_uv = (q_uv + a_uv) / (min(c_u, c_v) + 1 - a_uv)` with
/// `q_uv = sum_{r != u,v} a_ur a_rv` and `c_u = sum_{r != u} a_ur`.
pub fn tom(a: &SymMatrix) -> Result<TomMatrix> {
    let p = a.order();
    if a.as_slice().iter().any(|x| !(0.0..=1.0).contains(x)) {
        return Err(Error::Argument("adjacency entries must lie in [0, 1]".into()));
    }
    let mut off = a.as_slice().to_vec();
    for u in 0..p {
        off[u * p + u] = 0.0;
    }
    let conn: Vec<f64> = off.chunks(p).map(|row| row.iter().sum()).collect();
    let mut data = vec![0.0; p * p];
    data.par_chunks_mut(p).enumerate().for_each(|(u, out)| {
        // With a zeroed diagonal the r = u and r = v terms vanish.
        let mut q = vec![0.0; p];
        let row_u = &off[u * p..(u + 1) * p];
        for (r, &aur) in row_u.iter().enumerate() {
            if aur == 0.0 {
                continue;
            }
            for (qv, arv) in q.iter_mut().zip(&off[r * p..(r + 1) * p]) {
                *qv += aur * arv;
            }
        }
        for v in 0..p {
            out[v] = if v == u {
                1.0
            } else {
                let auv = off[u * p + v];
                let w = (q[v] + auv) / (conn[u].min(conn[v]) + 1.0 - auv);
                w.clamp(0.0, 1.0)
            };
        }
    });
    Ok(TomMatrix(SymMatrix::from_row_major(p, data)?))
}

/// One agglomeration step. Leaves are `0..p`; the cluster formed at step `s`
/// has id `p + s`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Merge {
    pub step: usize,
    pub left: usize,
    pub right: usize,
    pub height: f64,
    pub size: usize,
}

/// Average-linkage agglomerative clustering of a dissimilarity matrix.
/// Ties in merge height go to the pair whose smallest member indices are
/// lexicographically smallest.
pub fn average_linkage(dist: &SymMatrix) -> Vec<Merge> {
    let n = dist.order();
    let mut d = dist.as_slice().to_vec();
    let mut active = vec![true; n];
    let mut size = vec![1usize; n];
    let mut id: Vec<usize> = (0..n).collect();
    let mut best = vec![(f64::INFINITY, usize::MAX); n];

    // Slot index doubles as the cluster's smallest member, so scanning only
    // j > i keeps the lexicographic tie rule.
    let scan = |d: &[f64], active: &[bool], i: usize| -> (f64, usize) {
        let mut b = (f64::INFINITY, usize::MAX);
        for j in i + 1..n {
            if active[j] && d[i * n + j] < b.0 {
                b = (d[i * n + j], j);
            }
        }
        b
    };
    for i in 0..n {
        best[i] = scan(&d, &active, i);
    }

    let mut merges = Vec::with_capacity(n.saturating_sub(1));
    for step in 0..n.saturating_sub(1) {
        let mut a = usize::MAX;
        let mut hd = f64::INFINITY;
        for i in 0..n {
            if active[i] && best[i].1 != usize::MAX && (a == usize::MAX || best[i].0 < hd) {
                a = i;
                hd = best[i].0;
            }
        }
        if a == usize::MAX {
            break;
        }
        let b = best[a].1;
        let (na, nb) = (size[a] as f64, size[b] as f64);
        for k in 0..n {
            if active[k] && k != a && k != b {
                let v = (na * d[a * n + k] + nb * d[b * n + k]) / (na + nb);
                d[a * n + k] = v;
                d[k * n + a] = v;
            }
        }
        active[b] = false;
        merges.push(Merge {
            step,
            left: id[a].min(id[b]),
            right: id[a].max(id[b]),
            height: hd,
            size: size[a] + size[b],
        });
        size[a] += size[b];
        id[a] = n + step;
        best[b] = (f64::INFINITY, usize::MAX);
        best[a] = scan(&d, &active, a);
        for i in 0..n {
            if !active[i] || i == a {
                continue;
            }
            if best[i].1 == a || best[i].1 == b {
                best[i] = scan(&d, &active, i);
            } else if i < a {
                let v = d[i * n + a];
                if v < best[i].0 || (v == best[i].0 && a < best[i].1) {
                    best[i] = (v, a);
                }
            }
        }
    }
    merges
}

/// Partition of the network features into modules. Module 0 is grey.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModuleAssignment {
    pub features: Vec<String>,
    pub labels: Vec<usize>,
    /// Number of modules with the grey module counted as one of them.
    pub module_count: usize,
}

impl ModuleAssignment {
    /// Number of non-grey modules.
    pub fn non_grey_count(&self) -> usize {
        self.module_count - 1
    }

    /// Members of module `id` in feature order.
    pub fn members(&self, id: usize) -> Vec<String> {
        self.features
            .iter()
            .zip(&self.labels)
            .filter(|(_, &l)| l == id)
            .map(|(f, _)| f.clone())
            .collect()
    }

    pub fn grey(&self) -> Vec<String> {
        self.members(0)
    }

    pub fn label_of(&self, feature: &str) -> Option<usize> {
        self.features
            .iter()
            .position(|f| f == feature)
            .map(|i| self.labels[i])
    }

    /// Every feature in the grey module.
    pub fn all_grey(features: Vec<String>) -> Self {
        let labels = vec![0; features.len()];
        Self {
            features,
            labels,
            module_count: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModuleParams {
    pub min_module_size: usize,
    pub cut_height: f64,
}

impl Default for ModuleParams {
    fn default() -> Self {
        Self {
            min_module_size: 20,
            cut_height: 0.99,
        }
    }
}

/// Clusters features on `1 - w`, cuts the dendrogram below `cut_height` and
/// dissolves clusters smaller than `min_module_size` into grey. Non-grey
/// modules are numbered 1.. by decreasing size (ties: smallest member first).
pub fn detect_modules(
    w: &TomMatrix,
    features: &[String],
    min_module_size: usize,
    cut_height: f64,
) -> Result<(ModuleAssignment, Vec<Merge>)> {
    let p = w.order();
    if features.len() != p {
        return Err(Error::Argument(format!(
            "{} feature names for an order-{p} matrix",
            features.len()
        )));
    }
    if min_module_size < 2 {
        return Err(Error::Argument("min_module_size must be >= 2".into()));
    }
    if !(cut_height > 0.0 && cut_height <= 1.0) {
        return Err(Error::Argument("cut_height must lie in (0, 1]".into()));
    }
    let dist: Vec<f64> = w.matrix().as_slice().iter().map(|x| 1.0 - x).collect();
    let merges = average_linkage(&SymMatrix::from_row_major(p, dist)?);

    // members of every dendrogram node, leaves first
    let mut parent: Vec<usize> = (0..p).collect();
    fn find(parent: &mut [usize], x: usize) -> usize {
        let mut r = x;
        while parent[r] != r {
            r = parent[r];
        }
        let mut c = x;
        while parent[c] != r {
            let next = parent[c];
            parent[c] = r;
            c = next;
        }
        r
    }
    let mut rep: Vec<usize> = (0..p).collect();
    for m in &merges {
        let (ra, rb) = (rep[m.left], rep[m.right]);
        rep.push(ra.min(rb));
        if m.height < cut_height {
            let (x, y) = (find(&mut parent, ra), find(&mut parent, rb));
            if x != y {
                parent[x.max(y)] = x.min(y);
            }
        }
    }
    let mut groups: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
    for u in 0..p {
        let r = find(&mut parent, u);
        groups.entry(r).or_default().push(u);
    }
    let mut modules: Vec<Vec<usize>> = groups
        .into_values()
        .filter(|g| g.len() >= min_module_size)
        .collect();
    modules.sort_by(|a, b| b.len().cmp(&a.len()).then(a[0].cmp(&b[0])));
    let mut labels = vec![0usize; p];
    for (i, g) in modules.iter().enumerate() {
        for &u in g {
            labels[u] = i + 1;
        }
    }
    Ok((
        ModuleAssignment {
            features: features.to_vec(),
            labels,
            module_count: modules.len() + 1,
        },
        merges,
    ))
}

/// Settings for the full network pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkParams {
    pub beta_candidates: Vec<u32>,
    pub r2_target: f64,
    pub modules: ModuleParams,
}

impl Default for NetworkParams {
    fn default() -> Self {
        Self {
            beta_candidates: (1..=20).collect(),
            r2_target: 0.85,
            modules: ModuleParams::default(),
        }
    }
}

/// Intermediate products of [`build_network`], kept for debug dumps.
#[derive(Debug, Clone)]
pub struct Network {
    pub features: Vec<String>,
    pub similarity: SymMatrix,
    pub soft_threshold: SoftThreshold,
    pub adjacency: SymMatrix,
    pub tom: TomMatrix,
    pub merges: Vec<Merge>,
    pub modules: ModuleAssignment,
}

/// Similarity, soft threshold, adjacency, overlap and modules for `features`.
pub fn build_network(ds: &PanelDataset, features: &[String], params: &NetworkParams) -> Result<Network> {
    let similarity = similarity_matrix(ds, features)?;
    let soft_threshold = pick_soft_threshold(&similarity, &params.beta_candidates, params.r2_target)?;
    let adjacency = adjacency(&similarity, soft_threshold.beta)?;
    let tom = tom(&adjacency)?;
    let (modules, merges) = detect_modules(
        &tom,
        features,
        params.modules.min_module_size,
        params.modules.cut_height,
    )?;
    Ok(Network {
        features: features.to_vec(),
        similarity,
        soft_threshold,
        adjacency,
        tom,
        merges,
        modules,
    })
}

impl Network {
    /// Writes similarity.csv, adjacency.csv, tom.csv and merges.csv into `dir`.
    pub fn dump(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let open = |name: &str| -> Result<std::io::BufWriter<std::fs::File>> {
            Ok(std::io::BufWriter::new(std::fs::File::create(dir.join(name))?))
        };
        self.similarity.write_csv(&self.features, open("similarity.csv")?)?;
        self.adjacency.write_csv(&self.features, open("adjacency.csv")?)?;
        self.tom.matrix().write_csv(&self.features, open("tom.csv")?)?;
        let mut wtr = csv::Writer::from_writer(open("merges.csv")?);
        wtr.write_record(["step", "left", "right", "height"])?;
        for m in &self.merges {
            wtr.write_record([
                m.step.to_string(),
                m.left.to_string(),
                m.right.to_string(),
                format!("{}", m.height),
            ])?;
        }
        wtr.flush()?;
        Ok(())
    }
}
