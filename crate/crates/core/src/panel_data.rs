//! Long-format longitudinal panels: feature roles, CSV ingestion, subject-level
//! splitting and column standardization.
//!
//! A [`PanelDataset`] holds one row per (cluster, time) observation. Feature
//! columns are either numeric or categorical; only `fixed_split` columns may be
//! categorical. Datasets are immutable once built; derived datasets share their
//! column storage.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt::Write as _;
use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// User-declared roles of the columns of a panel.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureRoles {
    /// Candidate features to be selected from.
    pub var_select: Vec<String>,
    /// Features used as regressors in every tree.
    pub fixed_regress: Vec<String>,
    /// Features offered as splitting candidates in every tree.
    pub fixed_split: Vec<String>,
    pub cluster_col: String,
    pub time_col: Option<String>,
    pub response_col: String,
    /// `fixed_split` columns forced to be read as categorical even when every
    /// value parses as a number.
    #[serde(default)]
    pub categorical: Vec<String>,
}

impl FeatureRoles {
    pub fn new(cluster_col: impl Into<String>, response_col: impl Into<String>) -> Self {
        Self {
            var_select: Vec::new(),
            fixed_regress: Vec::new(),
            fixed_split: Vec::new(),
            cluster_col: cluster_col.into(),
            time_col: None,
            response_col: response_col.into(),
            categorical: Vec::new(),
        }
    }

    /// Checks that the role lists and the cluster/response columns are pairwise
    /// disjoint. The time column is an ordinary numeric column and may also be
    /// declared as a regressor or splitter.
    pub fn validate(&self) -> Result<()> {
        if self.cluster_col.is_empty() {
            return Err(Error::Schema("cluster column must be named".into()));
        }
        if self.response_col.is_empty() {
            return Err(Error::Schema("response column must be named".into()));
        }
        if self.cluster_col == self.response_col {
            return Err(Error::Schema(format!(
                "column `{}` is declared both as cluster and as response",
                self.cluster_col
            )));
        }
        let mut seen: HashMap<&str, &str> = HashMap::new();
        seen.insert(&self.cluster_col, "cluster");
        seen.insert(&self.response_col, "response");
        for (role, list) in [
            ("var_select", &self.var_select),
            ("fixed_regress", &self.fixed_regress),
            ("fixed_split", &self.fixed_split),
        ] {
            for col in list {
                if let Some(prev) = seen.get(col.as_str()) {
                    return Err(Error::Schema(format!(
                        "column `{col}` is declared both as {prev} and as {role}"
                    )));
                }
                seen.insert(col, role);
            }
        }
        if let Some(t) = &self.time_col {
            if t == &self.cluster_col || t == &self.response_col {
                return Err(Error::Schema(format!(
                    "time column `{t}` collides with the cluster or response column"
                )));
            }
            if self.var_select.contains(t) {
                return Err(Error::Schema(format!(
                    "time column `{t}` cannot be a var_select feature"
                )));
            }
        }
        for c in &self.categorical {
            if !self.fixed_split.contains(c) {
                return Err(Error::Schema(format!(
                    "categorical column `{c}` must be declared in fixed_split"
                )));
            }
        }
        Ok(())
    }

    /// All feature columns in declaration order: var_select, fixed_regress,
    /// fixed_split.
    pub fn feature_columns(&self) -> impl Iterator<Item = &String> {
        self.var_select
            .iter()
            .chain(&self.fixed_regress)
            .chain(&self.fixed_split)
    }

    /// Parses the flat `key = a,b,c` role configuration format.
    ///
    /// Recognized keys: `var_select`, `fixed_regress`, `fixed_split`,
    /// `cluster`, `time`, `response`, `categorical`. Blank lines and lines
    /// starting with `#` are ignored. A list entry of the form `X1..X400`
    /// expands to `X1, X2, ..., X400`.
    pub fn parse_config(text: &str) -> Result<Self> {
        let mut roles = FeatureRoles::new("", "");
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Schema(format!("roles line {}: expected `key = value`", lineno + 1))
            })?;
            let key = key.trim();
            let value = value.trim();
            let list = || -> Result<Vec<String>> {
                let mut out = Vec::new();
                for item in value.split(',').map(str::trim).filter(|s| !s.is_empty()) {
                    out.extend(expand_range(item)?);
                }
                Ok(out)
            };
            match key {
                "var_select" => roles.var_select = list()?,
                "fixed_regress" => roles.fixed_regress = list()?,
                "fixed_split" => roles.fixed_split = list()?,
                "categorical" => roles.categorical = list()?,
                "cluster" => roles.cluster_col = value.to_string(),
                "response" => roles.response_col = value.to_string(),
                "time" => roles.time_col = (!value.is_empty()).then(|| value.to_string()),
                other => {
                    return Err(Error::Schema(format!(
                        "roles line {}: unknown key `{other}`",
                        lineno + 1
                    )))
                }
            }
        }
        roles.validate()?;
        Ok(roles)
    }

    pub fn to_config_string(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "cluster = {}", self.cluster_col);
        if let Some(t) = &self.time_col {
            let _ = writeln!(s, "time = {t}");
        }
        let _ = writeln!(s, "response = {}", self.response_col);
        let _ = writeln!(s, "var_select = {}", self.var_select.join(","));
        let _ = writeln!(s, "fixed_regress = {}", self.fixed_regress.join(","));
        let _ = writeln!(s, "fixed_split = {}", self.fixed_split.join(","));
        if !self.categorical.is_empty() {
            let _ = writeln!(s, "categorical = {}", self.categorical.join(","));
        }
        s
    }

    pub fn read_config(path: &Path) -> Result<Self> {
        Self::parse_config(&std::fs::read_to_string(path)?)
    }
}

fn expand_range(item: &str) -> Result<Vec<String>> {
    let Some((lo, hi)) = item.split_once("..") else {
        return Ok(vec![item.to_string()]);
    };
    let split_num = |s: &str| {
        let pos = s.find(|c: char| c.is_ascii_digit())?;
        let (prefix, digits) = s.split_at(pos);
        digits.parse::<usize>().ok().map(|n| (prefix.to_string(), n))
    };
    match (split_num(lo), split_num(hi)) {
        (Some((p1, a)), Some((p2, b))) if p1 == p2 && a <= b => {
            Ok((a..=b).map(|i| format!("{p1}{i}")).collect())
        }
        _ => Err(Error::Schema(format!("malformed column range `{item}`"))),
    }
}

/// A single feature column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Column {
    Numeric(Vec<f64>),
    /// Level codes index into `levels`, which are enumerated in order of first
    /// appearance.
    Categorical { codes: Vec<u32>, levels: Vec<String> },
}

impl Column {
    pub fn len(&self) -> usize {
        match self {
            Column::Numeric(v) => v.len(),
            Column::Categorical { codes, .. } => codes.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn as_numeric(&self) -> Option<&[f64]> {
        match self {
            Column::Numeric(v) => Some(v),
            Column::Categorical { .. } => None,
        }
    }

    fn select(&self, rows: &[usize]) -> Column {
        match self {
            Column::Numeric(v) => Column::Numeric(rows.iter().map(|&r| v[r]).collect()),
            Column::Categorical { codes, levels } => Column::Categorical {
                codes: rows.iter().map(|&r| codes[r]).collect(),
                levels: levels.clone(),
            },
        }
    }

    fn render(&self, row: usize) -> String {
        match self {
            Column::Numeric(v) => format!("{}", v[row]),
            Column::Categorical { codes, levels } => levels[codes[row] as usize].clone(),
        }
    }
}

/// Long-format longitudinal table.
#[derive(Debug, Clone, PartialEq)]
pub struct PanelDataset {
    roles: FeatureRoles,
    cluster_names: Vec<String>,
    clusters: Vec<usize>,
    time: Option<Vec<f64>>,
    response: Vec<f64>,
    columns: Vec<(String, Arc<Column>)>,
    index: HashMap<String, usize>,
}

impl PanelDataset {
    /// Builds a dataset from in-memory parts. Every feature named in `roles`
    /// must be present in `columns`; extra columns are kept.
    pub fn from_parts(
        roles: FeatureRoles,
        cluster_labels: Vec<String>,
        time: Option<Vec<f64>>,
        response: Vec<f64>,
        columns: Vec<(String, Column)>,
    ) -> Result<Self> {
        roles.validate()?;
        let n = response.len();
        if cluster_labels.len() != n {
            return Err(Error::Argument(format!(
                "{} cluster labels for {n} responses",
                cluster_labels.len()
            )));
        }
        if let Some(t) = &time {
            if t.len() != n {
                return Err(Error::Argument("time column length mismatch".into()));
            }
        }
        for (row, y) in response.iter().enumerate() {
            if !y.is_finite() {
                return Err(Error::Row {
                    row: row + 1,
                    message: "response is missing or not finite".into(),
                });
            }
        }
        let mut cluster_names = Vec::new();
        let mut lookup: HashMap<String, usize> = HashMap::new();
        let mut clusters = Vec::with_capacity(n);
        for (row, label) in cluster_labels.into_iter().enumerate() {
            if label.is_empty() {
                return Err(Error::Row {
                    row: row + 1,
                    message: "missing cluster id".into(),
                });
            }
            let next = cluster_names.len();
            let code = *lookup.entry(label.clone()).or_insert_with(|| {
                cluster_names.push(label);
                next
            });
            clusters.push(code);
        }
        let mut index = HashMap::new();
        let mut stored = Vec::with_capacity(columns.len());
        for (name, col) in columns {
            if col.len() != n {
                return Err(Error::Argument(format!("column `{name}` length mismatch")));
            }
            if index.insert(name.clone(), stored.len()).is_some() {
                return Err(Error::Schema(format!("duplicate column `{name}`")));
            }
            stored.push((name, Arc::new(col)));
        }
        let ds = Self {
            roles,
            cluster_names,
            clusters,
            time,
            response,
            columns: stored,
            index,
        };
        ds.check_roles()?;
        Ok(ds)
    }

    fn check_roles(&self) -> Result<()> {
        for name in self.roles.feature_columns() {
            let col = self
                .column(name)
                .ok_or_else(|| Error::Schema(format!("missing column `{name}`")))?;
            let must_be_numeric = !self.roles.fixed_split.contains(name);
            match col {
                Column::Numeric(v) => {
                    if let Some(row) = v.iter().position(|x| !x.is_finite()) {
                        return Err(Error::Row {
                            row: row + 1,
                            message: format!("non-finite value in column `{name}`"),
                        });
                    }
                }
                Column::Categorical { .. } if must_be_numeric => {
                    return Err(Error::Schema(format!(
                        "column `{name}` must be numeric in its declared role"
                    )));
                }
                Column::Categorical { .. } => {}
            }
        }
        Ok(())
    }

    pub fn roles(&self) -> &FeatureRoles {
        &self.roles
    }

    /// Returns a copy with different roles over the same columns.
    pub fn with_roles(&self, roles: FeatureRoles) -> Result<Self> {
        roles.validate()?;
        let mut ds = self.clone();
        ds.roles = roles;
        ds.check_roles()?;
        Ok(ds)
    }

    pub fn n_rows(&self) -> usize {
        self.response.len()
    }

    pub fn n_clusters(&self) -> usize {
        self.cluster_names.len()
    }

    /// Distinct cluster ids in order of first appearance.
    pub fn cluster_names(&self) -> &[String] {
        &self.cluster_names
    }

    /// Per-row cluster codes indexing [`Self::cluster_names`].
    pub fn cluster_codes(&self) -> &[usize] {
        &self.clusters
    }

    pub fn cluster_label(&self, row: usize) -> &str {
        &self.cluster_names[self.clusters[row]]
    }

    pub fn time(&self) -> Option<&[f64]> {
        self.time.as_deref()
    }

    pub fn response(&self) -> &[f64] {
        &self.response
    }

    pub fn column(&self, name: &str) -> Option<&Column> {
        self.index.get(name).map(|&i| self.columns[i].1.as_ref())
    }

    pub fn numeric(&self, name: &str) -> Result<&[f64]> {
        match self.column(name) {
            Some(Column::Numeric(v)) => Ok(v),
            Some(Column::Categorical { .. }) => {
                Err(Error::Schema(format!("column `{name}` is not numeric")))
            }
            None => Err(Error::Schema(format!("missing column `{name}`"))),
        }
    }

    pub fn column_names(&self) -> impl Iterator<Item = &str> {
        self.columns.iter().map(|(n, _)| n.as_str())
    }

    /// Adds (or replaces) a derived numeric column.
    pub fn with_numeric_column(&self, name: &str, values: Vec<f64>) -> Result<Self> {
        if values.len() != self.n_rows() {
            return Err(Error::Argument(format!("column `{name}` length mismatch")));
        }
        let mut ds = self.clone();
        let col = Arc::new(Column::Numeric(values));
        match ds.index.get(name) {
            Some(&i) => ds.columns[i].1 = col,
            None => {
                ds.index.insert(name.to_string(), ds.columns.len());
                ds.columns.push((name.to_string(), col));
            }
        }
        Ok(ds)
    }

    /// Dataset restricted to `rows`, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> Self {
        let mut cluster_names = Vec::new();
        let mut remap: HashMap<usize, usize> = HashMap::new();
        let clusters = rows
            .iter()
            .map(|&r| {
                let old = self.clusters[r];
                let next = cluster_names.len();
                *remap.entry(old).or_insert_with(|| {
                    cluster_names.push(self.cluster_names[old].clone());
                    next
                })
            })
            .collect();
        Self {
            roles: self.roles.clone(),
            cluster_names,
            clusters,
            time: self
                .time
                .as_ref()
                .map(|t| rows.iter().map(|&r| t[r]).collect()),
            response: rows.iter().map(|&r| self.response[r]).collect(),
            columns: self
                .columns
                .iter()
                .map(|(n, c)| (n.clone(), Arc::new(c.select(rows))))
                .collect(),
            index: self.index.clone(),
        }
    }

    /// Rows whose cluster id is in `ids`, in file order.
    pub fn subset_clusters<S: AsRef<str>>(&self, ids: &[S]) -> Self {
        let wanted: HashSet<&str> = ids.iter().map(|s| s.as_ref()).collect();
        let rows: Vec<usize> = (0..self.n_rows())
            .filter(|&r| wanted.contains(self.cluster_label(r)))
            .collect();
        self.select_rows(&rows)
    }

    /// Row order sorted by (cluster id, time, original position). Results
    /// computed on the reordered dataset do not depend on input row order.
    pub fn canonical_order(&self) -> Vec<usize> {
        let mut rows: Vec<usize> = (0..self.n_rows()).collect();
        rows.sort_by(|&a, &b| {
            self.cluster_label(a)
                .cmp(self.cluster_label(b))
                .then_with(|| {
                    let ta = self.time.as_ref().map_or(0.0, |t| t[a]);
                    let tb = self.time.as_ref().map_or(0.0, |t| t[b]);
                    ta.total_cmp(&tb)
                })
                .then_with(|| self.response[a].total_cmp(&self.response[b]))
        });
        rows
    }

    /// Reads a long-format CSV file. See [`Self::read_csv`].
    pub fn load_csv(path: &Path, roles: &FeatureRoles) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::read_csv(file, roles)
    }

    /// Reads CSV data with a header row. Rows keep their file order;
    /// categorical levels are enumerated in order of first appearance.
    /// Row numbers in errors count data rows from 1.
    pub fn read_csv<R: Read>(reader: R, roles: &FeatureRoles) -> Result<Self> {
        roles.validate()?;
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let headers = rdr.headers()?.clone();
        let position = |name: &str| -> Result<usize> {
            headers
                .iter()
                .position(|h| h.trim() == name)
                .ok_or_else(|| Error::Schema(format!("missing column `{name}`")))
        };
        let cluster_idx = position(&roles.cluster_col)?;
        let response_idx = position(&roles.response_col)?;
        let time_idx = roles.time_col.as_deref().map(position).transpose()?;
        let mut feature_names: Vec<&String> = Vec::new();
        for name in roles.feature_columns() {
            if !feature_names.contains(&name) {
                feature_names.push(name);
            }
        }
        let feature_idx = feature_names
            .iter()
            .map(|n| position(n))
            .collect::<Result<Vec<_>>>()?;

        let mut labels = Vec::new();
        let mut response = Vec::new();
        let mut time = time_idx.map(|_| Vec::new());
        let mut raw: Vec<Vec<String>> = vec![Vec::new(); feature_names.len()];
        for (i, record) in rdr.records().enumerate() {
            let record = record?;
            let row = i + 1;
            let label = record.get(cluster_idx).unwrap_or("").trim();
            if label.is_empty() || label.eq_ignore_ascii_case("na") {
                return Err(Error::Row {
                    row,
                    message: "missing cluster id".into(),
                });
            }
            labels.push(label.to_string());
            let y = record.get(response_idx).unwrap_or("").trim();
            if y.is_empty() || y.eq_ignore_ascii_case("na") {
                return Err(Error::Row {
                    row,
                    message: "missing response".into(),
                });
            }
            response.push(parse_number(y, row, &roles.response_col)?);
            if let (Some(ti), Some(tv)) = (time_idx, time.as_mut()) {
                let name = roles.time_col.as_deref().unwrap_or_default();
                tv.push(parse_number(record.get(ti).unwrap_or("").trim(), row, name)?);
            }
            for (k, &fi) in feature_idx.iter().enumerate() {
                raw[k].push(record.get(fi).unwrap_or("").trim().to_string());
            }
        }

        let mut columns = Vec::with_capacity(feature_names.len());
        for (name, values) in feature_names.into_iter().zip(raw) {
            let splitter = roles.fixed_split.contains(name);
            let forced = roles.categorical.contains(name);
            let numeric_ok = values.iter().all(|v| v.parse::<f64>().is_ok());
            let col = if splitter && (forced || !numeric_ok) {
                let mut levels: Vec<String> = Vec::new();
                let mut codes = Vec::with_capacity(values.len());
                for (i, v) in values.into_iter().enumerate() {
                    if v.is_empty() || v.eq_ignore_ascii_case("na") {
                        return Err(Error::Row {
                            row: i + 1,
                            message: format!("missing value in column `{name}`"),
                        });
                    }
                    let code = match levels.iter().position(|l| *l == v) {
                        Some(c) => c,
                        None => {
                            levels.push(v);
                            levels.len() - 1
                        }
                    };
                    codes.push(code as u32);
                }
                Column::Categorical { codes, levels }
            } else {
                let parsed = values
                    .iter()
                    .enumerate()
                    .map(|(i, v)| parse_number(v, i + 1, name))
                    .collect::<Result<Vec<_>>>()?;
                Column::Numeric(parsed)
            };
            columns.push((name.clone(), col));
        }
        Self::from_parts(roles.clone(), labels, time, response, columns)
    }

    /// Writes the dataset as CSV: cluster, time (if any), response, then the
    /// feature columns. Reals use the shortest round-trip representation.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        let roles = &self.roles;
        let time_separate = roles
            .time_col
            .as_ref()
            .filter(|t| self.column(t).is_none());
        let mut header = vec![roles.cluster_col.clone()];
        if let Some(t) = time_separate {
            header.push(t.clone());
        }
        header.push(roles.response_col.clone());
        header.extend(self.columns.iter().map(|(n, _)| n.clone()));
        wtr.write_record(&header)?;
        let mut record = Vec::with_capacity(header.len());
        for row in 0..self.n_rows() {
            record.clear();
            record.push(self.cluster_label(row).to_string());
            if time_separate.is_some() {
                let t = self.time.as_ref().map_or(0.0, |t| t[row]);
                record.push(format!("{t}"));
            }
            record.push(format!("{}", self.response[row]));
            record.extend(self.columns.iter().map(|(_, c)| c.render(row)));
            wtr.write_record(&record)?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let file = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_csv(file)
    }
}

fn parse_number(value: &str, row: usize, column: &str) -> Result<f64> {
    match value.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(Error::Parse {
            row,
            column: column.to_string(),
            value: value.to_string(),
        }),
    }
}

/// Disjoint train/validation/test partition of cluster ids.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubjectSplit {
    pub train: BTreeSet<String>,
    pub validation: BTreeSet<String>,
    pub test: BTreeSet<String>,
}

/// Randomly partitions clusters (never rows) into train/validation/test
/// groups of the requested sizes. Deterministic given `seed`.
pub fn split_subjects(
    ds: &PanelDataset,
    counts: (usize, usize, usize),
    seed: u64,
) -> Result<SubjectSplit> {
    let (train, val, test) = counts;
    let n = ds.n_clusters();
    if train + val + test != n {
        return Err(Error::Argument(format!(
            "split counts {train}+{val}+{test} do not sum to {n} clusters"
        )));
    }
    let mut ids: Vec<&String> = ds.cluster_names().iter().collect();
    ids.sort();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ids.shuffle(&mut rng);
    let take = |range: std::ops::Range<usize>| ids[range].iter().map(|s| (*s).clone()).collect();
    Ok(SubjectSplit {
        train: take(0..train),
        validation: take(train..train + val),
        test: take(train + val..n),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnStats {
    pub name: String,
    pub mean: f64,
    pub sd: f64,
}

/// Means and standard deviations (n-1 denominator) of numeric feature columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StandardizeStats {
    pub columns: Vec<ColumnStats>,
}

impl StandardizeStats {
    pub fn get(&self, name: &str) -> Option<&ColumnStats> {
        self.columns.iter().find(|c| c.name == name)
    }
}

/// Z-scores every numeric feature column. When `stats` is `None` they are
/// computed from `ds`; constant columns get sd 1 and become all zero.
pub fn standardize(
    ds: &PanelDataset,
    stats: Option<&StandardizeStats>,
) -> Result<(PanelDataset, StandardizeStats)> {
    let mut names: Vec<&String> = Vec::new();
    for name in ds.roles.feature_columns() {
        if matches!(ds.column(name), Some(Column::Numeric(_))) && !names.contains(&name) {
            names.push(name);
        }
    }
    let stats = match stats {
        Some(s) => {
            for name in &names {
                if s.get(name).is_none() {
                    return Err(Error::Schema(format!(
                        "standardization stats do not cover column `{name}`"
                    )));
                }
            }
            s.clone()
        }
        None => StandardizeStats {
            columns: names
                .iter()
                .map(|name| {
                    let v = ds.numeric(name).expect("numeric column");
                    let (mean, sd) = mean_sd(v);
                    ColumnStats {
                        name: (*name).clone(),
                        mean,
                        sd: if sd > 0.0 && sd.is_finite() { sd } else { 1.0 },
                    }
                })
                .collect(),
        },
    };
    let mut out = ds.clone();
    for name in names {
        let st = stats.get(name).expect("checked above");
        let scaled = ds
            .numeric(name)?
            .iter()
            .map(|x| (x - st.mean) / st.sd)
            .collect();
        let i = out.index[name.as_str()];
        out.columns[i].1 = Arc::new(Column::Numeric(scaled));
    }
    Ok((out, stats))
}

/// Mean and sample standard deviation (n-1 denominator).
pub fn mean_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let ss: f64 = values.iter().map(|x| (x - mean) * (x - mean)).sum();
    (mean, (ss / (n - 1) as f64).sqrt())
}
