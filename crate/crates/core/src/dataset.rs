//! Tabular ingestion: CSV reading, recipe-driven encoding, stratified folds,
//! and synthetic biased fixtures.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::path::Path;

use log::warn;
use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics;
use crate::seed;

/// Cell texts treated as missing values.
const MISSING: &[&str] = &["", "?", "na", "n/a", "nan", "null", "none"];

fn is_missing(cell: &str) -> bool {
    let t = cell.trim();
    MISSING.iter().any(|m| t.eq_ignore_ascii_case(m))
}

fn parse_number(cell: &str) -> Option<f64> {
    if is_missing(cell) {
        return None;
    }
    cell.trim().parse::<f64>().ok().filter(|v| v.is_finite())
}

#[derive(Debug, Clone, PartialEq)]
pub struct RawTable {
    pub columns: Vec<String>,
    /// Row-major cells, kept as text; typing happens in [`encode`].
    pub rows: Vec<Vec<String>>,
}

impl RawTable {
    pub fn new(columns: Vec<String>, rows: Vec<Vec<String>>) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for c in &columns {
            if !seen.insert(c.as_str()) {
                return Err(Error::Data(format!("duplicate column name `{c}`")));
            }
        }
        for (i, r) in rows.iter().enumerate() {
            if r.len() != columns.len() {
                return Err(Error::Csv {
                    row: i + 1,
                    message: format!("expected {} cells, found {}", columns.len(), r.len()),
                });
            }
        }
        Ok(RawTable { columns, rows })
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }
}

/// Reads an RFC-4180 CSV file. Data rows are numbered from 1 in errors.
pub fn load_csv(path: impl AsRef<Path>, has_header: bool) -> Result<RawTable> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_csv(&bytes, has_header)
}

/// Repeated header names get `.1`, `.2`, ... suffixes on later copies.
fn dedupe_header(names: Vec<String>) -> Vec<String> {
    let mut seen: BTreeSet<String> = BTreeSet::new();
    let mut out = Vec::with_capacity(names.len());
    for n in names {
        let mut name = n.clone();
        let mut i = 1;
        while seen.contains(&name) {
            name = format!("{n}.{i}");
            i += 1;
        }
        if name != n {
            log::warn!("duplicate column `{n}` renamed to `{name}`");
        }
        seen.insert(name.clone());
        out.push(name);
    }
    out
}

pub fn parse_csv(bytes: &[u8], has_header: bool) -> Result<RawTable> {
    if bytes.iter().all(|b| b.is_ascii_whitespace()) {
        return Err(Error::Csv {
            row: 0,
            message: "empty file".into(),
        });
    }
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(bytes);
    let mut records = reader.records();
    let mut columns: Option<Vec<String>> = None;
    if has_header {
        match records.next() {
            Some(rec) => {
                let rec = rec.map_err(|e| Error::Csv {
                    row: 0,
                    message: e.to_string(),
                })?;
                columns = Some(dedupe_header(rec.iter().map(|s| s.trim().to_string()).collect()));
            }
            None => {
                return Err(Error::Csv {
                    row: 0,
                    message: "empty file".into(),
                })
            }
        }
    }
    let mut rows = Vec::new();
    for (i, rec) in records.enumerate() {
        let rec = rec.map_err(|e| Error::Csv {
            row: i + 1,
            message: e.to_string(),
        })?;
        let cells: Vec<String> = rec.iter().map(str::to_string).collect();
        let width = columns.as_ref().map(Vec::len).unwrap_or(cells.len());
        if columns.is_none() {
            columns = Some((0..width).map(|j| format!("col{j}")).collect());
        }
        if cells.len() != width {
            return Err(Error::Csv {
                row: i + 1,
                message: format!("ragged row: expected {width} cells, found {}", cells.len()),
            });
        }
        rows.push(cells);
    }
    let columns = columns.unwrap_or_default();
    RawTable::new(columns, rows)
}

/// A literal from a recipe: matched against cells textually, or numerically
/// when the literal is a number.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Literal {
    Number(f64),
    Text(String),
}

impl Literal {
    pub fn matches(&self, cell: &str) -> bool {
        match self {
            Literal::Text(t) => cell.trim() == t.trim(),
            Literal::Number(v) => parse_number(cell).is_some_and(|c| c == *v),
        }
    }
}

impl std::fmt::Display for Literal {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Literal::Number(v) => write!(f, "{v}"),
            Literal::Text(t) => f.write_str(t),
        }
    }
}

/// Which cell values mark the privileged group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Predicate {
    OneOf(Vec<Literal>),
    AtLeast(f64),
    AtMost(f64),
    /// Inclusive on both ends.
    Between(f64, f64),
}

impl Predicate {
    fn numeric(&self) -> bool {
        !matches!(self, Predicate::OneOf(_))
    }

    /// `None` when the cell cannot be evaluated (missing or unparseable).
    pub fn eval(&self, cell: &str) -> Option<bool> {
        if is_missing(cell) {
            return None;
        }
        match self {
            Predicate::OneOf(vals) => Some(vals.iter().any(|v| v.matches(cell))),
            Predicate::AtLeast(lo) => parse_number(cell).map(|v| v >= *lo),
            Predicate::AtMost(hi) => parse_number(cell).map(|v| v <= *hi),
            Predicate::Between(lo, hi) => parse_number(cell).map(|v| v >= *lo && v <= *hi),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtectedAttribute {
    pub column: String,
    pub privileged: Predicate,
}

/// Declarative encoding recipe. The first protected attribute is the active
/// one; further entries only change how their columns are encoded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetRecipe {
    #[serde(default)]
    pub name: Option<String>,
    pub target_column: String,
    pub favorable_value: Literal,
    pub protected_attributes: Vec<ProtectedAttribute>,
    #[serde(default)]
    pub categorical_columns: BTreeSet<String>,
    #[serde(default)]
    pub numeric_columns: BTreeSet<String>,
    #[serde(default)]
    pub scale_numeric: bool,
    #[serde(default)]
    pub drop_columns: BTreeSet<String>,
    #[serde(default)]
    pub group_rule: GroupRule,
    /// When non-empty, the only feature columns used.
    #[serde(default)]
    pub select_columns: BTreeSet<String>,
    /// Rows failing any filter are removed before encoding.
    #[serde(default)]
    pub row_filters: Vec<RowFilter>,
    /// Numeric columns turned into labelled categories.
    #[serde(default)]
    pub bins: Vec<Bin>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowFilter {
    pub column: String,
    pub keep: Predicate,
}

/// Value `v` gets `labels[k]` where `k` counts the edges below `v`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bin {
    pub column: String,
    pub edges: Vec<f64>,
    pub labels: Vec<String>,
}

impl Bin {
    fn label(&self, cell: &str) -> Option<&str> {
        let v = parse_number(cell)?;
        let k = self.edges.iter().filter(|&&e| e < v).count();
        Some(&self.labels[k])
    }
}

/// How protected attributes define the groups compared by fairness metrics.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupRule {
    /// Only the first protected attribute counts.
    #[default]
    Active,
    /// Privileged means privileged on every attribute and unprivileged means
    /// unprivileged on every attribute. Mixed rows stay in the data, take the
    /// first attribute's group for mitigation, and are left out of fairness
    /// metrics.
    Intersection,
}

impl DatasetRecipe {
    /// Loads a recipe from `.toml` or `.json`.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        match path.extension().and_then(|e| e.to_str()) {
            Some("json") => serde_json::from_str(&text).map_err(|e| Error::Recipe(e.to_string())),
            _ => toml::from_str(&text).map_err(|e| Error::Recipe(e.to_string())),
        }
    }

    pub fn active(&self) -> Result<&ProtectedAttribute> {
        self.protected_attributes
            .first()
            .ok_or_else(|| Error::Recipe("no protected attribute".into()))
    }

    fn check(&self, raw: &RawTable) -> Result<()> {
        if self.drop_columns.contains(&self.target_column) {
            return Err(Error::Recipe("target column is in the drop set".into()));
        }
        if let Some(c) = self.categorical_columns.intersection(&self.numeric_columns).next() {
            return Err(Error::Recipe(format!(
                "column `{c}` is both categorical and numeric"
            )));
        }
        self.active()?;
        for b in &self.bins {
            if b.labels.len() != b.edges.len() + 1 || b.edges.windows(2).any(|w| !(w[0] < w[1])) {
                return Err(Error::Recipe(format!(
                    "bins on `{}` need increasing edges and one more label than edges",
                    b.column
                )));
            }
        }
        if !self.select_columns.is_empty() {
            if let Some(p) = self.protected_attributes.iter().find(|p| !self.select_columns.contains(&p.column)) {
                return Err(Error::Recipe(format!("protected column `{}` is not selected", p.column)));
            }
        }
        let mentioned = std::iter::once(&self.target_column)
            .chain(&self.select_columns)
            .chain(self.row_filters.iter().map(|f| &f.column))
            .chain(self.bins.iter().map(|b| &b.column))
            .chain(self.protected_attributes.iter().map(|p| &p.column))
            .chain(&self.categorical_columns)
            .chain(&self.numeric_columns)
            .chain(&self.drop_columns);
        for c in mentioned {
            if raw.column_index(c).is_none() {
                return Err(Error::Recipe(format!("column `{c}` not found")));
            }
        }
        for p in &self.protected_attributes {
            if self.drop_columns.contains(&p.column) {
                return Err(Error::Recipe(format!(
                    "protected column `{}` is in the drop set",
                    p.column
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub x: Array2<f64>,
    pub feature_names: Vec<String>,
    /// Continuous features; one-hot and indicator columns are `false`.
    pub numeric: Vec<bool>,
    /// 1 = favorable.
    pub y: Vec<u8>,
    /// 1 = privileged.
    pub g: Vec<u8>,
    /// Min-max scale numeric features on each training fold.
    pub scale_numeric: bool,
    pub favorable_value: String,
    pub protected: String,
    pub dropped_rows: usize,
    /// Rows that fairness metrics count; `None` means all.
    pub counted: Option<Vec<bool>>,
}

impl Dataset {
    pub fn new(
        name: impl Into<String>,
        x: Array2<f64>,
        feature_names: Vec<String>,
        numeric: Vec<bool>,
        y: Vec<u8>,
        g: Vec<u8>,
    ) -> Result<Self> {
        let (n, d) = x.dim();
        if y.len() != n || g.len() != n {
            return Err(Error::Data(format!(
                "length mismatch: {n} rows, {} labels, {} groups",
                y.len(),
                g.len()
            )));
        }
        if feature_names.len() != d || numeric.len() != d {
            return Err(Error::Data("feature metadata width mismatch".into()));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("non-finite value in feature matrix".into()));
        }
        if y.iter().chain(&g).any(|&v| v > 1) {
            return Err(Error::Data("labels and groups must be 0/1".into()));
        }
        let mut seen = BTreeSet::new();
        for f in &feature_names {
            if !seen.insert(f.as_str()) {
                return Err(Error::Data(format!("duplicate feature name `{f}`")));
            }
        }
        let name = name.into();
        if n >= 4 {
            let both = |v: &[u8]| v.contains(&0) && v.contains(&1);
            if !both(&y) {
                warn!("dataset {name}: only one label value present");
            }
            if !both(&g) {
                warn!("dataset {name}: only one group present");
            }
        }
        Ok(Dataset {
            name,
            x,
            feature_names,
            numeric,
            y,
            g,
            scale_numeric: false,
            favorable_value: "1".into(),
            protected: "group".into(),
            dropped_rows: 0,
            counted: None,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.x.nrows()
    }

    pub fn n_cols(&self) -> usize {
        self.x.ncols()
    }

    /// Disparate impact of the true labels.
    pub fn baseline_di(&self) -> metrics::DisparateImpact {
        let all: Vec<usize> = (0..self.n_rows()).collect();
        let (y, g) = self.counted_labels(&all);
        metrics::disparate_impact(&y, &g)
    }

    /// Labels and groups of the given rows that fairness metrics count.
    pub fn counted_labels(&self, rows: &[usize]) -> (Vec<u8>, Vec<u8>) {
        rows.iter()
            .filter(|&&i| self.counted.as_ref().is_none_or(|c| c[i]))
            .map(|&i| (self.y[i], self.g[i]))
            .unzip()
    }

    pub fn rows(&self, idx: &[usize]) -> Array2<f64> {
        self.x.select(Axis(0), idx)
    }

    pub fn info(&self) -> DatasetInfo {
        DatasetInfo {
            name: self.name.clone(),
            n_rows: self.n_rows(),
            n_cols: self.n_cols(),
            favorable_value: self.favorable_value.clone(),
            protected: self.protected.clone(),
            baseline_di: self.baseline_di().value(),
        }
    }
}

/// Sidecar metadata for cached datasets and result stores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetInfo {
    pub name: String,
    pub n_rows: usize,
    pub n_cols: usize,
    pub favorable_value: String,
    pub protected: String,
    pub baseline_di: Option<f64>,
}

enum ColumnPlan {
    Categorical { values: Vec<String>, missing: bool },
    Numeric { parsed: Vec<Option<f64>> },
    Indicator(Predicate),
}

/// Encodes a raw table into a numeric dataset.
///
/// Rows whose target or active protected value is missing or unparseable are
/// dropped. Protected columns stay in the feature matrix; a protected column
/// listed as neither categorical nor numeric becomes one 0/1 indicator of its
/// privileged predicate. Other unlisted columns are numeric when every
/// present cell parses as a number and categorical otherwise.
pub fn encode(raw: &RawTable, recipe: &DatasetRecipe) -> Result<Dataset> {
    recipe.check(raw)?;
    let active = recipe.active()?;
    let t_idx = raw.column_index(&recipe.target_column).unwrap();
    let p_idx = raw.column_index(&active.column).unwrap();

    let others: Vec<(usize, &Predicate)> = match recipe.group_rule {
        GroupRule::Active => Vec::new(),
        GroupRule::Intersection => recipe.protected_attributes[1..]
            .iter()
            .map(|p| (raw.column_index(&p.column).unwrap(), &p.privileged))
            .collect(),
    };
    let mut keep = Vec::with_capacity(raw.n_rows());
    let mut y = Vec::new();
    let mut g = Vec::new();
    let mut counted = Vec::new();
    let filters: Vec<(usize, &Predicate)> = recipe
        .row_filters
        .iter()
        .map(|f| (raw.column_index(&f.column).unwrap(), &f.keep))
        .collect();
    let mut filtered = 0usize;
    'rows: for (i, row) in raw.rows.iter().enumerate() {
        if !filters.iter().all(|(j, pred)| pred.eval(&row[*j]) == Some(true)) {
            filtered += 1;
            continue;
        }
        let target = &row[t_idx];
        if is_missing(target) {
            continue;
        }
        let Some(privileged) = active.privileged.eval(&row[p_idx]) else {
            continue;
        };
        let mut agree = true;
        for (j, pred) in &others {
            match pred.eval(&row[*j]) {
                Some(v) => agree &= v == privileged,
                None => continue 'rows,
            }
        }
        keep.push(i);
        y.push(u8::from(recipe.favorable_value.matches(target)));
        g.push(u8::from(privileged));
        counted.push(agree);
    }
    if filtered > 0 {
        log::info!("encode: row filters removed {filtered} rows");
    }
    let dropped = raw.n_rows() - filtered - keep.len();
    if dropped > 0 {
        warn!("encode: dropped {dropped} rows with missing target or protected value");
    }
    if keep.is_empty() || y.iter().all(|&v| v == y[0]) {
        return Err(Error::Data("degenerate target".into()));
    }
    if !g.contains(&1) {
        return Err(Error::Data(format!(
            "privileged predicate on `{}` matches no rows",
            active.column
        )));
    }

    let protected: HashMap<&str, &Predicate> = recipe
        .protected_attributes
        .iter()
        .map(|p| (p.column.as_str(), &p.privileged))
        .collect();

    // Binned columns are read through their labels; unparseable cells
    // become missing.
    let binned: HashMap<usize, Vec<String>> = recipe
        .bins
        .iter()
        .map(|b| {
            let j = raw.column_index(&b.column).unwrap();
            let cells = raw
                .rows
                .iter()
                .map(|r| b.label(&r[j]).unwrap_or("").to_string())
                .collect();
            (j, cells)
        })
        .collect();
    let cell = |i: usize, j: usize| -> &str {
        match binned.get(&j) {
            Some(c) => &c[i],
            None => &raw.rows[i][j],
        }
    };

    let mut plans: Vec<(String, ColumnPlan)> = Vec::new();
    for (j, col) in raw.columns.iter().enumerate() {
        if j == t_idx || recipe.drop_columns.contains(col) {
            continue;
        }
        if !recipe.select_columns.is_empty() && !recipe.select_columns.contains(col) {
            continue;
        }
        let cells: Vec<&str> = keep.iter().map(|&i| cell(i, j)).collect();
        let plan = if binned.contains_key(&j) || recipe.categorical_columns.contains(col) {
            categorical_plan(&cells)
        } else if recipe.numeric_columns.contains(col) {
            let parsed: Vec<Option<f64>> = cells.iter().map(|c| parse_number(c)).collect();
            let bad = cells
                .iter()
                .zip(&parsed)
                .filter(|(c, p)| p.is_none() && !is_missing(c))
                .count();
            if bad > 0 {
                warn!("encode: {bad} unparseable cells in numeric column `{col}` imputed");
            }
            ColumnPlan::Numeric { parsed }
        } else if let Some(pred) = protected.get(col.as_str()) {
            ColumnPlan::Indicator((*pred).clone())
        } else {
            let parsed: Vec<Option<f64>> = cells.iter().map(|c| parse_number(c)).collect();
            let numeric = cells
                .iter()
                .zip(&parsed)
                .all(|(c, p)| p.is_some() || is_missing(c));
            if numeric && parsed.iter().any(Option::is_some) {
                ColumnPlan::Numeric { parsed }
            } else {
                categorical_plan(&cells)
            }
        };
        plans.push((col.clone(), plan));
    }

    let mut names = Vec::new();
    let mut numeric_mask = Vec::new();
    let mut columns: Vec<Vec<f64>> = Vec::new();
    for (col, plan) in &plans {
        let j = raw.column_index(col).unwrap();
        match plan {
            ColumnPlan::Categorical { values, missing } => {
                for v in values {
                    names.push(format!("{col}_{v}"));
                    numeric_mask.push(false);
                    columns.push(
                        keep.iter()
                            .map(|&i| {
                                let c = cell(i, j).trim();
                                f64::from(u8::from(!is_missing(c) && c == v))
                            })
                            .collect(),
                    );
                }
                if *missing {
                    names.push(format!("{col}_missing"));
                    numeric_mask.push(false);
                    columns.push(
                        keep.iter()
                            .map(|&i| f64::from(u8::from(is_missing(cell(i, j)))))
                            .collect(),
                    );
                }
            }
            ColumnPlan::Numeric { parsed } => {
                let med = median(parsed.iter().flatten().copied().collect())
                    .ok_or_else(|| Error::Data(format!("numeric column `{col}` has no values")))?;
                names.push(col.clone());
                numeric_mask.push(true);
                columns.push(parsed.iter().map(|p| p.unwrap_or(med)).collect());
            }
            ColumnPlan::Indicator(pred) => {
                names.push(col.clone());
                numeric_mask.push(false);
                columns.push(
                    keep.iter()
                        .map(|&i| f64::from(u8::from(pred.eval(&raw.rows[i][j]).unwrap_or(false))))
                        .collect(),
                );
            }
        }
    }

    let n = keep.len();
    let d = columns.len();
    let x = Array2::from_shape_fn((n, d), |(i, j)| columns[j][i]);
    let name = recipe.name.clone().unwrap_or_else(|| "dataset".to_string());
    let mut ds = Dataset::new(name, x, names, numeric_mask, y, g)?;
    ds.scale_numeric = recipe.scale_numeric;
    ds.favorable_value = recipe.favorable_value.to_string();
    ds.protected = active.column.clone();
    ds.dropped_rows = dropped;
    if recipe.group_rule == GroupRule::Intersection {
        ds.counted = Some(counted);
    }
    let _ = active.privileged.numeric();
    Ok(ds)
}

fn categorical_plan(cells: &[&str]) -> ColumnPlan {
    let mut values: Vec<String> = Vec::new();
    let mut seen = BTreeSet::new();
    let mut missing = false;
    for c in cells {
        if is_missing(c) {
            missing = true;
        } else if seen.insert(c.trim().to_string()) {
            values.push(c.trim().to_string());
        }
    }
    ColumnPlan::Categorical { values, missing }
}

fn median(mut v: Vec<f64>) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Some(if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    })
}

/// Assignment of rows to cross-validation folds.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldPlan {
    pub k: usize,
    pub assignments: Vec<usize>,
    pub strata: Vec<(u8, u8)>,
    pub seed: u64,
}

impl FoldPlan {
    pub fn test_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.assignments.len())
            .filter(|&i| self.assignments[i] == fold)
            .collect()
    }

    pub fn train_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.assignments.len())
            .filter(|&i| self.assignments[i] != fold)
            .collect()
    }

    /// `counts[stratum][fold]`, strata ordered (label, group).
    pub fn stratum_counts(&self) -> BTreeMap<(u8, u8), Vec<usize>> {
        let mut out: BTreeMap<(u8, u8), Vec<usize>> = BTreeMap::new();
        for (&s, &f) in self.strata.iter().zip(&self.assignments) {
            out.entry(s).or_insert_with(|| vec![0; self.k])[f] += 1;
        }
        out
    }
}

/// Folds stratified jointly on label and group.
pub fn stratified_kfold(ds: &Dataset, k: usize, seed: u64) -> Result<FoldPlan> {
    stratified_kfold_labels(&ds.y, &ds.g, k, seed)
}

/// Each stratum is shuffled and dealt round-robin; the dealing position
/// carries over between strata so overall fold sizes also differ by at most
/// one.
pub fn stratified_kfold_labels(y: &[u8], g: &[u8], k: usize, seed: u64) -> Result<FoldPlan> {
    let n = y.len();
    if k < 2 {
        return Err(Error::InvalidArgument(format!("k must be at least 2, got {k}")));
    }
    if k > n {
        return Err(Error::InvalidArgument(format!(
            "k = {k} exceeds the number of rows ({n})"
        )));
    }
    let strata: Vec<(u8, u8)> = y.iter().zip(g).map(|(&a, &b)| (a, b)).collect();
    let mut groups: BTreeMap<(u8, u8), Vec<usize>> = BTreeMap::new();
    for (i, s) in strata.iter().enumerate() {
        groups.entry(*s).or_default().push(i);
    }
    let mut rng = seed::rng(seed);
    let mut assignments = vec![0; n];
    let mut next = 0usize;
    for rows in groups.values_mut() {
        rows.shuffle(&mut rng);
        for &i in rows.iter() {
            assignments[i] = next % k;
            next += 1;
        }
    }
    Ok(FoldPlan {
        k,
        assignments,
        strata,
        seed,
    })
}

/// Stratified two-way split; returns (main, holdout) with roughly
/// `holdout_frac` of every (label, group) stratum in the holdout.
pub fn stratified_holdout(
    y: &[u8],
    g: &[u8],
    holdout_frac: f64,
    seed: u64,
) -> (Vec<usize>, Vec<usize>) {
    let mut groups: BTreeMap<(u8, u8), Vec<usize>> = BTreeMap::new();
    for i in 0..y.len() {
        groups.entry((y[i], g[i])).or_default().push(i);
    }
    let mut rng = seed::rng(seed);
    let mut main = Vec::new();
    let mut hold = Vec::new();
    for rows in groups.values_mut() {
        rows.shuffle(&mut rng);
        let h = ((rows.len() as f64) * holdout_frac).round() as usize;
        let h = h.min(rows.len().saturating_sub(1));
        hold.extend_from_slice(&rows[..h]);
        main.extend_from_slice(&rows[h..]);
    }
    main.sort_unstable();
    hold.sort_unstable();
    (main, hold)
}

/// Synthetic data with a planted favorable-rate gap between groups.
///
/// Groups are split evenly and each group receives exactly
/// `round(rate * group_size)` favorable labels, so the label disparate impact
/// tracks `rate_unpriv / rate_priv` up to rounding. Feature `j` is a noisy
/// group proxy when `j % 3 == 0`, a noisy label signal when `j % 3 == 1`, and
/// pure noise otherwise.
pub fn synth_biased(
    n: usize,
    rate_priv: f64,
    rate_unpriv: f64,
    n_features: usize,
    seed: u64,
) -> Result<Dataset> {
    if n < 8 {
        return Err(Error::InvalidArgument(format!("n must be at least 8, got {n}")));
    }
    for r in [rate_priv, rate_unpriv] {
        if !(0.0..=1.0).contains(&r) {
            return Err(Error::InvalidArgument(format!("rate {r} outside [0, 1]")));
        }
    }
    if n_features == 0 {
        return Err(Error::InvalidArgument("n_features must be positive".into()));
    }
    let mut rng = seed::rng(seed);
    let n_priv = n / 2;
    let mut g: Vec<u8> = (0..n).map(|i| u8::from(i < n_priv)).collect();
    g.shuffle(&mut rng);
    let mut y = vec![0u8; n];
    for (grp, rate) in [(1u8, rate_priv), (0u8, rate_unpriv)] {
        let mut members: Vec<usize> = (0..n).filter(|&i| g[i] == grp).collect();
        let fav = ((members.len() as f64) * rate).round() as usize;
        members.shuffle(&mut rng);
        for &i in &members[..fav] {
            y[i] = 1;
        }
    }
    let proxy = Normal::new(0.0, 0.6).unwrap();
    let signal = Normal::new(0.0, 1.0).unwrap();
    let mut names = Vec::with_capacity(n_features);
    let mut x = Array2::zeros((n, n_features));
    for j in 0..n_features {
        let kind = j % 3;
        names.push(match kind {
            0 => format!("proxy_{j}"),
            1 => format!("signal_{j}"),
            _ => format!("noise_{j}"),
        });
        for i in 0..n {
            x[[i, j]] = match kind {
                0 => f64::from(g[i]) + proxy.sample(&mut rng),
                1 => f64::from(y[i]) + signal.sample(&mut rng),
                _ => signal.sample(&mut rng),
            };
        }
    }
    let mut ds = Dataset::new("synth", x, names, vec![true; n_features], y, g)?;
    ds.scale_numeric = true;
    ds.protected = "group".into();
    Ok(ds)
}

/// Writes `<dir>/<name>.csv` (features, then `__label`, `__group`) and a
/// `<name>.json` metadata sidecar.
pub fn write_cache(ds: &Dataset, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let csv_path = dir.join(format!("{}.csv", ds.name));
    let mut w = csv::Writer::from_path(&csv_path).map_err(|e| Error::Data(e.to_string()))?;
    let mut header = ds.feature_names.clone();
    header.push("__label".into());
    header.push("__group".into());
    w.write_record(&header).map_err(|e| Error::Data(e.to_string()))?;
    for i in 0..ds.n_rows() {
        let mut rec: Vec<String> = ds.x.row(i).iter().map(|v| v.to_string()).collect();
        rec.push(ds.y[i].to_string());
        rec.push(ds.g[i].to_string());
        w.write_record(&rec).map_err(|e| Error::Data(e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(&csv_path, e))?;
    let meta = CacheMeta {
        info: ds.info(),
        numeric: ds.numeric.clone(),
        scale_numeric: ds.scale_numeric,
        counted: ds.counted.clone(),
    };
    let meta_path = dir.join(format!("{}.json", ds.name));
    fs::write(&meta_path, serde_json::to_string_pretty(&meta)?).map_err(|e| Error::io(&meta_path, e))
}

#[derive(Serialize, Deserialize)]
struct CacheMeta {
    #[serde(flatten)]
    info: DatasetInfo,
    numeric: Vec<bool>,
    scale_numeric: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    counted: Option<Vec<bool>>,
}

pub fn read_cache(dir: impl AsRef<Path>, name: &str) -> Result<Dataset> {
    let dir = dir.as_ref();
    let meta_path = dir.join(format!("{name}.json"));
    let text = fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
    let meta: CacheMeta = serde_json::from_str(&text)?;
    let raw = load_csv(dir.join(format!("{name}.csv")), true)?;
    let d = raw.columns.len().saturating_sub(2);
    let n = raw.n_rows();
    let mut x = Array2::zeros((n, d));
    let mut y = Vec::with_capacity(n);
    let mut g = Vec::with_capacity(n);
    for (i, row) in raw.rows.iter().enumerate() {
        for j in 0..d {
            x[[i, j]] = parse_number(&row[j])
                .ok_or_else(|| Error::Data(format!("bad cached value at row {}", i + 1)))?;
        }
        y.push(u8::from(row[d].trim() == "1"));
        g.push(u8::from(row[d + 1].trim() == "1"));
    }
    let mut ds = Dataset::new(
        meta.info.name,
        x,
        raw.columns[..d].to_vec(),
        meta.numeric,
        y,
        g,
    )?;
    ds.scale_numeric = meta.scale_numeric;
    ds.favorable_value = meta.info.favorable_value;
    ds.protected = meta.info.protected;
    ds.counted = meta.counted;
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(text: &str) -> RawTable {
        parse_csv(text.as_bytes(), true).unwrap()
    }

    #[test]
    fn reads_simple_file() {
        let t = table("a,b\n1,x\n2,y");
        assert_eq!(t.columns, vec!["a", "b"]);
        assert_eq!(t.n_rows(), 2);
        assert_eq!(t.rows[1], vec!["2", "y"]);
    }

    #[test]
    fn ragged_row_names_row() {
        let err = parse_csv(b"a,b\n1,x\n2", true).unwrap_err();
        match err {
            Error::Csv { row, .. } => assert_eq!(row, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn quoted_comma_preserved() {
        let t = table("v,w\n\"1,5\",z");
        assert_eq!(t.rows[0][0], "1,5");
        assert_eq!(t.rows[0][1], "z");
    }

    #[test]
    fn empty_file_is_error() {
        assert!(parse_csv(b"", true).is_err());
        assert!(parse_csv(b"  \n", false).is_err());
    }

    #[test]
    fn headerless_columns_are_numbered() {
        let t = parse_csv(b"1,2\n3,4\n", false).unwrap();
        assert_eq!(t.columns, vec!["col0", "col1"]);
        assert_eq!(t.n_rows(), 2);
    }

    fn toy_recipe() -> DatasetRecipe {
        DatasetRecipe {
            name: Some("toy".into()),
            target_column: "hired".into(),
            favorable_value: Literal::Text("yes".into()),
            protected_attributes: vec![ProtectedAttribute {
                column: "sex".into(),
                privileged: Predicate::OneOf(vec![Literal::Text("M".into())]),
            }],
            categorical_columns: ["sex".to_string()].into(),
            numeric_columns: BTreeSet::new(),
            scale_numeric: false,
            drop_columns: BTreeSet::new(),
            group_rule: GroupRule::Active,
            select_columns: BTreeSet::new(),
            row_filters: Vec::new(),
            bins: Vec::new(),
        }
    }

    #[test]
    fn toy_encoding_matches_hand_encoding() {
        let raw = table("sex,inc,hired\nM,1,yes\nF,2,no\nM,3,yes");
        let ds = encode(&raw, &toy_recipe()).unwrap();
        assert_eq!(ds.feature_names, vec!["sex_M", "sex_F", "inc"]);
        let expected = ndarray::array![[1.0, 0.0, 1.0], [0.0, 1.0, 2.0], [1.0, 0.0, 3.0]];
        assert_eq!(ds.x, expected);
        assert_eq!(ds.y, vec![1, 0, 1]);
        assert_eq!(ds.g, vec![1, 0, 1]);
        assert_eq!(ds.numeric, vec![false, false, true]);
    }

    #[test]
    fn numeric_only_recipe_is_identity() {
        let raw = table("a,b,t\n1.5,-2,1\n0,3.25,0\n7,8,1");
        let recipe = DatasetRecipe {
            target_column: "t".into(),
            favorable_value: Literal::Number(1.0),
            protected_attributes: vec![ProtectedAttribute {
                column: "a".into(),
                privileged: Predicate::AtLeast(1.0),
            }],
            numeric_columns: ["a".to_string(), "b".to_string()].into(),
            categorical_columns: BTreeSet::new(),
            ..toy_recipe()
        };
        let ds = encode(&raw, &recipe).unwrap();
        assert_eq!(ds.x, ndarray::array![[1.5, -2.0], [0.0, 3.25], [7.0, 8.0]]);
        assert_eq!(ds.y, vec![1, 0, 1]);
        assert_eq!(ds.g, vec![1, 0, 1]);
    }

    #[test]
    fn missing_values_follow_policy() {
        let raw = table("sex,inc,city,hired\nM,1,a,yes\nF,?,,no\n,3,b,yes\nM,5,a,\nF,9,b,no");
        let mut r = toy_recipe();
        r.categorical_columns.insert("city".into());
        let ds = encode(&raw, &r).unwrap();
        // rows 3 (missing sex) and 4 (missing target) dropped
        assert_eq!(ds.n_rows(), 3);
        assert_eq!(ds.dropped_rows, 2);
        let inc = ds.feature_names.iter().position(|n| n == "inc").unwrap();
        // median of {1, 9}
        assert_eq!(ds.x[[1, inc]], 5.0);
        assert!(ds.feature_names.contains(&"city_missing".to_string()));
    }

    #[test]
    fn degenerate_target_rejected() {
        let raw = table("sex,hired\nM,yes\nF,yes");
        let err = encode(&raw, &toy_recipe()).unwrap_err();
        assert!(err.to_string().contains("degenerate target"));
    }

    #[test]
    fn predicate_matching_nothing_rejected() {
        let raw = table("sex,hired\nF,yes\nF,no");
        assert!(encode(&raw, &toy_recipe()).is_err());
    }

    #[test]
    fn recipe_consistency_checks() {
        let raw = table("sex,hired\nM,yes\nF,no");
        let mut r = toy_recipe();
        r.drop_columns.insert("hired".into());
        assert!(matches!(encode(&raw, &r), Err(Error::Recipe(_))));
        let mut r = toy_recipe();
        r.numeric_columns.insert("sex".into());
        assert!(matches!(encode(&raw, &r), Err(Error::Recipe(_))));
        let mut r = toy_recipe();
        r.protected_attributes[0].column = "race".into();
        assert!(matches!(encode(&raw, &r), Err(Error::Recipe(_))));
    }

    #[test]
    fn unlisted_protected_column_becomes_indicator() {
        let raw = table("status,age,t\nmale single,30,good\nfemale,22,bad\nmale mar,40,good");
        let recipe = DatasetRecipe {
            name: None,
            target_column: "t".into(),
            favorable_value: Literal::Text("good".into()),
            protected_attributes: vec![ProtectedAttribute {
                column: "status".into(),
                privileged: Predicate::OneOf(vec![
                    Literal::Text("male single".into()),
                    Literal::Text("male mar".into()),
                ]),
            }],
            categorical_columns: BTreeSet::new(),
            numeric_columns: BTreeSet::new(),
            scale_numeric: false,
            drop_columns: BTreeSet::new(),
            group_rule: GroupRule::Active,
            select_columns: BTreeSet::new(),
            row_filters: Vec::new(),
            bins: Vec::new(),
        };
        let ds = encode(&raw, &recipe).unwrap();
        assert_eq!(ds.feature_names, vec!["status", "age"]);
        assert_eq!(ds.x.column(0).to_vec(), vec![1.0, 0.0, 1.0]);
        assert_eq!(ds.numeric, vec![false, true]);
    }

    #[test]
    fn encode_is_deterministic() {
        let raw = table("sex,inc,hired\nM,1,yes\nF,2,no\nM,3,yes\nF,4,yes");
        assert_eq!(encode(&raw, &toy_recipe()).unwrap(), encode(&raw, &toy_recipe()).unwrap());
    }

    #[test]
    fn recipe_parses_from_toml_and_json() {
        let toml_text = r#"
            target_column = "hired"
            favorable_value = "yes"
            categorical_columns = ["sex"]
            [[protected_attributes]]
            column = "sex"
            privileged = { one_of = ["M"] }
        "#;
        let r: DatasetRecipe = toml::from_str(toml_text).unwrap();
        assert_eq!(r.favorable_value, Literal::Text("yes".into()));
        let json = r#"{"target_column":"t","favorable_value":1,
            "protected_attributes":[{"column":"age","privileged":{"at_least":26}}]}"#;
        let r: DatasetRecipe = serde_json::from_str(json).unwrap();
        assert_eq!(r.protected_attributes[0].privileged, Predicate::AtLeast(26.0));
        assert!(serde_json::from_str::<DatasetRecipe>(r#"{"target_column":"t","favorable_value":1,"protected_attributes":[],"bogus":1}"#).is_err());
    }

    #[test]
    fn balanced_strata_split_evenly() {
        // 12 rows, 3 per stratum
        let y: Vec<u8> = (0..12).map(|i| (i % 2) as u8).collect();
        let g: Vec<u8> = (0..12).map(|i| ((i / 2) % 2) as u8).collect();
        let plan = stratified_kfold_labels(&y, &g, 3, 11).unwrap();
        let counts = plan.stratum_counts();
        assert_eq!(counts.len(), 4);
        for per_fold in counts.values() {
            assert_eq!(per_fold, &vec![1, 1, 1]);
        }
    }

    #[test]
    fn kfold_rejects_bad_k() {
        let y = vec![0, 1, 0, 1];
        let g = vec![0, 0, 1, 1];
        assert!(stratified_kfold_labels(&y, &g, 1, 0).is_err());
        assert!(stratified_kfold_labels(&y, &g, 5, 0).is_err());
    }

    #[test]
    fn kfold_is_deterministic() {
        let ds = synth_biased(200, 0.7, 0.4, 3, 1).unwrap();
        assert_eq!(stratified_kfold(&ds, 3, 9).unwrap(), stratified_kfold(&ds, 3, 9).unwrap());
        assert_ne!(
            stratified_kfold(&ds, 3, 9).unwrap().assignments,
            stratified_kfold(&ds, 3, 10).unwrap().assignments
        );
    }

    #[test]
    fn holdout_is_stratified() {
        let ds = synth_biased(400, 0.8, 0.4, 2, 3).unwrap();
        let (main, hold) = stratified_holdout(&ds.y, &ds.g, 0.3, 5);
        assert_eq!(main.len() + hold.len(), 400);
        let frac = hold.len() as f64 / 400.0;
        assert!((frac - 0.3).abs() < 0.02);
        let mut all: Vec<usize> = main.iter().chain(&hold).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..400).collect::<Vec<_>>());
    }

    #[test]
    fn synth_rejects_tiny_n() {
        assert!(synth_biased(4, 0.5, 0.5, 3, 0).is_err());
        assert!(synth_biased(100, 1.5, 0.5, 3, 0).is_err());
    }

    #[test]
    fn synth_label_di_tracks_rate_ratio() {
        // oracle: direct favorable-rate counts
        let ds = synth_biased(10_000, 0.8, 0.4, 3, 2).unwrap();
        let rate = |grp: u8| {
            let m: Vec<u8> = (0..ds.n_rows()).filter(|&i| ds.g[i] == grp).map(|i| ds.y[i]).collect();
            m.iter().map(|&v| f64::from(v)).sum::<f64>() / m.len() as f64
        };
        let di = rate(0) / rate(1);
        assert!((0.45..=0.55).contains(&di), "di = {di}");
        let eq = synth_biased(10_000, 0.5, 0.5, 3, 2).unwrap();
        let di = eq.baseline_di().value().unwrap();
        assert!((0.95..=1.05).contains(&di));
    }

    #[test]
    fn cache_round_trip() {
        let ds = synth_biased(50, 0.6, 0.3, 4, 8).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_cache(&ds, dir.path()).unwrap();
        let back = read_cache(dir.path(), "synth").unwrap();
        assert_eq!(back.y, ds.y);
        assert_eq!(back.g, ds.g);
        assert_eq!(back.x, ds.x);
        assert_eq!(back.numeric, ds.numeric);
    }

    #[test]
    fn intersection_rule_leaves_mixed_rows_out_of_di() {
        let raw = table("sex,age,ok\nM,40,1\nM,30,0\nF,20,1\nF,22,0\nF,21,0\nM,20,1\nF,50,1");
        let recipe = DatasetRecipe {
            name: Some("t".into()),
            target_column: "ok".into(),
            favorable_value: Literal::Number(1.0),
            protected_attributes: vec![
                ProtectedAttribute {
                    column: "sex".into(),
                    privileged: Predicate::OneOf(vec![Literal::Text("M".into())]),
                },
                ProtectedAttribute {
                    column: "age".into(),
                    privileged: Predicate::AtLeast(26.0),
                },
            ],
            categorical_columns: BTreeSet::new(),
            numeric_columns: BTreeSet::new(),
            scale_numeric: false,
            drop_columns: BTreeSet::new(),
            group_rule: GroupRule::Intersection,
            select_columns: BTreeSet::new(),
            row_filters: Vec::new(),
            bins: Vec::new(),
        };
        let ds = encode(&raw, &recipe).unwrap();
        assert_eq!(ds.n_rows(), 7);
        assert_eq!(ds.counted, Some(vec![true, true, true, true, true, false, false]));
        assert_eq!(ds.g, vec![1, 1, 0, 0, 0, 1, 0]);
        // unprivileged 1/3 over privileged 1/2
        let di = ds.baseline_di().value().unwrap();
        assert!((di - 2.0 / 3.0).abs() < 1e-12);
        let single = encode(&raw, &DatasetRecipe { group_rule: GroupRule::Active, ..recipe }).unwrap();
        assert_eq!(single.counted, None);
        // F: 2/4, M: 2/3
        assert!((single.baseline_di().value().unwrap() - 0.75).abs() < 1e-12);
    }
}
