//! Weighted least squares with absorbed fixed effects and robust or
//! cluster-robust standard errors.

mod models;
mod render;

use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};
use thiserror::Error;

pub use models::{
    liwc_association, skill_association, trait_segregation_regression, trait_wage_regression, wage_gap_regression,
    wage_gap_table, FigurePoint, SkillOptions, WageGapOptions, WageGapResult, WageGapVariant,
};
pub use render::{render_table, stars};

#[derive(Debug, Error, PartialEq)]
pub enum EconError {
    #[error("unknown column `{0}`")]
    UnknownColumn(String),
    #[error("column `{0}` must be numeric")]
    NotNumeric(String),
    #[error("column `{name}` has {got} rows, table has {want}")]
    Length { name: String, got: usize, want: usize },
    #[error("duplicate column `{0}`")]
    DuplicateColumn(String),
    #[error("invalid specification: {0}")]
    Spec(String),
    #[error("column `{0}` is perfectly collinear with the other regressors or fixed effects")]
    Collinear(String),
    #[error("model is saturated: {n} usable rows for {k} parameters")]
    Saturated { n: usize, k: usize },
    #[error("fixed-effect demeaning did not converge after {0} iterations")]
    NonConvergence(usize),
    #[error("clustered errors need at least two clusters, found {0}")]
    TooFewClusters(usize),
    #[error("no usable observations: {0}")]
    NoData(String),
}

type Result<T> = std::result::Result<T, EconError>;

/// Convergence tolerance on the largest within-group mean.
pub const DEMEAN_TOL: f64 = 1e-10;
pub const DEMEAN_MAX_ITER: usize = 10_000;
const PIVOT_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub enum Column {
    Numeric(Vec<Option<f64>>),
    Categorical(Vec<Option<String>>),
}

impl Column {
    fn len(&self) -> usize {
        match self {
            Column::Numeric(v) => v.len(),
            Column::Categorical(v) => v.len(),
        }
    }

    fn present(&self, i: usize) -> bool {
        match self {
            Column::Numeric(v) => v[i].is_some_and(f64::is_finite),
            Column::Categorical(v) => v[i].is_some(),
        }
    }

    fn label(&self, i: usize) -> String {
        match self {
            Column::Numeric(v) => v[i].map(|x| x.to_string()).unwrap_or_default(),
            Column::Categorical(v) => v[i].clone().unwrap_or_default(),
        }
    }
}

/// Rectangular table of named columns with missing values.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DataTable {
    nrows: usize,
    names: Vec<String>,
    columns: Vec<Column>,
}

impl DataTable {
    pub fn new(nrows: usize) -> Self {
        DataTable { nrows, names: Vec::new(), columns: Vec::new() }
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn column_names(&self) -> &[String] {
        &self.names
    }

    pub fn push(&mut self, name: impl Into<String>, column: Column) -> Result<()> {
        let name = name.into();
        if column.len() != self.nrows {
            return Err(EconError::Length { name, got: column.len(), want: self.nrows });
        }
        if self.names.contains(&name) {
            return Err(EconError::DuplicateColumn(name));
        }
        self.names.push(name);
        self.columns.push(column);
        Ok(())
    }

    pub fn push_numeric(&mut self, name: impl Into<String>, values: Vec<f64>) -> Result<()> {
        self.push(name, Column::Numeric(values.into_iter().map(Some).collect()))
    }

    pub fn push_categorical<S: Into<String>>(&mut self, name: impl Into<String>, values: Vec<S>) -> Result<()> {
        self.push(name, Column::Categorical(values.into_iter().map(|s| Some(s.into())).collect()))
    }

    pub fn get(&self, name: &str) -> Option<&Column> {
        self.names.iter().position(|n| n == name).map(|i| &self.columns[i])
    }

    fn col(&self, name: &str) -> Result<&Column> {
        self.get(name).ok_or_else(|| EconError::UnknownColumn(name.to_string()))
    }

    fn numeric(&self, name: &str) -> Result<&[Option<f64>]> {
        match self.col(name)? {
            Column::Numeric(v) => Ok(v),
            Column::Categorical(_) => Err(EconError::NotNumeric(name.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeKind {
    #[default]
    Hc1,
    #[serde(rename = "cluster_cr1")]
    Cr1,
}

/// What to do with a regressor that is a linear combination of earlier ones.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OnCollinear {
    #[default]
    Error,
    /// Drop it, keep earlier columns, and record the name.
    Drop,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionSpec {
    pub outcome: String,
    pub regressors: Vec<String>,
    /// Each entry is one fixed-effect dimension; several columns in an entry
    /// form an interaction.
    #[serde(default)]
    pub fixed_effects: Vec<Vec<String>>,
    #[serde(default)]
    pub weights: Option<String>,
    #[serde(default)]
    pub cluster: Option<String>,
    #[serde(default)]
    pub se_kind: SeKind,
    #[serde(default)]
    pub on_collinear: OnCollinear,
}

impl RegressionSpec {
    pub fn new(outcome: &str, regressors: &[&str]) -> Self {
        RegressionSpec {
            outcome: outcome.into(),
            regressors: regressors.iter().map(|s| s.to_string()).collect(),
            fixed_effects: Vec::new(),
            weights: None,
            cluster: None,
            se_kind: SeKind::Hc1,
            on_collinear: OnCollinear::Error,
        }
    }

    pub fn absorb(mut self, dims: &[&[&str]]) -> Self {
        self.fixed_effects = dims.iter().map(|d| d.iter().map(|s| s.to_string()).collect()).collect();
        self
    }

    pub fn weighted(mut self, column: &str) -> Self {
        self.weights = Some(column.into());
        self
    }

    pub fn clustered(mut self, column: &str) -> Self {
        self.cluster = Some(column.into());
        self.se_kind = SeKind::Cr1;
        self
    }

    fn referenced(&self) -> Vec<&str> {
        let mut v = vec![self.outcome.as_str()];
        v.extend(self.regressors.iter().map(String::as_str));
        v.extend(self.fixed_effects.iter().flatten().map(String::as_str));
        v.extend(self.weights.as_deref());
        v.extend(self.cluster.as_deref());
        v
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Term {
    pub name: String,
    pub coef: f64,
    pub se: f64,
    pub t: f64,
    pub p: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionResult {
    pub spec: RegressionSpec,
    pub terms: Vec<Term>,
    pub n_effective: usize,
    pub n_singletons_dropped: usize,
    pub r_squared: f64,
    pub outcome_mean: f64,
    /// Parameters counted in the small-sample correction, fixed effects
    /// included.
    pub k: usize,
    pub fe_levels: Vec<usize>,
    pub n_clusters: Option<usize>,
    /// Collinear columns dropped under [`OnCollinear::Drop`].
    #[serde(default)]
    pub dropped_columns: Vec<String>,
    /// Requested terms with no variation in the data, reported as absent.
    #[serde(default)]
    pub absent_terms: Vec<String>,
    #[serde(default)]
    pub notes: Vec<String>,
}

impl RegressionResult {
    pub fn term(&self, name: &str) -> Option<&Term> {
        self.terms.iter().find(|t| t.name == name)
    }

    pub fn coef(&self, name: &str) -> Option<f64> {
        self.term(name).map(|t| t.coef)
    }

    pub fn se(&self, name: &str) -> Option<f64> {
        self.term(name).map(|t| t.se)
    }
}

/// Row-to-group assignments for the absorbed fixed effects.
struct FixedEffects {
    ids: Vec<Vec<usize>>,
    wsum: Vec<Vec<f64>>,
}

impl FixedEffects {
    fn levels(&self) -> Vec<usize> {
        self.wsum.iter().map(Vec::len).collect()
    }

    /// Weighted alternating projections until every group mean of every
    /// dimension is below [`DEMEAN_TOL`].
    fn demean(&self, x: &mut [f64], w: &[f64]) -> Result<()> {
        if self.ids.is_empty() {
            return Ok(());
        }
        let mut means: Vec<Vec<f64>> = self.wsum.iter().map(|g| vec![0.0; g.len()]).collect();
        for _ in 0..DEMEAN_MAX_ITER {
            let mut worst = 0.0f64;
            for (d, ids) in self.ids.iter().enumerate() {
                let m = &mut means[d];
                m.iter_mut().for_each(|v| *v = 0.0);
                for ((xi, wi), g) in x.iter().zip(w).zip(ids) {
                    m[*g] += wi * xi;
                }
                for (mg, ws) in m.iter_mut().zip(&self.wsum[d]) {
                    *mg /= ws;
                    worst = worst.max(mg.abs());
                }
                for (xi, g) in x.iter_mut().zip(ids) {
                    *xi -= m[*g];
                }
            }
            if worst < DEMEAN_TOL || self.ids.len() == 1 {
                return Ok(());
            }
        }
        Err(EconError::NonConvergence(DEMEAN_MAX_ITER))
    }
}

fn group_ids(labels: impl Iterator<Item = String>) -> (Vec<usize>, usize) {
    let mut map: HashMap<String, usize> = HashMap::new();
    let ids = labels
        .map(|l| {
            let next = map.len();
            *map.entry(l).or_insert(next)
        })
        .collect();
    (ids, map.len())
}

fn connected_components(a: &[usize], b: &[usize], la: usize, lb: usize) -> usize {
    let mut parent: Vec<usize> = (0..la + lb).collect();
    fn find(p: &mut [usize], mut i: usize) -> usize {
        while p[i] != i {
            p[i] = p[p[i]];
            i = p[i];
        }
        i
    }
    for (x, y) in a.iter().zip(b) {
        let (rx, ry) = (find(&mut parent, *x), find(&mut parent, la + y));
        if rx != ry {
            parent[rx] = ry;
        }
    }
    (0..la + lb).filter(|&i| find(&mut parent, i) == i).count()
}

/// Degrees of freedom used by the absorbed effects: `L` for one dimension,
/// `L1 + L2 - components` for two, and `sum L - (D - 1)` beyond.
fn fe_df(fe: &FixedEffects) -> usize {
    let levels = fe.levels();
    match levels.len() {
        0 => 0,
        1 => levels[0],
        2 => levels[0] + levels[1] - connected_components(&fe.ids[0], &fe.ids[1], levels[0], levels[1]),
        d => levels.iter().sum::<usize>() - (d - 1),
    }
}

/// Incremental Cholesky of `a` (row-major, p x p) that skips or rejects
/// columns whose pivot vanishes relative to their own diagonal.
fn cholesky_active(a: &[f64], p: usize, scale: &[f64]) -> (Vec<usize>, Vec<usize>, Vec<f64>) {
    let mut active: Vec<usize> = Vec::new();
    let mut rejected = Vec::new();
    let mut l: Vec<f64> = Vec::new(); // packed rows of the factor over active columns
    for j in 0..p {
        let m = active.len();
        let mut row = vec![0.0; m + 1];
        for (r, &i) in active.iter().enumerate() {
            let mut s = a[j * p + i];
            for c in 0..r {
                s -= row[c] * l[r * (r + 1) / 2 + c];
            }
            row[r] = s / l[r * (r + 1) / 2 + r];
        }
        let d = a[j * p + j] - row[..m].iter().map(|v| v * v).sum::<f64>();
        let diag = a[j * p + j];
        if diag <= PIVOT_TOL * scale[j] || d <= PIVOT_TOL * diag {
            rejected.push(j);
            continue;
        }
        row[m] = d.sqrt();
        l.extend(row);
        active.push(j);
    }
    (active, rejected, l)
}

/// Inverse of `L L'` for a packed lower-triangular `L` of size m.
fn chol_inverse(l: &[f64], m: usize) -> Vec<f64> {
    let at = |r: usize, c: usize| l[r * (r + 1) / 2 + c];
    let mut inv = vec![0.0; m * m];
    for col in 0..m {
        // Solve L z = e_col then L' x = z.
        let mut z = vec![0.0; m];
        for r in 0..m {
            let mut s = if r == col { 1.0 } else { 0.0 };
            for c in 0..r {
                s -= at(r, c) * z[c];
            }
            z[r] = s / at(r, r);
        }
        for r in (0..m).rev() {
            let mut s = z[r];
            for c in r + 1..m {
                s -= at(c, r) * inv[c * m + col];
            }
            inv[r * m + col] = s / at(r, r);
        }
    }
    inv
}

/// Fit `spec` on `data`.
pub fn ols_fit(data: &DataTable, spec: &RegressionSpec) -> Result<RegressionResult> {
    if spec.regressors.contains(&spec.outcome) {
        return Err(EconError::Spec(format!("outcome `{}` is also a regressor", spec.outcome)));
    }
    if spec.se_kind == SeKind::Cr1 && spec.cluster.is_none() {
        return Err(EconError::Spec("clustered errors need a cluster column".into()));
    }
    let mut seen = std::collections::HashSet::new();
    if let Some(dup) = spec.regressors.iter().find(|r| !seen.insert(r.as_str())) {
        return Err(EconError::Collinear(dup.clone()));
    }
    for name in spec.referenced() {
        data.col(name)?;
    }
    let y_all = data.numeric(&spec.outcome)?;
    let w_all = spec.weights.as_deref().map(|c| data.numeric(c)).transpose()?;

    // Listwise deletion.
    let cols: Vec<&Column> = spec.referenced().iter().map(|n| data.col(n)).collect::<Result<_>>()?;
    let mut rows: Vec<usize> = (0..data.nrows())
        .filter(|&i| cols.iter().all(|c| c.present(i)))
        .filter(|&i| w_all.is_none_or(|w| w[i].is_some_and(|v| v > 0.0)))
        .collect();
    if rows.is_empty() {
        return Err(EconError::NoData("every row has a missing value".into()));
    }

    // Drop singleton groups until none remain.
    let fe_labels: Vec<Vec<String>> = spec
        .fixed_effects
        .iter()
        .map(|dim| {
            let cs: Vec<&Column> = dim.iter().map(|n| data.col(n)).collect::<Result<_>>()?;
            Ok((0..data.nrows())
                .map(|i| cs.iter().map(|c| c.label(i)).collect::<Vec<_>>().join("\u{1f}"))
                .collect())
        })
        .collect::<Result<_>>()?;
    let n_before = rows.len();
    loop {
        let mut keep = vec![true; rows.len()];
        for labels in &fe_labels {
            let mut counts: HashMap<&str, usize> = HashMap::new();
            for &i in &rows {
                *counts.entry(labels[i].as_str()).or_default() += 1;
            }
            for (k, &i) in rows.iter().enumerate() {
                if counts[labels[i].as_str()] == 1 {
                    keep[k] = false;
                }
            }
        }
        if keep.iter().all(|k| *k) {
            break;
        }
        rows = rows.into_iter().zip(keep).filter_map(|(i, k)| k.then_some(i)).collect();
        if rows.is_empty() {
            return Err(EconError::Saturated { n: 0, k: 0 });
        }
    }
    let n_singletons = n_before - rows.len();
    if n_singletons > 0 {
        log::info!("dropped {n_singletons} singleton fixed-effect observations");
    }
    let n = rows.len();

    let w: Vec<f64> = match w_all {
        Some(wc) => rows.iter().map(|&i| wc[i].expect("filtered")).collect(),
        None => vec![1.0; n],
    };
    let fe = {
        let mut ids = Vec::new();
        let mut wsum = Vec::new();
        for labels in &fe_labels {
            let (g, count) = group_ids(rows.iter().map(|&i| labels[i].clone()));
            let mut s = vec![0.0; count];
            for (gi, wi) in g.iter().zip(&w) {
                s[*gi] += wi;
            }
            ids.push(g);
            wsum.push(s);
        }
        FixedEffects { ids, wsum }
    };

    // Design columns.
    let mut names: Vec<String> = Vec::new();
    let mut xs: Vec<Vec<f64>> = Vec::new();
    let mut absent = Vec::new();
    if fe.ids.is_empty() {
        names.push("const".into());
        xs.push(vec![1.0; n]);
    }
    for r in &spec.regressors {
        match data.col(r)? {
            Column::Numeric(v) => {
                names.push(r.clone());
                xs.push(rows.iter().map(|&i| v[i].expect("filtered")).collect());
            }
            Column::Categorical(v) => {
                let mut levels: Vec<&str> = rows.iter().map(|&i| v[i].as_deref().expect("filtered")).collect();
                levels.sort_unstable();
                levels.dedup();
                if levels.len() < 2 {
                    absent.push(r.clone());
                    continue;
                }
                for lv in &levels[1..] {
                    names.push(format!("{r}={lv}"));
                    xs.push(rows.iter().map(|&i| f64::from(v[i].as_deref() == Some(*lv))).collect());
                }
            }
        }
    }
    let fe_k = fe_df(&fe);
    if n <= names.len() + fe_k {
        return Err(EconError::Saturated { n, k: names.len() + fe_k });
    }

    let y_raw: Vec<f64> = rows.iter().map(|&i| y_all[i].expect("filtered")).collect();
    let wsum: f64 = w.iter().sum();
    let scale: Vec<f64> = xs.iter().map(|x| x.iter().zip(&w).map(|(v, wi)| wi * v * v).sum::<f64>()).collect();
    let mut y = y_raw.clone();
    fe.demean(&mut y, &w)?;
    xs.par_iter_mut().try_for_each(|x| fe.demean(x, &w))?;

    let p = xs.len();
    let mut xtx = vec![0.0; p * p];
    let mut xty = vec![0.0; p];
    for a in 0..p {
        for b in 0..=a {
            let s: f64 = xs[a].iter().zip(&xs[b]).zip(&w).map(|((u, v), wi)| wi * u * v).sum();
            xtx[a * p + b] = s;
            xtx[b * p + a] = s;
        }
        xty[a] = xs[a].iter().zip(&y).zip(&w).map(|((u, v), wi)| wi * u * v).sum();
    }
    let (active, rejected, l) = cholesky_active(&xtx, p, &scale);
    let mut dropped = Vec::new();
    if let Some(&j) = rejected.first() {
        match spec.on_collinear {
            OnCollinear::Error => return Err(EconError::Collinear(names[j].clone())),
            OnCollinear::Drop => {
                dropped = rejected.iter().map(|&j| names[j].clone()).collect();
                log::warn!("dropping collinear columns: {}", dropped.join(", "));
            }
        }
    }
    let m = active.len();
    let bread = chol_inverse(&l, m);
    let xty_a: Vec<f64> = active.iter().map(|&j| xty[j]).collect();
    let beta: Vec<f64> = (0..m).map(|r| (0..m).map(|c| bread[r * m + c] * xty_a[c]).sum()).collect();
    let resid: Vec<f64> = (0..n)
        .map(|i| y[i] - active.iter().zip(&beta).map(|(&j, b)| xs[j][i] * b).sum::<f64>())
        .collect();

    let k = m + fe_k;
    // Row scores w_i e_i x_i, summed within clusters for CR1.
    let score = |i: usize| -> Vec<f64> { active.iter().map(|&j| w[i] * resid[i] * xs[j][i]).collect() };
    let mut meat = vec![0.0; m * m];
    let add = |meat: &mut [f64], s: &[f64]| {
        for a in 0..m {
            for b in 0..m {
                meat[a * m + b] += s[a] * s[b];
            }
        }
    };
    let (factor, n_clusters, df_t) = match spec.se_kind {
        SeKind::Hc1 => {
            for i in 0..n {
                add(&mut meat, &score(i));
            }
            (n as f64 / (n - k) as f64, None, (n - k) as f64)
        }
        SeKind::Cr1 => {
            let cc = data.col(spec.cluster.as_deref().expect("checked"))?;
            let (cid, g) = group_ids(rows.iter().map(|&i| cc.label(i)));
            if g < 2 {
                return Err(EconError::TooFewClusters(g));
            }
            let mut sums = vec![vec![0.0; m]; g];
            for i in 0..n {
                for (acc, s) in sums[cid[i]].iter_mut().zip(score(i)) {
                    *acc += s;
                }
            }
            for s in &sums {
                add(&mut meat, s);
            }
            let gf = g as f64;
            (gf / (gf - 1.0) * (n as f64 - 1.0) / (n - k) as f64, Some(g), gf - 1.0)
        }
    };
    let mul = |a: &[f64], b: &[f64]| -> Vec<f64> {
        let mut out = vec![0.0; m * m];
        for r in 0..m {
            for c in 0..m {
                out[r * m + c] = (0..m).map(|t| a[r * m + t] * b[t * m + c]).sum();
            }
        }
        out
    };
    let vcov = mul(&mul(&bread, &meat), &bread);
    let tdist = StudentsT::new(0.0, 1.0, df_t.max(1.0)).expect("valid t distribution");
    let terms = active
        .iter()
        .enumerate()
        .map(|(r, &j)| {
            let se = (vcov[r * m + r] * factor).max(0.0).sqrt();
            let t = beta[r] / se;
            let p = if t.is_finite() { 2.0 * (1.0 - tdist.cdf(t.abs())) } else if beta[r] == 0.0 { 1.0 } else { 0.0 };
            Term { name: names[j].clone(), coef: beta[r], se, t, p }
        })
        .collect();

    let ybar = y_raw.iter().zip(&w).map(|(v, wi)| v * wi).sum::<f64>() / wsum;
    let tss: f64 = y_raw.iter().zip(&w).map(|(v, wi)| wi * (v - ybar).powi(2)).sum();
    let ssr: f64 = resid.iter().zip(&w).map(|(e, wi)| wi * e * e).sum();
    let r_squared = if tss > 0.0 { (1.0 - ssr / tss).clamp(0.0, 1.0) } else { 0.0 };

    Ok(RegressionResult {
        spec: spec.clone(),
        terms,
        n_effective: n,
        n_singletons_dropped: n_singletons,
        r_squared,
        outcome_mean: ybar,
        k,
        fe_levels: fe.levels(),
        n_clusters,
        dropped_columns: dropped,
        absent_terms: absent,
        notes: Vec::new(),
    })
}
