use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{CscMatrix, CsrMatrix, LexiconError, Vocabulary};
use crate::econometrics::{ols_fit, DataTable, OnCollinear, RegressionResult, RegressionSpec};
use crate::keyed_rng;

/// Prefix for term columns in the post-Lasso regression, so a vocabulary
/// word can never collide with the intercept name.
pub const TERM_PREFIX: &str = "w:";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LassoOptions {
    pub folds: usize,
    pub n_lambdas: usize,
    pub test_fraction: f64,
    pub lambda_min_ratio: f64,
    /// Convergence when the largest coefficient change in a sweep is below this.
    pub tol: f64,
    pub max_sweeps: usize,
    pub seed: u64,
}

impl Default for LassoOptions {
    fn default() -> Self {
        LassoOptions {
            folds: 10,
            n_lambdas: 20,
            test_fraction: 0.10,
            lambda_min_ratio: 1e-3,
            tol: 1e-7,
            max_sweeps: 100_000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LassoFit {
    /// Descending.
    pub lambda_grid: Vec<f64>,
    pub chosen_index: usize,
    pub chosen_lambda: f64,
    /// Mean out-of-fold R² per grid point.
    pub cv_r2: Vec<f64>,
    pub intercept: f64,
    /// Nonzero coefficients as `(column, value)`, ascending by column.
    pub coefficients: Vec<(usize, f64)>,
    pub test_r2: Option<f64>,
    pub intercept_only: bool,
    pub train_rows: Vec<usize>,
    pub test_rows: Vec<usize>,
    /// Columns without variation on the training rows.
    pub dropped_columns: Vec<usize>,
    pub warnings: Vec<String>,
}

impl LassoFit {
    pub fn selected(&self) -> Vec<usize> {
        self.coefficients.iter().map(|c| c.0).collect()
    }

    pub fn predict(&self, row: &[(usize, f64)]) -> f64 {
        let mut k = 0;
        let mut s = self.intercept;
        for &(j, v) in row {
            while k < self.coefficients.len() && self.coefficients[k].0 < j {
                k += 1;
            }
            if k < self.coefficients.len() && self.coefficients[k].0 == j {
                s += self.coefficients[k].1 * v;
            }
        }
        s
    }
}

/// Column statistics over the rows of one design.
struct Design<'a> {
    x: &'a CscMatrix,
    mean: Vec<f64>,
    sum: Vec<f64>,
    /// Centered sum of squares divided by n; zero marks a dead column.
    scale: Vec<f64>,
}

impl<'a> Design<'a> {
    fn new(x: &'a CscMatrix) -> Self {
        let n = x.n_rows as f64;
        let mut mean = vec![0.0; x.n_cols];
        let mut sum = vec![0.0; x.n_cols];
        let mut scale = vec![0.0; x.n_cols];
        for j in 0..x.n_cols {
            let (_, v) = x.column(j);
            let s: f64 = v.iter().sum();
            let ss: f64 = v.iter().map(|a| a * a).sum();
            sum[j] = s;
            mean[j] = s / n;
            let c = (ss - s * s / n) / n;
            scale[j] = if c > 1e-14 * (ss / n).max(f64::MIN_POSITIVE) { c } else { 0.0 };
        }
        Design { x, mean, sum, scale }
    }

    fn live(&self) -> Vec<usize> {
        (0..self.x.n_cols).filter(|&j| self.scale[j] > 0.0).collect()
    }
}

/// Residual `y_c - X_c beta` kept as a sparse-updatable vector plus a
/// constant offset.
struct Residual {
    stored: Vec<f64>,
    offset: f64,
    stored_sum: f64,
}

impl Residual {
    fn new(d: &Design, yc: &[f64], beta: &[f64]) -> Self {
        let mut stored = yc.to_vec();
        let mut offset = 0.0;
        for (j, &b) in beta.iter().enumerate() {
            if b != 0.0 {
                let (rows, vals) = d.x.column(j);
                for (&i, &v) in rows.iter().zip(vals) {
                    stored[i] -= b * v;
                }
                offset += b * d.mean[j];
            }
        }
        let stored_sum = stored.iter().sum();
        Residual { stored, offset, stored_sum }
    }

    fn sum_sq(&self) -> f64 {
        self.stored.iter().map(|r| (r + self.offset).powi(2)).sum()
    }
}

fn soft(z: f64, t: f64) -> f64 {
    if z > t {
        z - t
    } else if z < -t {
        z + t
    } else {
        0.0
    }
}

fn sweep(d: &Design, cols: &[usize], lambda: f64, beta: &mut [f64], r: &mut Residual) -> f64 {
    let n = d.x.n_rows as f64;
    let mut max_delta: f64 = 0.0;
    for &j in cols {
        let a = d.scale[j];
        if a == 0.0 {
            continue;
        }
        let (rows, vals) = d.x.column(j);
        let mut dot = 0.0;
        for (&i, &v) in rows.iter().zip(vals) {
            dot += v * r.stored[i];
        }
        let xr = dot + r.offset * d.sum[j] - d.mean[j] * (r.stored_sum + n * r.offset);
        let z = xr / n + beta[j] * a;
        let new = soft(z, lambda) / a;
        let delta = new - beta[j];
        if delta != 0.0 {
            for (&i, &v) in rows.iter().zip(vals) {
                r.stored[i] -= delta * v;
            }
            r.offset += delta * d.mean[j];
            r.stored_sum -= delta * d.sum[j];
            beta[j] = new;
            max_delta = max_delta.max(delta.abs());
        }
    }
    max_delta
}

fn penalty(beta: &[f64]) -> f64 {
    beta.iter().map(|b| b.abs()).sum()
}

/// Coordinate descent at one lambda, warm-started from `beta`. Returns the
/// number of sweeps; `trace` receives the objective after each sweep.
fn solve(
    d: &Design,
    yc: &[f64],
    lambda: f64,
    beta: &mut [f64],
    tol: f64,
    max_sweeps: usize,
    mut trace: Option<&mut Vec<f64>>,
) -> (usize, bool) {
    let n = d.x.n_rows as f64;
    let all = d.live();
    let mut r = Residual::new(d, yc, beta);
    let mut sweeps = 0;
    let mut record = |r: &Residual, beta: &[f64]| {
        if let Some(t) = trace.as_deref_mut() {
            t.push(r.sum_sq() / (2.0 * n) + lambda * penalty(beta));
        }
    };
    loop {
        let delta = sweep(d, &all, lambda, beta, &mut r);
        sweeps += 1;
        record(&r, beta);
        if delta < tol {
            return (sweeps, true);
        }
        loop {
            if sweeps >= max_sweeps {
                return (sweeps, false);
            }
            let active: Vec<usize> = all.iter().copied().filter(|&j| beta[j] != 0.0).collect();
            let delta = sweep(d, &active, lambda, beta, &mut r);
            sweeps += 1;
            record(&r, beta);
            if delta < tol {
                break;
            }
        }
    }
}

/// `(1/2n) ||y - b0 - X beta||² + lambda ||beta||₁`.
pub fn lasso_objective(x: &CscMatrix, y: &[f64], intercept: f64, beta: &[f64], lambda: f64) -> f64 {
    let mut r: Vec<f64> = y.iter().map(|v| v - intercept).collect();
    for (j, &b) in beta.iter().enumerate() {
        let (rows, vals) = x.column(j);
        for (&i, &v) in rows.iter().zip(vals) {
            r[i] -= b * v;
        }
    }
    r.iter().map(|v| v * v).sum::<f64>() / (2.0 * y.len() as f64) + lambda * penalty(beta)
}

/// Single-lambda fit with an unpenalized intercept. Returns
/// `(intercept, beta, objective after each sweep)`.
pub fn lasso_path_at(x: &CscMatrix, y: &[f64], lambda: f64, tol: f64) -> (f64, Vec<f64>, Vec<f64>) {
    let d = Design::new(x);
    let ybar = y.iter().sum::<f64>() / y.len() as f64;
    let yc: Vec<f64> = y.iter().map(|v| v - ybar).collect();
    let mut beta = vec![0.0; x.n_cols];
    let mut trace = Vec::new();
    solve(&d, &yc, lambda, &mut beta, tol, usize::MAX, Some(&mut trace));
    let intercept = ybar - beta.iter().zip(&d.mean).map(|(b, m)| b * m).sum::<f64>();
    (intercept, beta, trace)
}

fn lambda_max(d: &Design, yc: &[f64]) -> f64 {
    let n = d.x.n_rows as f64;
    d.live()
        .into_iter()
        .map(|j| {
            // yc sums to zero, so the centering term drops out.
            let (rows, vals) = d.x.column(j);
            let dot: f64 = rows.iter().zip(vals).map(|(&i, &v)| v * yc[i]).sum();
            (dot / n).abs()
        })
        .fold(0.0, f64::max)
}

fn r_squared(y: &[f64], pred: &[f64]) -> f64 {
    let m = y.iter().sum::<f64>() / y.len() as f64;
    let sst: f64 = y.iter().map(|v| (v - m).powi(2)).sum();
    let sse: f64 = y.iter().zip(pred).map(|(a, b)| (a - b).powi(2)).sum();
    if sst > 0.0 {
        1.0 - sse / sst
    } else {
        0.0
    }
}

struct PathFit {
    intercepts: Vec<f64>,
    betas: Vec<Vec<f64>>,
}

fn fit_path(x: &CscMatrix, y: &[f64], grid: &[f64], opts: &LassoOptions, warnings: &mut Vec<String>) -> PathFit {
    let d = Design::new(x);
    let ybar = y.iter().sum::<f64>() / y.len() as f64;
    let yc: Vec<f64> = y.iter().map(|v| v - ybar).collect();
    let mut beta = vec![0.0; x.n_cols];
    let mut out = PathFit { intercepts: Vec::new(), betas: Vec::new() };
    for &lambda in grid {
        let (_, converged) = solve(&d, &yc, lambda, &mut beta, opts.tol, opts.max_sweeps, None);
        if !converged {
            warnings.push(format!("coordinate descent hit {} sweeps at lambda {lambda:.3e}", opts.max_sweeps));
        }
        out.intercepts.push(ybar - beta.iter().zip(&d.mean).map(|(b, m)| b * m).sum::<f64>());
        out.betas.push(beta.clone());
    }
    out
}

fn predict_rows(x: &CsrMatrix, rows: &[usize], intercept: f64, beta: &[f64]) -> Vec<f64> {
    rows.iter()
        .map(|&i| {
            let (a, b) = (x.indptr[i], x.indptr[i + 1]);
            intercept + x.indices[a..b].iter().zip(&x.data[a..b]).map(|(&j, &v)| beta[j] * v).sum::<f64>()
        })
        .collect()
}

/// Hold out a seeded test share, choose lambda by K-fold cross-validated R²
/// on the rest, and refit there at the chosen lambda.
pub fn lasso_cv_fit(x: &CsrMatrix, y: &[f64], opts: &LassoOptions) -> Result<LassoFit, LexiconError> {
    if x.n_rows != y.len() {
        return Err(LexiconError::Shape { rows: x.n_rows, targets: y.len() });
    }
    if let Some(&bad) = y.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(LexiconError::TargetRange(bad));
    }
    if opts.folds < 2 || opts.n_lambdas < 1 || !(0.0..1.0).contains(&opts.test_fraction) {
        return Err(LexiconError::Options(format!(
            "folds {} lambdas {} test fraction {}",
            opts.folds, opts.n_lambdas, opts.test_fraction
        )));
    }
    if !(opts.lambda_min_ratio > 0.0 && opts.lambda_min_ratio < 1.0) {
        return Err(LexiconError::Options(format!("lambda floor ratio {}", opts.lambda_min_ratio)));
    }
    let n = y.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut keyed_rng(opts.seed, &["lasso", "split"]));
    let n_test = (opts.test_fraction * n as f64).round() as usize;
    let (test_rows, train_rows) = order.split_at(n_test);
    if train_rows.len() < 2 * opts.folds {
        return Err(LexiconError::TooFewRows(n));
    }
    let mut test_rows = test_rows.to_vec();
    test_rows.sort_unstable();
    // Train order stays shuffled so folds are position mod K.
    let train_rows = train_rows.to_vec();
    let mut warnings = Vec::new();

    let x_train = x.to_csc_rows(&train_rows);
    let y_train: Vec<f64> = train_rows.iter().map(|&i| y[i]).collect();
    let d = Design::new(&x_train);
    let dropped_columns: Vec<usize> = (0..x.n_cols).filter(|&j| d.scale[j] == 0.0).collect();
    if !dropped_columns.is_empty() {
        let msg = format!("{} columns without variation on the training rows were dropped", dropped_columns.len());
        log::warn!("{msg}");
        warnings.push(msg);
    }
    let ybar = y_train.iter().sum::<f64>() / y_train.len() as f64;
    let yc: Vec<f64> = y_train.iter().map(|v| v - ybar).collect();
    let mut lmax = lambda_max(&d, &yc);
    if lmax <= 0.0 {
        lmax = 1.0;
    }
    let k = opts.n_lambdas;
    let lambda_grid: Vec<f64> = (0..k)
        .map(|i| {
            let f = if k == 1 { 0.0 } else { i as f64 / (k - 1) as f64 };
            lmax * opts.lambda_min_ratio.powf(f)
        })
        .collect();

    let fold_results: Vec<(Vec<f64>, Vec<String>)> = (0..opts.folds)
        .into_par_iter()
        .map(|f| {
            let (fit_rows, held): (Vec<usize>, Vec<usize>) = {
                let mut a = Vec::new();
                let mut b = Vec::new();
                for (pos, &i) in train_rows.iter().enumerate() {
                    if pos % opts.folds == f {
                        b.push(i);
                    } else {
                        a.push(i);
                    }
                }
                (a, b)
            };
            let xf = x.to_csc_rows(&fit_rows);
            let yf: Vec<f64> = fit_rows.iter().map(|&i| y[i]).collect();
            let yh: Vec<f64> = held.iter().map(|&i| y[i]).collect();
            let mut w = Vec::new();
            let path = fit_path(&xf, &yf, &lambda_grid, opts, &mut w);
            let r2 = (0..k)
                .map(|l| r_squared(&yh, &predict_rows(x, &held, path.intercepts[l], &path.betas[l])))
                .collect();
            (r2, w)
        })
        .collect();
    let mut cv_r2 = vec![0.0; k];
    for (r2, w) in &fold_results {
        for l in 0..k {
            cv_r2[l] += r2[l] / opts.folds as f64;
        }
        warnings.extend(w.iter().cloned());
    }

    let mut chosen_index = 0;
    for l in 1..k {
        if cv_r2[l] > cv_r2[chosen_index] {
            chosen_index = l;
        }
    }
    let intercept_only = cv_r2[chosen_index] <= 0.0;
    let (intercept, coefficients) = if intercept_only {
        let msg = "no lambda improves on the intercept-only model in cross-validation".to_string();
        log::warn!("{msg}");
        warnings.push(msg);
        chosen_index = 0;
        (ybar, Vec::new())
    } else {
        let path = fit_path(&x_train, &y_train, &lambda_grid[..=chosen_index], opts, &mut warnings);
        let beta = &path.betas[chosen_index];
        let coefs: Vec<(usize, f64)> =
            beta.iter().enumerate().filter(|(_, b)| **b != 0.0).map(|(j, b)| (j, *b)).collect();
        (path.intercepts[chosen_index], coefs)
    };
    let test_r2 = if test_rows.is_empty() {
        None
    } else {
        let mut beta = vec![0.0; x.n_cols];
        for &(j, b) in &coefficients {
            beta[j] = b;
        }
        let yt: Vec<f64> = test_rows.iter().map(|&i| y[i]).collect();
        Some(r_squared(&yt, &predict_rows(x, &test_rows, intercept, &beta)))
    };
    Ok(LassoFit {
        chosen_lambda: lambda_grid[chosen_index],
        lambda_grid,
        chosen_index,
        cv_r2,
        intercept,
        coefficients,
        test_r2,
        intercept_only,
        train_rows,
        test_rows,
        dropped_columns,
        warnings,
    })
}

/// Unpenalized OLS (with intercept, HC1 errors) of `y` on the `selected`
/// columns over `rows`. Collinear columns are dropped, later ones first.
pub fn post_lasso_ols(
    x: &CsrMatrix,
    y: &[f64],
    rows: &[usize],
    selected: &[usize],
    vocab: &Vocabulary,
) -> Result<RegressionResult, LexiconError> {
    if selected.is_empty() {
        return Err(LexiconError::EmptySelection);
    }
    if x.n_rows != y.len() {
        return Err(LexiconError::Shape { rows: x.n_rows, targets: y.len() });
    }
    if rows.len() <= selected.len() + 1 {
        return Err(LexiconError::TooFewRows(rows.len()));
    }
    let mut table = DataTable::new(rows.len());
    table.push_numeric("y", rows.iter().map(|&i| y[i]).collect())?;
    let mut names = Vec::with_capacity(selected.len());
    for &j in selected {
        let name = format!("{TERM_PREFIX}{}", vocab.terms[j]);
        table.push_numeric(name.clone(), x.dense_column(j, rows))?;
        names.push(name);
    }
    let refs: Vec<&str> = names.iter().map(String::as_str).collect();
    let mut spec = RegressionSpec::new("y", &refs);
    spec.on_collinear = OnCollinear::Drop;
    let res = ols_fit(&table, &spec)?;
    if !res.dropped_columns.is_empty() {
        log::warn!("post-Lasso OLS dropped collinear columns: {}", res.dropped_columns.join(", "));
    }
    Ok(res)
}

/// Out-of-sample R² of a post-Lasso regression on `rows`.
pub fn post_lasso_r2(post: &RegressionResult, x: &CsrMatrix, y: &[f64], rows: &[usize], vocab: &Vocabulary) -> f64 {
    let mut beta = vec![0.0; x.n_cols];
    for t in &post.terms {
        if let Some(j) = t.name.strip_prefix(TERM_PREFIX).and_then(|w| vocab.index_of(w)) {
            beta[j] = t.coef;
        }
    }
    let intercept = post.coef("const").unwrap_or(0.0);
    let yt: Vec<f64> = rows.iter().map(|&i| y[i]).collect();
    r_squared(&yt, &predict_rows(x, rows, intercept, &beta))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributionScore {
    pub term: String,
    pub coefficient: f64,
    pub idf: f64,
    pub score: f64,
    pub category: Option<String>,
}

/// IDF times post-Lasso coefficient for every nonzero term, highest score
/// first.
pub fn attribution_scores(post: &RegressionResult, vocab: &Vocabulary) -> Vec<AttributionScore> {
    let mut out: Vec<AttributionScore> = post
        .terms
        .iter()
        .filter(|t| t.coef != 0.0)
        .filter_map(|t| {
            let w = t.name.strip_prefix(TERM_PREFIX)?;
            let j = vocab.index_of(w)?;
            let idf = vocab.idf(j);
            Some(AttributionScore { term: w.to_string(), coefficient: t.coef, idf, score: idf * t.coef, category: None })
        })
        .collect();
    out.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.term.cmp(&b.term)));
    out
}
