//! Correlation, Bonferroni correction and PCA over score matrices.

use std::io::Write;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::Serialize;
use statrs::distribution::{ContinuousCDF, StudentsT};
use thiserror::Error;

use crate::scoring::{NumberSplit, ScoreMatrix};

pub const DEFAULT_ALPHA: f64 = 0.05;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum AnalysisError {
    #[error("series lengths differ ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("need at least {needed} points, have {have}")]
    TooFewPoints { needed: usize, have: usize },
    #[error("series `{0}` has zero variance")]
    ZeroVariance(String),
    #[error("need at least 2 complete rows, have {0}")]
    InsufficientRows(usize),
    #[error("no results to correct")]
    NoResults,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorrelationResult {
    pub series_a: String,
    pub series_b: String,
    pub r: f64,
    pub n: usize,
    pub p: f64,
    pub significant_raw: bool,
    pub significant_bonferroni: bool,
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Pearson r of two series with a two-sided p-value from t(n - 2).
/// Significance flags are set at [`DEFAULT_ALPHA`] without correction.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<CorrelationResult, AnalysisError> {
    pearson_named("x", "y", x, y)
}

pub fn pearson_named(
    a: &str,
    b: &str,
    x: &[f64],
    y: &[f64],
) -> Result<CorrelationResult, AnalysisError> {
    if x.len() != y.len() {
        return Err(AnalysisError::LengthMismatch(x.len(), y.len()));
    }
    let n = x.len();
    if n < 3 {
        return Err(AnalysisError::TooFewPoints { needed: 3, have: n });
    }
    let (mx, my) = (mean(x), mean(y));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (xi, yi) in x.iter().zip(y) {
        let (dx, dy) = (xi - mx, yi - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 {
        return Err(AnalysisError::ZeroVariance(a.to_string()));
    }
    if syy == 0.0 {
        return Err(AnalysisError::ZeroVariance(b.to_string()));
    }
    let r = (sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0);
    let p = p_value(r, n);
    Ok(CorrelationResult {
        series_a: a.to_string(),
        series_b: b.to_string(),
        r,
        n,
        p,
        significant_raw: p < DEFAULT_ALPHA,
        significant_bonferroni: p < DEFAULT_ALPHA,
    })
}

fn p_value(r: f64, n: usize) -> f64 {
    let df = (n - 2) as f64;
    let denom = 1.0 - r * r;
    if denom <= 0.0 {
        return 0.0;
    }
    let t = r.abs() * (df / denom).sqrt();
    let dist = StudentsT::new(0.0, 1.0, df).expect("positive degrees of freedom");
    (2.0 * (1.0 - dist.cdf(t))).clamp(0.0, 1.0)
}

/// Sets raw flags at `alpha` and Bonferroni flags at `alpha / m`.
pub fn bonferroni(
    results: &[CorrelationResult],
    alpha: f64,
) -> Result<Vec<CorrelationResult>, AnalysisError> {
    if results.is_empty() {
        return Err(AnalysisError::NoResults);
    }
    let threshold = alpha / results.len() as f64;
    Ok(results
        .iter()
        .map(|r| CorrelationResult {
            significant_raw: r.p < alpha,
            significant_bonferroni: r.p < threshold,
            ..r.clone()
        })
        .collect())
}

/// A family of correlations corrected together.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CorrelationSuite {
    pub results: Vec<CorrelationResult>,
    /// Pairs whose correlation is undefined, with the reason. They are not
    /// counted in the correction.
    pub undefined: Vec<(String, String, AnalysisError)>,
}

impl CorrelationSuite {
    fn collect(pairs: Vec<(String, String, Vec<f64>, Vec<f64>)>, alpha: f64) -> Self {
        let mut suite = CorrelationSuite::default();
        for (a, b, x, y) in pairs {
            match pearson_named(&a, &b, &x, &y) {
                Ok(r) => suite.results.push(r),
                Err(e) => {
                    log::warn!("correlation {a} ~ {b} undefined: {e}");
                    suite.undefined.push((a, b, e));
                }
            }
        }
        if !suite.results.is_empty() {
            suite.results = bonferroni(&suite.results, alpha).expect("non-empty");
        }
        suite
    }

    pub fn significant_counts(&self) -> (usize, usize) {
        let raw = self.results.iter().filter(|r| r.significant_raw && r.r > 0.0).count();
        let bonf = self
            .results
            .iter()
            .filter(|r| r.significant_bonferroni && r.r > 0.0)
            .count();
        (raw, bonf)
    }

    /// Writes `series_a,series_b,r,n,p,sig_raw,sig_bonf`; undefined pairs
    /// have `NA` statistics.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["series_a", "series_b", "r", "n", "p", "sig_raw", "sig_bonf"])?;
        for r in &self.results {
            w.write_record([
                r.series_a.clone(),
                r.series_b.clone(),
                r.r.to_string(),
                r.n.to_string(),
                r.p.to_string(),
                r.significant_raw.to_string(),
                r.significant_bonferroni.to_string(),
            ])?;
        }
        for (a, b, _) in &self.undefined {
            w.write_record([a.as_str(), b, "NA", "NA", "NA", "false", "false"])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Paired values of two series over the keys present in both.
fn paired<'a>(
    keys: &'a [String],
    a: impl Fn(&str) -> Option<f64> + 'a,
    b: impl Fn(&str) -> Option<f64> + 'a,
) -> (Vec<f64>, Vec<f64>) {
    keys.iter().filter_map(|k| Some((a(k)?, b(k)?))).unzip()
}

/// Correlations between every pair of tasks within one backend, over the
/// nouns with both tasks present.
pub fn task_correlations(matrix: &ScoreMatrix, split: NumberSplit, alpha: f64) -> CorrelationSuite {
    let mut pairs = Vec::new();
    for (i, a) in matrix.tasks.iter().enumerate() {
        for b in &matrix.tasks[i + 1..] {
            let (x, y) = paired(
                &matrix.nouns,
                |n| matrix.value(n, a, split),
                |n| matrix.value(n, b, split),
            );
            pairs.push((a.clone(), b.clone(), x, y));
        }
    }
    CorrelationSuite::collect(pairs, alpha)
}

/// Per-task correlations between every pair of backends, over the nouns
/// scored by both. The correction counts all pairs × tasks together.
pub fn cross_model_correlations(matrices: &[ScoreMatrix], alpha: f64) -> CorrelationSuite {
    let mut pairs = Vec::new();
    for (i, ma) in matrices.iter().enumerate() {
        for mb in &matrices[i + 1..] {
            for task in ma.tasks.iter().filter(|t| mb.tasks.contains(t)) {
                let (x, y) = paired(
                    &ma.nouns,
                    |n| ma.value(n, task, NumberSplit::All),
                    |n| mb.value(n, task, NumberSplit::All),
                );
                pairs.push((
                    format!("{}:{task}", ma.backend_id),
                    format!("{}:{task}", mb.backend_id),
                    x,
                    y,
                ));
            }
        }
    }
    CorrelationSuite::collect(pairs, alpha)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PcaResult {
    pub tasks: Vec<String>,
    /// Descending, clamped at zero.
    pub eigenvalues: Vec<f64>,
    pub cumulative_explained: Vec<f64>,
    /// Column `j` is component `j`, one row per task.
    pub loadings: DMatrix<f64>,
    /// The matrix that was decomposed.
    pub covariance: DMatrix<f64>,
    pub rows_used: usize,
    pub rows_dropped: usize,
}

impl PcaResult {
    /// Tasks of component `pc` ranked by |loading|, ties broken by task order.
    pub fn top_contributors(&self, pc: usize) -> Vec<(String, f64)> {
        let mut ranked: Vec<(usize, f64)> = (0..self.tasks.len())
            .map(|i| (i, self.loadings[(i, pc)].abs()))
            .collect();
        ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        ranked
            .into_iter()
            .map(|(i, l)| (self.tasks[i].clone(), l))
            .collect()
    }

    pub fn write_variance_csv<W: Write>(&self, writer: W) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["pc", "cum_var"])?;
        for (i, c) in self.cumulative_explained.iter().enumerate() {
            w.write_record([(i + 1).to_string(), c.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_loadings_csv<W: Write>(&self, writer: W) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["pc", "rank", "task", "abs_loading"])?;
        for pc in 0..self.tasks.len() {
            for (rank, (task, l)) in self.top_contributors(pc).into_iter().enumerate() {
                w.write_record([(pc + 1).to_string(), (rank + 1).to_string(), task, l.to_string()])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Covariance (or correlation, when standardized) matrix of the columns.
pub fn covariance_matrix(
    rows: &[Vec<f64>],
    tasks: &[String],
    standardize: bool,
) -> Result<DMatrix<f64>, AnalysisError> {
    let n = rows.len();
    if n < 2 {
        return Err(AnalysisError::InsufficientRows(n));
    }
    let k = tasks.len();
    let mut data = DMatrix::from_fn(n, k, |i, j| rows[i][j]);
    for j in 0..k {
        let col = data.column(j);
        let m = col.mean();
        let sd = (col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
        if standardize && sd == 0.0 {
            return Err(AnalysisError::ZeroVariance(tasks[j].clone()));
        }
        let scale = if standardize { sd } else { 1.0 };
        for v in data.column_mut(j).iter_mut() {
            *v = (*v - m) / scale;
        }
    }
    Ok(data.transpose() * &data / (n - 1) as f64)
}

/// PCA over the complete rows of a nouns × tasks matrix.
pub fn pca(
    rows: &[Option<Vec<f64>>],
    tasks: &[String],
    standardize: bool,
) -> Result<PcaResult, AnalysisError> {
    let complete: Vec<Vec<f64>> = rows.iter().flatten().cloned().collect();
    let cov = covariance_matrix(&complete, tasks, standardize)?;
    let k = tasks.len();
    let eig = SymmetricEigen::new(cov.clone());
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let eigenvalues: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i].max(0.0)).collect();
    let mut loadings = DMatrix::zeros(k, k);
    for (col, &i) in order.iter().enumerate() {
        let v = eig.eigenvectors.column(i);
        let pivot = (0..k)
            .max_by(|&a, &b| v[a].abs().total_cmp(&v[b].abs()).then(b.cmp(&a)))
            .expect("non-empty");
        let sign = if v[pivot] < 0.0 { -1.0 } else { 1.0 };
        loadings.set_column(col, &(v * sign));
    }
    let total: f64 = eigenvalues.iter().sum();
    let mut acc = 0.0;
    let cumulative_explained = eigenvalues
        .iter()
        .map(|e| {
            acc += e;
            if total > 0.0 { acc / total } else { 0.0 }
        })
        .collect();
    Ok(PcaResult {
        tasks: tasks.to_vec(),
        eigenvalues,
        cumulative_explained,
        loadings,
        covariance: cov,
        rows_used: complete.len(),
        rows_dropped: rows.len() - complete.len(),
    })
}

/// PCA over a score matrix's tasks.
pub fn pca_matrix(
    matrix: &ScoreMatrix,
    split: NumberSplit,
    standardize: bool,
) -> Result<PcaResult, AnalysisError> {
    let rows: Vec<Option<Vec<f64>>> = matrix
        .nouns
        .iter()
        .map(|noun| {
            matrix
                .tasks
                .iter()
                .map(|t| matrix.value(noun, t, split))
                .collect()
        })
        .collect();
    pca(&rows, &matrix.tasks, standardize)
}
