//! Ordinary least squares with Gaussian inference, AIC and backward
//! (stepback) selection over groups of columns.

use std::collections::BTreeSet;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};
use crate::exec::Exec;

/// Singular-value ratio, after scaling columns to unit norm, below which a
/// design is treated as rank deficient.
pub const RANK_TOLERANCE: f64 = 1e-10;

/// Residual sums of squares are floored at `(RSS_FLOOR_REL * ||y||)^2` before
/// entering the likelihood, so that exact fits yield a finite deviance and
/// deviance differences between exact fits are zero instead of roundoff noise.
pub const RSS_FLOOR_REL: f64 = 1e-10;

pub const INTERCEPT: &str = "intercept";

/// Regression design with a leading column of ones.
///
/// Every column carries a label and a group; stepback removes whole groups,
/// so the two columns of a second-degree FP term share one group.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    data: DMatrix<f64>,
    labels: Vec<String>,
    groups: Vec<String>,
}

impl DesignMatrix {
    /// Intercept-only design with `n` rows.
    pub fn intercept(n: usize) -> Self {
        DesignMatrix {
            data: DMatrix::from_element(n, 1, 1.0),
            labels: vec![INTERCEPT.to_string()],
            groups: vec![INTERCEPT.to_string()],
        }
    }

    /// Intercept followed by the given `(label, column)` pairs, each its own group.
    pub fn from_columns<S: AsRef<str>>(n: usize, columns: &[(S, Vec<f64>)]) -> Result<Self> {
        let mut d = Self::intercept(n);
        for (label, col) in columns {
            d.push_column(label.as_ref(), label.as_ref(), col)?;
        }
        Ok(d)
    }

    pub fn push_column(&mut self, label: &str, group: &str, column: &[f64]) -> Result<()> {
        if column.len() != self.nrows() {
            return Err(Error::DimensionMismatch {
                expected: self.nrows(),
                got: column.len(),
            });
        }
        let k = self.ncols();
        let data = std::mem::replace(&mut self.data, DMatrix::zeros(0, 0));
        self.data = data.insert_column(k, 0.0);
        self.data.column_mut(k).copy_from_slice(column);
        self.labels.push(label.to_string());
        self.groups.push(group.to_string());
        Ok(())
    }

    pub fn with_column(mut self, label: &str, group: &str, column: &[f64]) -> Result<Self> {
        self.push_column(label, group, column)?;
        Ok(self)
    }

    pub fn nrows(&self) -> usize {
        self.data.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.data.ncols()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn groups(&self) -> &[String] {
        &self.groups
    }

    /// Distinct groups in column order, intercept excluded.
    pub fn group_names(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for g in self.groups.iter().skip(1) {
            if !out.contains(g) {
                out.push(g.clone());
            }
        }
        out
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.data.row(i).iter().copied().collect()
    }

    /// Copy of the design without the columns of `group`.
    pub fn without_group(&self, group: &str) -> Self {
        let keep: Vec<usize> = (0..self.ncols())
            .filter(|&j| j == 0 || self.groups[j] != group)
            .collect();
        DesignMatrix {
            data: self.data.select_columns(&keep),
            labels: keep.iter().map(|&j| self.labels[j].clone()).collect(),
            groups: keep.iter().map(|&j| self.groups[j].clone()).collect(),
        }
    }

    fn check_intercept(&self) -> Result<()> {
        if self.ncols() == 0 || self.data.column(0).iter().any(|&v| v != 1.0) {
            return Err(Error::Validation(
                "design matrix must start with a column of ones".into(),
            ));
        }
        Ok(())
    }
}

/// Result of an OLS fit.
///
/// Two variance conventions coexist: the ML estimate `RSS / n` drives the
/// log-likelihood, deviance and AIC; the unbiased `RSS / (n - q - 1)` is
/// `sigma2_hat` and drives standard errors and intervals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub labels: Vec<String>,
    pub groups: Vec<String>,
    pub n: usize,
    pub coefficients: Vec<f64>,
    pub std_errors: Vec<f64>,
    pub t_statistics: Vec<f64>,
    pub p_values: Vec<f64>,
    pub sigma2_hat: f64,
    pub rss: f64,
    pub residuals: Vec<f64>,
    pub r2: f64,
    pub r2_adj: f64,
    pub log_likelihood: f64,
    pub deviance: f64,
    pub aic: f64,
    /// Row-major `(q+1) x (q+1)` inverse of `X'X`.
    pub xtx_inverse: Vec<f64>,
    pub df_residual: usize,
}

impl FitResult {
    /// Number of coefficients, intercept included.
    pub fn n_coefficients(&self) -> usize {
        self.coefficients.len()
    }

    /// Number of non-intercept columns (`q`).
    pub fn q(&self) -> usize {
        self.coefficients.len() - 1
    }

    pub fn sigma_hat(&self) -> f64 {
        self.sigma2_hat.sqrt()
    }

    pub fn fitted_values(&self, y: &[f64]) -> Vec<f64> {
        y.iter().zip(&self.residuals).map(|(y, r)| y - r).collect()
    }

    fn xtx_inv(&self, i: usize, j: usize) -> f64 {
        self.xtx_inverse[i * self.n_coefficients() + j]
    }
}

/// Fits `y = X beta + e` by Householder QR.
pub fn fit_ols(design: &DesignMatrix, y: &[f64]) -> Result<FitResult> {
    design.check_intercept()?;
    let n = design.nrows();
    let p = design.ncols();
    if y.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: y.len(),
        });
    }
    if n <= p {
        return Err(Error::InsufficientData {
            what: "OLS fit (rows must exceed coefficients)".into(),
            needed: p + 1,
            got: n,
        });
    }
    let x = design.matrix();
    let yv = DVector::from_column_slice(y);

    let qr = x.clone().qr();
    let r = qr.r();
    let mut scaled = r.clone();
    for (j, col) in x.column_iter().enumerate() {
        let norm = col.norm();
        scaled.column_mut(j).scale_mut(if norm > 0.0 { 1.0 / norm } else { 0.0 });
    }
    let sv = scaled.singular_values();
    let smax = sv.max();
    let smin = sv.min();
    let ratio = if smax > 0.0 { smin / smax } else { 0.0 };
    if !(ratio >= RANK_TOLERANCE) {
        return Err(Error::RankDeficient { ratio });
    }

    let qty = qr.q().transpose() * &yv;
    let beta = r
        .solve_upper_triangular(&qty)
        .ok_or(Error::RankDeficient { ratio })?;
    let resid = &yv - x * &beta;
    let rss = resid.norm_squared();

    let r_inv = r
        .solve_upper_triangular(&DMatrix::identity(p, p))
        .ok_or(Error::RankDeficient { ratio })?;
    let xtx_inv = &r_inv * r_inv.transpose();

    let df = n - p;
    let sigma2_hat = rss / df as f64;

    let floor = (RSS_FLOOR_REL * yv.norm()).powi(2);
    let sigma2_ml = rss.max(floor) / n as f64;
    let log_likelihood =
        -0.5 * n as f64 * ((2.0 * std::f64::consts::PI * sigma2_ml).ln() + 1.0);
    let deviance = -2.0 * log_likelihood;
    let aic = deviance + 2.0 * (p as f64 + 1.0);

    let t_dist = StudentsT::new(0.0, 1.0, df as f64).expect("df >= 1");
    let mut std_errors = Vec::with_capacity(p);
    let mut t_statistics = Vec::with_capacity(p);
    let mut p_values = Vec::with_capacity(p);
    for j in 0..p {
        let se = (sigma2_hat * xtx_inv[(j, j)]).max(0.0).sqrt();
        let b = beta[j];
        let (t, pv) = if se > 0.0 {
            let t = b / se;
            (t, (2.0 * t_dist.sf(t.abs())).clamp(0.0, 1.0))
        } else if b == 0.0 {
            (0.0, 1.0)
        } else {
            (f64::INFINITY.copysign(b), 0.0)
        };
        std_errors.push(se);
        t_statistics.push(t);
        p_values.push(pv);
    }

    let mean = y.iter().sum::<f64>() / n as f64;
    let tss: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
    let r2 = if tss > 0.0 {
        (1.0 - rss / tss).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let r2_adj = 1.0 - (1.0 - r2) * (n as f64 - 1.0) / df as f64;

    let mut xtx_flat = Vec::with_capacity(p * p);
    for i in 0..p {
        for j in 0..p {
            xtx_flat.push(xtx_inv[(i, j)]);
        }
    }

    Ok(FitResult {
        labels: design.labels().to_vec(),
        groups: design.groups().to_vec(),
        n,
        coefficients: beta.iter().copied().collect(),
        std_errors,
        t_statistics,
        p_values,
        sigma2_hat,
        rss,
        residuals: resid.iter().copied().collect(),
        r2,
        r2_adj,
        log_likelihood,
        deviance,
        aic,
        xtx_inverse: xtx_flat,
        df_residual: df,
    })
}

/// AIC counting the `q + 1` coefficients plus the variance parameter.
pub fn aic(fit: &FitResult) -> f64 {
    fit.deviance + 2.0 * (fit.q() as f64 + 2.0)
}

pub fn predict_point(fit: &FitResult, x_row: &[f64]) -> Result<f64> {
    if x_row.len() != fit.n_coefficients() {
        return Err(Error::DimensionMismatch {
            expected: fit.n_coefficients(),
            got: x_row.len(),
        });
    }
    Ok(x_row.iter().zip(&fit.coefficients).map(|(a, b)| a * b).sum())
}

/// Two-sided prediction interval for a new observation at `x_row`.
pub fn prediction_interval(fit: &FitResult, x_row: &[f64], level: f64) -> Result<(f64, f64)> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidLevel(level));
    }
    let yhat = predict_point(fit, x_row)?;
    let half = prediction_half_width(fit, x_row, level);
    Ok((yhat - half, yhat + half))
}

pub(crate) fn prediction_half_width(fit: &FitResult, x_row: &[f64], level: f64) -> f64 {
    let p = fit.n_coefficients();
    let mut quad = 0.0;
    for i in 0..p {
        for j in 0..p {
            quad += x_row[i] * fit.xtx_inv(i, j) * x_row[j];
        }
    }
    let t = StudentsT::new(0.0, 1.0, fit.df_residual as f64)
        .expect("df >= 1")
        .inverse_cdf(0.5 * (1.0 + level));
    t * fit.sigma_hat() * (1.0 + quad.max(0.0)).sqrt()
}

/// Backward elimination by AIC over column groups.
///
/// Each round drops the unprotected group whose removal lowers AIC the most;
/// stops when no removal lowers it. The intercept is always kept.
pub fn stepback_aic(
    design: &DesignMatrix,
    y: &[f64],
    protected: &BTreeSet<String>,
) -> Result<(DesignMatrix, FitResult)> {
    stepback_aic_with(Exec::default(), design, y, protected)
}

pub fn stepback_aic_with(
    exec: Exec,
    design: &DesignMatrix,
    y: &[f64],
    protected: &BTreeSet<String>,
) -> Result<(DesignMatrix, FitResult)> {
    let mut current = design.clone();
    let mut fit = fit_ols(&current, y)?;
    loop {
        let candidates: Vec<String> = current
            .group_names()
            .into_iter()
            .filter(|g| !protected.contains(g))
            .collect();
        if candidates.is_empty() {
            break;
        }
        let trials = exec.map(&candidates, |g| {
            let reduced = current.without_group(g);
            fit_ols(&reduced, y).map(|f| (reduced, f))
        });
        let mut best: Option<(DesignMatrix, FitResult)> = None;
        for trial in trials {
            let (d, f) = trial?;
            if best.as_ref().is_none_or(|(_, b)| aic(&f) < aic(b)) {
                best = Some((d, f));
            }
        }
        match best {
            Some((d, f)) if aic(&f) < aic(&fit) => {
                log::debug!(
                    "stepback: dropping {:?} (AIC {:.4} -> {:.4})",
                    current.group_names().iter().find(|g| !d.groups().contains(g)),
                    aic(&fit),
                    aic(&f)
                );
                current = d;
                fit = f;
            }
            _ => break,
        }
    }
    Ok((current, fit))
}

/// Greedy modified Gram-Schmidt: indices of columns independent of the
/// columns kept before them.
pub(crate) fn independent_columns(cols: &[Vec<f64>], tolerance: f64) -> Vec<usize> {
    let mut basis: Vec<Vec<f64>> = Vec::new();
    let mut keep = Vec::new();
    for (j, c) in cols.iter().enumerate() {
        let norm0 = c.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm0 == 0.0 {
            continue;
        }
        let mut r = c.clone();
        for q in &basis {
            let d: f64 = r.iter().zip(q).map(|(a, b)| a * b).sum();
            r.iter_mut().zip(q).for_each(|(a, b)| *a -= d * b);
        }
        let norm = r.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > tolerance * norm0 {
            r.iter_mut().for_each(|v| *v /= norm);
            basis.push(r);
            keep.push(j);
        }
    }
    keep
}
