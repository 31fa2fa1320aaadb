//! Preliminary linear model for rough per-step capacity estimates.
//!
//! Each sampled discharge is mapped to six predictors (mean temperature,
//! current, mean voltage, voltage drop, temperature range and the
//! similar-triangles duration) and the equivalent full-discharge time is
//! regressed on all main effects plus every two- and three-way interaction.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::ingest::{CellHistory, ReferenceMeasurement, StepRecord, StepType};
use crate::linreg::{fit_ols, independent_columns, DesignMatrix};

pub const PREDICTORS: [&str; 6] = ["t_bar", "current", "v_bar", "dv", "dT", "t_triangle"];
const N_PRED: usize = PREDICTORS.len();
/// Columns whose Gram-Schmidt residual falls below this fraction of their
/// norm are treated as linearly dependent.
const DEPENDENCE_TOLERANCE: f64 = 1e-9;

/// Similar-triangles duration `t * A / b`.
pub fn t_triangle(t: f64, a: f64, b: f64) -> Result<f64> {
    if !(b > 0.0) {
        return Err(Error::NonPositiveDrop(b));
    }
    Ok(t * a / b)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrelimRow {
    /// Equivalent full-discharge time, hours (the response).
    pub t_dis: f64,
    pub t_bar: f64,
    pub current: f64,
    pub v_bar: f64,
    pub dv: f64,
    pub dt: f64,
    pub t_triangle: f64,
}

impl PrelimRow {
    pub fn predictors(&self) -> [f64; N_PRED] {
        [self.t_bar, self.current, self.v_bar, self.dv, self.dt, self.t_triangle]
    }
}

/// Current used for a discharge: the protocol value, else the sampled mean.
pub(crate) fn step_current(step: &StepRecord) -> Option<f64> {
    if step.nominal_current > 0.0 {
        Some(step.nominal_current)
    } else {
        step.mean_current().map(f64::abs).filter(|c| *c > 0.0)
    }
}

/// Predictor values of one discharge given the reference drop `a`.
/// `None` when the step is unsampled or its drop is not positive.
pub fn step_predictors(step: &StepRecord, a: f64) -> Option<[f64; N_PRED]> {
    if step.samples.len() < 2 {
        return None;
    }
    let dv = step.voltage_drop()?;
    let current = step_current(step)?;
    let t = step.duration_h();
    if !(dv > 0.0) || !(t > 0.0) {
        return None;
    }
    Some([
        step.mean_temperature()?,
        current,
        step.mean_voltage()?,
        dv,
        step.max_temperature()? - step.min_temperature()?,
        t_triangle(t, a, dv).ok()?,
    ])
}

/// Piecewise-linear capacity between reference measurements, anchored at
/// the reference discharge start times and held flat after the last one.
#[derive(Debug, Clone)]
pub struct CapacityCurve {
    knots: Vec<(f64, f64)>,
}

impl CapacityCurve {
    pub fn new(measurements: &[ReferenceMeasurement]) -> Result<Self> {
        let knots: Vec<(f64, f64)> = measurements
            .iter()
            .filter_map(|m| m.adjusted.map(|c| (m.t_start, c)))
            .collect();
        if knots.len() < 2 {
            return Err(Error::InsufficientData {
                what: "capacity interpolation (reference capacities)".into(),
                needed: 2,
                got: knots.len(),
            });
        }
        Ok(CapacityCurve { knots })
    }

    pub fn at(&self, t: f64) -> Result<f64> {
        let k = &self.knots;
        if t < k[0].0 {
            return Err(Error::NoReferenceAnchor(t));
        }
        let i = k.partition_point(|&(tk, _)| tk <= t);
        if i == k.len() {
            return Ok(k[k.len() - 1].1);
        }
        let (t0, c0) = k[i - 1];
        let (t1, c1) = k[i];
        Ok(c0 + (c1 - c0) * (t - t0) / (t1 - t0))
    }
}

fn positive_drop(m: &ReferenceMeasurement) -> Option<f64> {
    m.voltage_drop.filter(|d| *d > 0.0)
}

/// Mean positive voltage drop over the reference discharges.
pub fn mean_reference_drop(measurements: &[ReferenceMeasurement]) -> Option<f64> {
    let drops: Vec<f64> = measurements.iter().filter_map(positive_drop).collect();
    (!drops.is_empty()).then(|| drops.iter().sum::<f64>() / drops.len() as f64)
}

/// Training rows from every sampled RW or reference discharge with a
/// positive voltage drop.
pub fn build_prelim_training(
    history: &CellHistory,
    measurements: &[ReferenceMeasurement],
) -> Result<Vec<PrelimRow>> {
    let curve = CapacityCurve::new(measurements)?;
    let fallback_a = mean_reference_drop(measurements).ok_or_else(|| {
        Error::Validation("no reference discharge has a positive voltage drop".into())
    })?;
    let mut rows = Vec::new();
    let mut last_ref: Option<&ReferenceMeasurement> = None;
    let mut next_ref = measurements.iter().peekable();
    for (idx, step) in history.steps.iter().enumerate() {
        match step.step_type {
            StepType::ReferenceDischarge => {
                let m = next_ref
                    .next()
                    .filter(|m| m.step_index == idx)
                    .ok_or_else(|| Error::Validation("reference measurements out of step".into()))?;
                let a = last_ref.and_then(positive_drop).or(positive_drop(m)).unwrap_or(fallback_a);
                if let (Some(c), Some(x)) = (m.adjusted, step_predictors(step, a)) {
                    rows.push(row(c / x[1], x));
                }
                last_ref = Some(m);
            }
            StepType::RwDischarge => {
                let Some(prev) = last_ref else {
                    return Err(Error::NoReferenceAnchor(step.t_start));
                };
                let a = positive_drop(prev).unwrap_or(fallback_a);
                if let Some(x) = step_predictors(step, a) {
                    let mid = 0.5 * (step.t_start + step.t_end);
                    rows.push(row(curve.at(mid)? / x[1], x));
                }
            }
            _ => {}
        }
    }
    Ok(rows)
}

fn row(t_dis: f64, x: [f64; N_PRED]) -> PrelimRow {
    PrelimRow {
        t_dis,
        t_bar: x[0],
        current: x[1],
        v_bar: x[2],
        dv: x[3],
        dt: x[4],
        t_triangle: x[5],
    }
}

/// Predictor index sets of the full expansion: the intercept, main effects,
/// then all two- and three-way products, each in lexicographic order.
pub fn interaction_terms(k: usize) -> Vec<Vec<usize>> {
    let mut out = vec![vec![]];
    out.extend((0..k).map(|i| vec![i]));
    for i in 0..k {
        for j in i + 1..k {
            out.push(vec![i, j]);
        }
    }
    for i in 0..k {
        for j in i + 1..k {
            for l in j + 1..k {
                out.push(vec![i, j, l]);
            }
        }
    }
    out
}

fn term_label(term: &[usize]) -> String {
    if term.is_empty() {
        return crate::linreg::INTERCEPT.to_string();
    }
    term.iter().map(|&i| PREDICTORS[i]).collect::<Vec<_>>().join(":")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrelimModel {
    /// Predictors are standardized as `(x - center) / scale` before products are formed.
    pub centers: Vec<f64>,
    pub scales: Vec<f64>,
    /// Retained design terms as predictor index sets; empty is the intercept.
    pub terms: Vec<Vec<usize>>,
    pub coefficients: Vec<f64>,
    /// Reference drop used when a phase's previous reference has none.
    pub fallback_drop: f64,
    pub n: usize,
    pub r2: f64,
}

impl PrelimModel {
    fn design_row(&self, x: &[f64; N_PRED]) -> Vec<f64> {
        let z: Vec<f64> = (0..N_PRED)
            .map(|i| (x[i] - self.centers[i]) / self.scales[i])
            .collect();
        self.terms
            .iter()
            .map(|t| t.iter().map(|&i| z[i]).product())
            .collect()
    }

    pub fn predict_t_dis(&self, x: &[f64; N_PRED]) -> f64 {
        self.design_row(x)
            .iter()
            .zip(&self.coefficients)
            .map(|(a, b)| a * b)
            .sum()
    }

    /// Coefficients on raw-scale monomials, keyed by predictor index set.
    pub fn raw_coefficients(&self) -> std::collections::BTreeMap<Vec<usize>, f64> {
        let mut out = std::collections::BTreeMap::new();
        for (term, &beta) in self.terms.iter().zip(&self.coefficients) {
            // expand prod (x_i - c_i) / s_i over subsets of the term
            for mask in 0u32..(1 << term.len()) {
                let mut coef = beta;
                let mut mono = Vec::new();
                for (bit, &i) in term.iter().enumerate() {
                    coef /= self.scales[i];
                    if mask & (1 << bit) != 0 {
                        mono.push(i);
                    } else {
                        coef *= -self.centers[i];
                    }
                }
                *out.entry(mono).or_insert(0.0) += coef;
            }
        }
        out
    }

    pub fn labels(&self) -> Vec<String> {
        self.terms.iter().map(|t| term_label(t)).collect()
    }
}

pub fn fit_prelim(rows: &[PrelimRow], fallback_drop: f64) -> Result<PrelimModel> {
    let n = rows.len();
    let x: Vec<[f64; N_PRED]> = rows.iter().map(PrelimRow::predictors).collect();
    let mut centers = vec![0.0; N_PRED];
    let mut scales = vec![1.0; N_PRED];
    let mut constant = [false; N_PRED];
    for i in 0..N_PRED {
        let mean = x.iter().map(|r| r[i]).sum::<f64>() / n.max(1) as f64;
        let var = x.iter().map(|r| (r[i] - mean).powi(2)).sum::<f64>() / n.max(1) as f64;
        let sd = var.sqrt();
        centers[i] = mean;
        if sd > 1e-12 * mean.abs().max(1.0) {
            scales[i] = sd;
        } else {
            constant[i] = true;
            log::warn!("preliminary model: predictor {} is constant; its columns are dropped", PREDICTORS[i]);
        }
    }
    let candidates: Vec<Vec<usize>> = interaction_terms(N_PRED)
        .into_iter()
        .filter(|t| t.iter().all(|&i| !constant[i]))
        .collect();
    if n < 2 * candidates.len() {
        return Err(Error::InsufficientData {
            what: "preliminary model rows (twice the column count)".into(),
            needed: 2 * candidates.len(),
            got: n,
        });
    }
    let proto = PrelimModel {
        centers,
        scales,
        terms: candidates,
        coefficients: Vec::new(),
        fallback_drop,
        n,
        r2: 0.0,
    };
    let design_rows: Vec<Vec<f64>> = Exec::default().map(&x, |r| proto.design_row(r));
    let cols: Vec<Vec<f64>> = (0..proto.terms.len())
        .map(|j| design_rows.iter().map(|r| r[j]).collect())
        .collect();
    let keep = independent_columns(&cols, DEPENDENCE_TOLERANCE);
    if keep.len() < cols.len() {
        let dropped: Vec<String> = (0..cols.len())
            .filter(|j| !keep.contains(j))
            .map(|j| term_label(&proto.terms[j]))
            .collect();
        log::warn!("preliminary model: dropped dependent columns {}", dropped.join(", "));
    }
    let mut design = DesignMatrix::intercept(n);
    for &j in keep.iter().filter(|&&j| !proto.terms[j].is_empty()) {
        let label = term_label(&proto.terms[j]);
        design.push_column(&label, &label, &cols[j])?;
    }
    let y: Vec<f64> = rows.iter().map(|r| r.t_dis).collect();
    let fit = fit_ols(&design, &y)?;
    let mut terms = vec![vec![]];
    terms.extend(keep.iter().filter(|&&j| !proto.terms[j].is_empty()).map(|&j| proto.terms[j].clone()));
    Ok(PrelimModel {
        terms,
        coefficients: fit.coefficients.clone(),
        r2: fit.r2,
        ..proto
    })
}

/// Rough capacity `I * t_dis` of one discharge; negative estimates clamp
/// to zero and report `true`.
pub fn approx_step_capacity(model: &PrelimModel, x: &[f64; N_PRED]) -> Result<(f64, bool)> {
    if !(x[3] > 0.0) {
        return Err(Error::NonPositiveDrop(x[3]));
    }
    let c = x[1] * model.predict_t_dis(x);
    Ok(if c < 0.0 { (0.0, true) } else { (c, false) })
}

/// Mean rough capacity over the eligible steps, with the number of clamped
/// estimates. `None` when no step is eligible.
pub fn mean_step_capacity(model: &PrelimModel, steps: &[&StepRecord], a: f64) -> Option<(f64, usize)> {
    let est: Vec<(f64, bool)> = steps
        .iter()
        .filter_map(|s| step_predictors(s, a))
        .filter_map(|x| approx_step_capacity(model, &x).ok())
        .collect();
    if est.is_empty() {
        return None;
    }
    let clamped = est.iter().filter(|e| e.1).count();
    Some((est.iter().map(|e| e.0).sum::<f64>() / est.len() as f64, clamped))
}
