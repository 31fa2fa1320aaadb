//! Multivariable fractional polynomial fitting by backfitting, followed by
//! backward AIC elimination.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::features::{FeatureName, FeatureVector, RestVarianceConstant, Variant};
use crate::fp::{
    basis_columns, fp_degree_choice, select_fp1_with, select_fp2_with, shift_and_scale, FpTerm, Prep,
};
use crate::linreg::{fit_ols, independent_columns, predict_point, prediction_half_width, stepback_aic_with, DesignMatrix, FitResult};
use crate::prelim::PrelimModel;

/// Relative residual norm below which a standardized feature counts as a
/// linear combination of the ones before it.
const COLLINEARITY_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct MfpConfig {
    pub max_degree: u8,
    pub alpha: f64,
    pub max_cycles: usize,
    /// Features offered to the model, in order; empty means every column.
    pub candidate_features: Vec<String>,
    /// Features stepback may not remove.
    pub protected_features: BTreeSet<String>,
    pub exec: Exec,
}

impl Default for MfpConfig {
    fn default() -> Self {
        MfpConfig {
            max_degree: 2,
            alpha: 0.05,
            max_cycles: 5,
            candidate_features: Vec::new(),
            protected_features: BTreeSet::new(),
            exec: Exec::default(),
        }
    }
}

/// Named covariate columns with the response.
#[derive(Debug, Clone, Default)]
pub struct MfpData {
    pub columns: Vec<(String, Vec<f64>)>,
    pub y: Vec<f64>,
}

impl MfpData {
    fn column(&self, name: &str) -> Option<&[f64]> {
        self.columns
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, c)| c.as_slice())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExclusionReason {
    /// Single-valued in the training data.
    Constant,
    /// Linearly dependent on features listed before it.
    Collinear,
    /// Removed by backward AIC elimination.
    Stepback,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Term {
    /// Untransformed raw covariate.
    Linear,
    Fp(FpTerm),
    Excluded(ExclusionReason),
}

impl Term {
    pub fn is_included(&self) -> bool {
        !matches!(self, Term::Excluded(_))
    }

    /// Design column labels for a feature called `name`.
    pub fn labels(&self, name: &str) -> Vec<String> {
        match self {
            Term::Linear => vec![name.to_string()],
            Term::Fp(t) => t.labels(name),
            Term::Excluded(_) => Vec::new(),
        }
    }

    /// Design values for one raw covariate value, and whether it was clamped
    /// into the training domain.
    pub fn basis_at(&self, raw: f64) -> (Vec<f64>, bool) {
        match self {
            Term::Linear => (vec![raw], false),
            Term::Fp(t) => t.basis_at(raw),
            Term::Excluded(_) => (Vec::new(), false),
        }
    }
}

/// Constants fixed at training time and reused at prediction time.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Preprocessing {
    pub variant: Option<Variant>,
    pub rest_variance: Option<RestVarianceConstant>,
    pub prelim: Option<PrelimModel>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainingMeta {
    pub cell_id: String,
    pub n: usize,
    /// Backfitting cycles used, including the final unchanged one.
    pub cycles: usize,
    pub nominal_capacity: Option<f64>,
    pub visit_order: Vec<String>,
    pub alpha: f64,
    pub max_degree: u8,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FpModel {
    /// One entry per candidate feature, in candidate order.
    pub terms: Vec<(String, Term)>,
    pub fit: FitResult,
    pub preprocessing: Preprocessing,
    pub meta: TrainingMeta,
}

/// Source of named covariate values for prediction.
pub trait FeatureLookup {
    fn feature(&self, name: &str) -> Option<f64>;
}

impl FeatureLookup for FeatureVector {
    fn feature(&self, name: &str) -> Option<f64> {
        name.parse::<FeatureName>().ok().and_then(|n| self.get(n))
    }
}

impl FeatureLookup for BTreeMap<String, f64> {
    fn feature(&self, name: &str) -> Option<f64> {
        self.get(name).copied()
    }
}

impl FeatureLookup for HashMap<String, f64> {
    fn feature(&self, name: &str) -> Option<f64> {
        self.get(name).copied()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    /// Predicted response (capacity fade for battery models).
    pub value: f64,
    pub low: f64,
    pub high: f64,
    /// Features clamped into the training domain.
    pub out_of_domain: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionRecord {
    pub cell_id: String,
    pub cycle_index: usize,
    pub delta: f64,
    pub predicted_capacity: f64,
    pub interval_low: f64,
    pub interval_high: f64,
    pub observed_capacity: Option<f64>,
    pub flags: Vec<String>,
}

impl FpModel {
    pub fn included(&self) -> impl Iterator<Item = &(String, Term)> {
        self.terms.iter().filter(|(_, t)| t.is_included())
    }

    pub fn term(&self, name: &str) -> Option<&Term> {
        self.terms.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    /// Design row for a new observation and the features clamped on the way.
    pub fn design_row(&self, x: &impl FeatureLookup) -> Result<(Vec<f64>, Vec<String>)> {
        let mut row = vec![1.0];
        let mut clamped = Vec::new();
        for (name, term) in self.included() {
            let v = x
                .feature(name)
                .ok_or_else(|| Error::MissingFeature(name.clone()))?;
            let (vals, c) = term.basis_at(v);
            if c {
                clamped.push(name.clone());
            }
            row.extend(vals);
        }
        Ok((row, clamped))
    }

    pub fn predict(&self, x: &impl FeatureLookup, level: f64) -> Result<Prediction> {
        if !(level > 0.0 && level < 1.0) {
            return Err(Error::InvalidLevel(level));
        }
        let (row, out_of_domain) = self.design_row(x)?;
        let value = predict_point(&self.fit, &row)?;
        let half = prediction_half_width(&self.fit, &row, level);
        Ok(Prediction {
            value,
            low: value - half,
            high: value + half,
            out_of_domain,
        })
    }

    /// Capacity-scale record: the model predicts fade from `nominal`.
    pub fn predict_record(
        &self,
        cell_id: &str,
        features: &FeatureVector,
        nominal: f64,
        observed: Option<f64>,
        level: f64,
    ) -> Result<PredictionRecord> {
        let p = self.predict(features, level)?;
        let mut flags: Vec<String> = p.out_of_domain.iter().map(|n| format!("out_of_domain:{n}")).collect();
        flags.extend(features.flags.iter().map(|f| f.to_string()));
        Ok(PredictionRecord {
            cell_id: cell_id.to_string(),
            cycle_index: features.cycle_index,
            delta: p.value,
            predicted_capacity: nominal - p.value,
            interval_low: nominal - p.high,
            interval_high: nominal - p.low,
            observed_capacity: observed,
            flags,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Transform {
    Linear,
    Fp(Vec<f64>),
}

struct Candidate<'a> {
    name: String,
    x: &'a [f64],
    prep: Prep,
}

impl Candidate<'_> {
    fn columns(&self, t: &Transform) -> Vec<Vec<f64>> {
        match t {
            Transform::Linear => vec![self.x.to_vec()],
            Transform::Fp(p) => basis_columns(&self.prep.apply_all(self.x), p),
        }
    }
}

fn push_transform(d: &mut DesignMatrix, c: &Candidate<'_>, t: &Transform) -> Result<()> {
    for (k, col) in c.columns(t).iter().enumerate() {
        d.push_column(&format!("{}#{k}", c.name), &c.name, col)?;
    }
    Ok(())
}

fn working_design(n: usize, cands: &[Candidate<'_>], current: &[Transform], skip: Option<usize>) -> Result<DesignMatrix> {
    let mut d = DesignMatrix::intercept(n);
    for (j, (c, t)) in cands.iter().zip(current).enumerate() {
        if Some(j) != skip {
            push_transform(&mut d, c, t)?;
        }
    }
    Ok(d)
}

/// Best transform for candidate `j` with all others held fixed.
fn select_transform(
    j: usize,
    cands: &[Candidate<'_>],
    current: &[Transform],
    y: &[f64],
    config: &MfpConfig,
) -> Result<Transform> {
    let c = &cands[j];
    let base = working_design(y.len(), cands, current, Some(j))?;
    let linear = base.clone().with_column(&c.name, &c.name, c.x)?;
    let dev_lin = fit_ols(&linear, y)?.deviance;
    let (p1, dev1) = select_fp1_with(config.exec, y, &base, c.x, &c.prep)?;
    let (pair, dev2) = if config.max_degree >= 2 {
        let ((a, b), d) = select_fp2_with(config.exec, y, &base, c.x, &c.prep)?;
        (Some((a, b)), d)
    } else {
        (None, dev1)
    };
    let degree = fp_degree_choice(dev_lin, dev1, dev2, y.len(), config.alpha, config.max_degree)?;
    Ok(match degree {
        0 => Transform::Linear,
        1 => Transform::Fp(vec![p1]),
        _ => {
            let (a, b) = pair.expect("degree 2 requires a pair");
            Transform::Fp(vec![a, b])
        }
    })
}

pub fn fit_mfp(data: &MfpData, config: &MfpConfig) -> Result<FpModel> {
    if !(config.alpha > 0.0 && config.alpha < 1.0) {
        return Err(Error::InvalidAlpha(config.alpha));
    }
    if !(1..=2).contains(&config.max_degree) {
        return Err(Error::Validation(format!(
            "maximum FP degree must be 1 or 2, got {}",
            config.max_degree
        )));
    }
    let y = &data.y;
    let n = y.len();
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::Validation("response contains non-finite values".into()));
    }
    let names: Vec<String> = if config.candidate_features.is_empty() {
        data.columns.iter().map(|(n, _)| n.clone()).collect()
    } else {
        config.candidate_features.clone()
    };
    if let Some(p) = config.protected_features.iter().find(|p| !names.contains(p)) {
        return Err(Error::Validation(format!("protected feature `{p}` is not a candidate")));
    }

    let mut terms: Vec<(String, Option<Term>)> = Vec::with_capacity(names.len());
    let mut cands = Vec::new();
    for name in &names {
        let x = data
            .column(name)
            .ok_or_else(|| Error::MissingFeature(name.clone()))?;
        if x.len() != n {
            return Err(Error::LengthMismatch { left: x.len(), right: n });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation(format!("feature `{name}` contains non-finite values")));
        }
        match shift_and_scale(x) {
            Ok(prep) => {
                terms.push((name.clone(), None));
                cands.push(Candidate {
                    name: name.clone(),
                    x,
                    prep,
                });
            }
            Err(Error::ConstantInput(v)) => {
                log::warn!("feature {name} is constant ({v}) and was excluded");
                terms.push((name.clone(), Some(Term::Excluded(ExclusionReason::Constant))));
            }
            Err(e) => return Err(e),
        }
    }
    let standardized: Vec<Vec<f64>> = cands
        .iter()
        .map(|c| {
            let mean = c.x.iter().sum::<f64>() / n as f64;
            let sd = (c.x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
            c.x.iter().map(|v| (v - mean) / sd).collect()
        })
        .collect();
    let independent = independent_columns(&standardized, COLLINEARITY_TOLERANCE);
    if independent.len() < cands.len() {
        let mut j = 0;
        cands = cands
            .into_iter()
            .enumerate()
            .filter_map(|(k, c)| {
                if independent.contains(&k) {
                    return Some(c);
                }
                log::warn!("feature {} is collinear with earlier features and was excluded", c.name);
                while terms[j].1.is_some() || terms[j].0 != c.name {
                    j += 1;
                }
                terms[j].1 = Some(Term::Excluded(ExclusionReason::Collinear));
                None
            })
            .collect();
    }
    if n <= cands.len() + 2 {
        return Err(Error::InsufficientData {
            what: format!("MFP fit with {} candidate features", cands.len()),
            needed: cands.len() + 3,
            got: n,
        });
    }

    let mut current = vec![Transform::Linear; cands.len()];
    let initial = fit_ols(&working_design(n, &cands, &current, None)?, y)?;
    let mut order: Vec<usize> = (0..cands.len()).collect();
    let pval = |j: usize| initial.p_values[1 + j];
    order.sort_by(|&a, &b| pval(a).total_cmp(&pval(b)));
    let visit_order: Vec<String> = order.iter().map(|&j| cands[j].name.clone()).collect();
    log::debug!("MFP visit order: {}", visit_order.join(", "));

    let mut cycles = 0;
    loop {
        cycles += 1;
        let mut changed = Vec::new();
        for &j in &order {
            let t = select_transform(j, &cands, &current, y, config)?;
            if t != current[j] {
                log::debug!("cycle {cycles}: {} {:?} -> {:?}", cands[j].name, current[j], t);
                current[j] = t;
                changed.push(cands[j].name.clone());
            }
        }
        if changed.is_empty() {
            break;
        }
        if cycles >= config.max_cycles {
            return Err(Error::NonConvergence {
                cycles,
                features: changed,
            });
        }
    }

    let mut design = DesignMatrix::intercept(n);
    for (c, t) in cands.iter().zip(&current) {
        let fp = match t {
            Transform::Linear => None,
            Transform::Fp(p) => Some(FpTerm::new(p.clone(), c.prep, c.x)),
        };
        let labels = match &fp {
            Some(f) => f.labels(&c.name),
            None => vec![c.name.clone()],
        };
        for (label, col) in labels.iter().zip(c.columns(t)) {
            design.push_column(label, &c.name, &col)?;
        }
    }
    let (kept, fit) = stepback_aic_with(config.exec, &design, y, &config.protected_features)?;
    let kept_groups: BTreeSet<&str> = kept.groups().iter().map(String::as_str).collect();

    let mut ci = 0;
    let terms = terms
        .into_iter()
        .map(|(name, t)| {
            let t = t.unwrap_or_else(|| {
                let c = &cands[ci];
                let tr = &current[ci];
                ci += 1;
                if !kept_groups.contains(c.name.as_str()) {
                    log::info!("stepback removed {}", c.name);
                    Term::Excluded(ExclusionReason::Stepback)
                } else {
                    match tr {
                        Transform::Linear => Term::Linear,
                        Transform::Fp(p) => Term::Fp(FpTerm::new(p.clone(), c.prep, c.x)),
                    }
                }
            });
            (name, t)
        })
        .collect();

    Ok(FpModel {
        terms,
        fit,
        preprocessing: Preprocessing::default(),
        meta: TrainingMeta {
            cell_id: String::new(),
            n,
            cycles,
            nominal_capacity: None,
            visit_order,
            alpha: config.alpha,
            max_degree: config.max_degree,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::normal;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn data(cols: Vec<(&str, Vec<f64>)>, y: Vec<f64>) -> MfpData {
        MfpData {
            columns: cols.into_iter().map(|(n, c)| (n.to_string(), c)).collect(),
            y,
        }
    }

    #[test]
    fn recovers_inverse_square_root() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x: Vec<f64> = (0..200).map(|_| rng.random_range(0.5..5.0)).collect();
        let y: Vec<f64> = x.iter().map(|v| 2.0 + 3.0 / v.sqrt() + 0.01 * normal(&mut rng)).collect();
        let m = fit_mfp(&data(vec![("x", x)], y), &MfpConfig::default()).unwrap();
        match m.term("x").unwrap() {
            Term::Fp(t) => {
                assert_eq!(t.powers, vec![-0.5]);
                assert_eq!(t.prep, Prep::IDENTITY);
            }
            other => panic!("{other:?}"),
        }
        assert!((m.fit.coefficients[0] - 2.0).abs() < 0.1);
        assert!((m.fit.coefficients[1] - 3.0).abs() < 0.1);
    }

    #[test]
    fn exact_linear_truth_stays_linear() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let a: Vec<f64> = (0..60).map(|_| rng.random_range(1.0..10.0)).collect();
        let b: Vec<f64> = (0..60).map(|_| rng.random_range(-3.0..3.0)).collect();
        let y: Vec<f64> = a.iter().zip(&b).map(|(a, b)| 1.0 + 2.0 * a - 0.5 * b).collect();
        let m = fit_mfp(&data(vec![("a", a), ("b", b)], y), &MfpConfig::default()).unwrap();
        assert_eq!(m.meta.cycles, 1);
        assert!(m.terms.iter().all(|(_, t)| *t == Term::Linear));
    }

    #[test]
    fn constant_feature_excluded() {
        let x: Vec<f64> = (1..=30).map(f64::from).collect();
        let y: Vec<f64> = x.iter().map(|v| 1.0 + v + (v * 7.0).sin() * 0.1).collect();
        let m = fit_mfp(&data(vec![("c", vec![4.0; 30]), ("x", x)], y), &MfpConfig::default()).unwrap();
        assert_eq!(m.term("c"), Some(&Term::Excluded(ExclusionReason::Constant)));
        assert!(m.term("x").unwrap().is_included());
    }

    #[test]
    fn collinear_feature_excluded() {
        let x: Vec<f64> = (1..=30).map(f64::from).collect();
        let z: Vec<f64> = (1..=30).map(|v| f64::from((v * 7) % 11)).collect();
        let w: Vec<f64> = x.iter().zip(&z).map(|(a, b)| 3.0 - 2.0 * a + 0.5 * b).collect();
        let y: Vec<f64> = x.iter().zip(&z).map(|(a, b)| 1.0 + a + b).collect();
        let m = fit_mfp(&data(vec![("x", x), ("z", z), ("w", w)], y), &MfpConfig::default()).unwrap();
        assert_eq!(m.term("w"), Some(&Term::Excluded(ExclusionReason::Collinear)));
        assert!(m.term("x").unwrap().is_included());
    }

    #[test]
    fn noise_usually_removed_strong_kept() {
        let mut excluded = 0;
        for seed in 0..40 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x: Vec<f64> = (0..100).map(|_| rng.random_range(1.0..4.0)).collect();
            let z: Vec<f64> = (0..100).map(|_| rng.random_range(1.0..4.0)).collect();
            let y: Vec<f64> = x.iter().map(|v| 1.0 + 2.0 * v + normal(&mut rng)).collect();
            let m = fit_mfp(&data(vec![("x", x), ("z", z)], y), &MfpConfig::default()).unwrap();
            assert!(m.term("x").unwrap().is_included());
            if !m.term("z").unwrap().is_included() {
                excluded += 1;
            }
        }
        assert!(excluded >= 25, "{excluded}");
    }

    #[test]
    fn protected_feature_survives() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x: Vec<f64> = (0..50).map(|_| rng.random_range(1.0..4.0)).collect();
        let z: Vec<f64> = (0..50).map(|_| rng.random_range(1.0..4.0)).collect();
        let y: Vec<f64> = x.iter().map(|v| v + 0.1 * normal(&mut rng)).collect();
        let cfg = MfpConfig {
            protected_features: ["z".to_string()].into(),
            ..MfpConfig::default()
        };
        let m = fit_mfp(&data(vec![("x", x), ("z", z)], y), &cfg).unwrap();
        assert!(m.term("z").unwrap().is_included());
    }

    #[test]
    fn training_row_prediction_is_fitted_value() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x: Vec<f64> = (0..80).map(|_| rng.random_range(0.5..3.0)).collect();
        let y: Vec<f64> = x.iter().map(|v| v.ln() + 0.05 * normal(&mut rng)).collect();
        let m = fit_mfp(&data(vec![("x", x.clone())], y.clone()), &MfpConfig::default()).unwrap();
        let fitted = m.fit.fitted_values(&y);
        for i in [0, 17, 79] {
            let row: BTreeMap<String, f64> = [("x".to_string(), x[i])].into();
            let p = m.predict(&row, 0.9).unwrap();
            assert!((p.value - fitted[i]).abs() < 1e-12);
            assert!(((p.high - p.value) - (p.value - p.low)).abs() < 1e-12);
            assert!(p.out_of_domain.is_empty());
        }
    }

    #[test]
    fn missing_feature_and_bad_level() {
        let x: Vec<f64> = (1..=20).map(f64::from).collect();
        let y: Vec<f64> = x.iter().map(|v| 2.0 * v + (v * 3.0).cos()).collect();
        let m = fit_mfp(&data(vec![("x", x)], y), &MfpConfig::default()).unwrap();
        let empty = BTreeMap::new();
        assert!(matches!(m.predict(&empty, 0.9), Err(Error::MissingFeature(_))));
        let row: BTreeMap<String, f64> = [("x".to_string(), 3.0)].into();
        assert!(matches!(m.predict(&row, 1.5), Err(Error::InvalidLevel(_))));
    }

    #[test]
    fn too_few_rows() {
        let m = fit_mfp(
            &data(vec![("a", vec![1.0, 2.0, 3.0]), ("b", vec![3.0, 1.0, 2.0])], vec![1.0, 2.0, 4.0]),
            &MfpConfig::default(),
        );
        assert!(matches!(m, Err(Error::InsufficientData { .. })));
    }

    #[test]
    fn converged_transforms_are_stable() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let a: Vec<f64> = (0..150).map(|_| rng.random_range(0.5..4.0)).collect();
        let b: Vec<f64> = (0..150).map(|_| rng.random_range(0.5..4.0)).collect();
        let y: Vec<f64> = a
            .iter()
            .zip(&b)
            .map(|(a, b)| a.powi(2) + 2.0 * b.ln() + 0.05 * normal(&mut rng))
            .collect();
        let cfg = MfpConfig {
            protected_features: ["a".to_string(), "b".to_string()].into(),
            ..MfpConfig::default()
        };
        let m = fit_mfp(&data(vec![("a", a.clone()), ("b", b.clone())], y.clone()), &cfg).unwrap();
        let cands: Vec<Candidate> = [("a", &a), ("b", &b)]
            .iter()
            .map(|(n, x)| Candidate {
                name: n.to_string(),
                x,
                prep: shift_and_scale(x).unwrap(),
            })
            .collect();
        let current: Vec<Transform> = m
            .terms
            .iter()
            .map(|(_, t)| match t {
                Term::Fp(f) => Transform::Fp(f.powers.clone()),
                _ => Transform::Linear,
            })
            .collect();
        for j in 0..2 {
            assert_eq!(select_transform(j, &cands, &current, &y, &cfg).unwrap(), current[j]);
        }
    }

    #[test]
    fn sequential_and_parallel_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a: Vec<f64> = (0..90).map(|_| rng.random_range(0.5..4.0)).collect();
        let b: Vec<f64> = (0..90).map(|_| rng.random_range(-1.0..1.0)).collect();
        let y: Vec<f64> = a.iter().zip(&b).map(|(a, b)| 1.0 / a + b + 0.1 * normal(&mut rng)).collect();
        let d = data(vec![("a", a), ("b", b)], y);
        let s = fit_mfp(&d, &MfpConfig { exec: Exec::Sequential, ..MfpConfig::default() }).unwrap();
        let p = fit_mfp(&d, &MfpConfig { exec: Exec::Parallel, ..MfpConfig::default() }).unwrap();
        assert_eq!(s, p);
    }
}
