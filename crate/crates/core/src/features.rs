//! Per-phase regression features and the capacity-fade target.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{RwPhase, StepRecord};
use crate::prelim::{mean_step_capacity, step_current, PrelimModel};

/// Rest times at or above this many hours do not enter the variance constant.
pub const REST_VARIANCE_CUTOFF_H: f64 = 20.0;
/// A discharge shorter than `(1 - SHORT_STEP_TOLERANCE)` of its protocol
/// duration counts as cut short.
pub const SHORT_STEP_TOLERANCE: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureName {
    TMinAvg,
    TMaxAvg,
    IAvg,
    DeltaT,
    Lambda,
    DeltaTRest,
    VInAvg,
    DvAvg,
    CPrev,
    CApprox,
}

impl FeatureName {
    pub const ALL: [FeatureName; 10] = [
        FeatureName::TMinAvg,
        FeatureName::TMaxAvg,
        FeatureName::IAvg,
        FeatureName::DeltaT,
        FeatureName::Lambda,
        FeatureName::DeltaTRest,
        FeatureName::VInAvg,
        FeatureName::DvAvg,
        FeatureName::CPrev,
        FeatureName::CApprox,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            FeatureName::TMinAvg => "t_min_avg",
            FeatureName::TMaxAvg => "t_max_avg",
            FeatureName::IAvg => "i_avg",
            FeatureName::DeltaT => "delta_t",
            FeatureName::Lambda => "lambda",
            FeatureName::DeltaTRest => "delta_t_rest",
            FeatureName::VInAvg => "v_in_avg",
            FeatureName::DvAvg => "dv_avg",
            FeatureName::CPrev => "c_prev",
            FeatureName::CApprox => "c_approx",
        }
    }
}

impl fmt::Display for FeatureName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FeatureName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        FeatureName::ALL
            .into_iter()
            .find(|n| n.as_str() == s)
            .ok_or_else(|| Error::MissingFeature(s.to_string()))
    }
}

/// Candidate feature pools of the three model scenarios.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// Operating conditions only.
    A,
    /// Adds the preliminary-model capacity estimate.
    B,
    /// Adds the previously observed capacity as well.
    C,
}

impl Variant {
    pub fn candidates(self) -> &'static [FeatureName] {
        match self {
            Variant::A => &FeatureName::ALL[..8],
            Variant::B => &[
                FeatureName::TMinAvg,
                FeatureName::TMaxAvg,
                FeatureName::IAvg,
                FeatureName::DeltaT,
                FeatureName::Lambda,
                FeatureName::DeltaTRest,
                FeatureName::VInAvg,
                FeatureName::DvAvg,
                FeatureName::CApprox,
            ],
            Variant::C => &FeatureName::ALL,
        }
    }

    pub fn uses_prelim(self) -> bool {
        self != Variant::A
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::A => "a",
            Variant::B => "b",
            Variant::C => "c",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "a" => Ok(Variant::A),
            "b" => Ok(Variant::B),
            "c" => Ok(Variant::C),
            _ => Err(format!("unknown variant `{s}` (expected a, b or c)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CurrentSource {
    /// Protocol set current of each step.
    #[default]
    Nominal,
    /// Mean of the sampled current.
    SampledMean,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureFlag {
    /// The rest time was negative and clamped to zero.
    NegativeRestTime,
    /// Some rough step capacities were negative and clamped to zero.
    ClampedApprox(usize),
}

impl fmt::Display for FeatureFlag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FeatureFlag::NegativeRestTime => f.write_str("negative_rest_time"),
            FeatureFlag::ClampedApprox(n) => write!(f, "clamped_approx={n}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    /// Ordinal of the closing reference discharge.
    pub cycle_index: usize,
    pub t_min_avg: f64,
    pub t_max_avg: f64,
    pub i_avg: f64,
    /// Hours.
    pub delta_t: f64,
    pub lambda: f64,
    pub delta_t_rest: f64,
    pub v_in_avg: f64,
    pub dv_avg: f64,
    pub c_prev: Option<f64>,
    pub c_approx: Option<f64>,
    /// Capacity fade at the closing reference; training rows only.
    pub target: Option<f64>,
    /// Rest time before the closing reference cycle, hours (after clamping).
    pub rest_time_h: f64,
    pub flags: Vec<FeatureFlag>,
}

impl FeatureVector {
    pub fn get(&self, name: FeatureName) -> Option<f64> {
        Some(match name {
            FeatureName::TMinAvg => self.t_min_avg,
            FeatureName::TMaxAvg => self.t_max_avg,
            FeatureName::IAvg => self.i_avg,
            FeatureName::DeltaT => self.delta_t,
            FeatureName::Lambda => self.lambda,
            FeatureName::DeltaTRest => self.delta_t_rest,
            FeatureName::VInAvg => self.v_in_avg,
            FeatureName::DvAvg => self.dv_avg,
            FeatureName::CPrev => return self.c_prev,
            FeatureName::CApprox => return self.c_approx,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RestVarianceConstant {
    /// Hours squared.
    pub sigma2: f64,
    pub n_used: usize,
}

/// Sample variance of the rest times below the cutoff.
pub fn compute_rest_variance(rest_times_h: &[f64]) -> Result<RestVarianceConstant> {
    let used: Vec<f64> = rest_times_h
        .iter()
        .copied()
        .filter(|t| *t < REST_VARIANCE_CUTOFF_H)
        .collect();
    if used.len() < 2 {
        return Err(Error::InsufficientObservations {
            needed: 2,
            got: used.len(),
        });
    }
    let n = used.len() as f64;
    let mean = used.iter().sum::<f64>() / n;
    let sigma2 = used.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / (n - 1.0);
    if !(sigma2 > 0.0) {
        return Err(Error::Validation("rest times below 20 h have zero variance".into()));
    }
    Ok(RestVarianceConstant {
        sigma2,
        n_used: used.len(),
    })
}

/// Logistic saturation of the rest time.
pub fn rest_saturation(t_rest_h: f64, sigma2: f64) -> f64 {
    1.0 / (1.0 + (-0.25 * t_rest_h / sigma2).exp())
}

pub fn build_target(nominal_capacity: f64, observed_capacity: f64) -> f64 {
    nominal_capacity - observed_capacity
}

#[derive(Debug, Clone, Copy, Default)]
pub struct FeatureOptions {
    pub current_source: CurrentSource,
}

fn mean(v: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| s / n as f64)
}

fn current_of(step: &StepRecord, source: CurrentSource) -> Option<f64> {
    match source {
        CurrentSource::Nominal => step_current(step),
        CurrentSource::SampledMean => step.mean_current().map(f64::abs),
    }
}

/// Features of one phase. `prelim` supplies the rough capacity model and
/// is required for the capacity estimate to be present.
pub fn extract_features(
    phase: &RwPhase<'_>,
    prev_capacity: Option<f64>,
    rest_var: &RestVarianceConstant,
    prelim: Option<&PrelimModel>,
    options: FeatureOptions,
) -> Result<FeatureVector> {
    if phase.m() == 0 {
        return Err(Error::EmptyPhase(phase.index));
    }
    if !(rest_var.sigma2 > 0.0) {
        return Err(Error::Validation("rest variance constant must be positive".into()));
    }
    let dis = &phase.discharge_steps;
    let sampled = || dis.iter().filter(|s| !s.samples.is_empty());
    let missing = || Error::InsufficientData {
        what: format!("sampled discharge steps in phase {}", phase.index),
        needed: 1,
        got: 0,
    };
    let mut flags = Vec::new();

    let t_min_avg = mean(sampled().filter_map(|s| s.min_temperature())).ok_or_else(missing)?;
    let t_max_avg = mean(sampled().filter_map(|s| s.max_temperature())).ok_or_else(missing)?;
    let i_avg = mean(dis.iter().filter_map(|s| current_of(s, options.current_source)))
        .ok_or_else(|| Error::MissingFeature(FeatureName::IAvg.to_string()))?;
    let delta_t = dis
        .iter()
        .chain(&phase.charge_steps)
        .map(|s| s.duration_h())
        .sum();
    let short = dis
        .iter()
        .filter(|s| s.default_duration > 0.0 && s.duration_s() < s.default_duration * (1.0 - SHORT_STEP_TOLERANCE))
        .count();
    let lambda = short as f64 / dis.len() as f64;
    let mut rest = phase.rest_time_h().unwrap_or(0.0);
    if rest < 0.0 {
        log::warn!("phase {}: negative rest time {rest:.4} h clamped to 0", phase.index);
        flags.push(FeatureFlag::NegativeRestTime);
        rest = 0.0;
    }
    let v_in_avg = mean(sampled().filter_map(|s| s.first_voltage())).ok_or_else(missing)?;
    let dv_avg = mean(sampled().filter_map(|s| Some(s.last_voltage()? - s.first_voltage()?)))
        .ok_or_else(missing)?;
    let c_approx = match prelim {
        Some(model) => {
            let a = phase
                .previous_reference
                .voltage_drop()
                .filter(|d| *d > 0.0)
                .unwrap_or(model.fallback_drop);
            mean_step_capacity(model, dis, a).map(|(c, clamped)| {
                if clamped > 0 {
                    flags.push(FeatureFlag::ClampedApprox(clamped));
                }
                c
            })
        }
        None => None,
    };
    Ok(FeatureVector {
        cycle_index: phase.closing_ordinal,
        t_min_avg,
        t_max_avg,
        i_avg,
        delta_t,
        lambda,
        delta_t_rest: rest_saturation(rest, rest_var.sigma2),
        v_in_avg,
        dv_avg,
        c_prev: prev_capacity,
        c_approx,
        target: None,
        rest_time_h: rest,
        flags,
    })
}

/// Writes feature rows as CSV: a cycle column, the ten features in
/// canonical order, then the target. Missing values are empty cells.
pub fn write_feature_table<W: Write>(rows: &[FeatureVector], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let mut header = vec!["cycle".to_string()];
    header.extend(FeatureName::ALL.iter().map(|n| n.to_string()));
    header.push("target".into());
    out.write_record(&header).map_err(csv_err)?;
    let cell = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in rows {
        let mut rec = vec![r.cycle_index.to_string()];
        rec.extend(FeatureName::ALL.iter().map(|&n| cell(r.get(n))));
        rec.push(cell(r.target));
        out.write_record(&rec).map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}

pub(crate) fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Validation(format!("csv: {other:?}")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{segment_phases, CellHistory, Sample, StepType};

    fn step(ty: StepType, t0: f64, dur: f64, default: f64, temps: (f64, f64), volts: (f64, f64), cur: f64) -> StepRecord {
        let s = |t: f64, v: f64, temp: f64| Sample {
            t,
            voltage: v,
            current: cur,
            temperature: temp,
        };
        StepRecord::new(
            ty,
            t0,
            t0 + dur,
            cur,
            default,
            vec![s(0.0, volts.0, temps.0), s(dur, volts.1, temps.1)],
        )
    }

    fn reference(t0: f64) -> StepRecord {
        step(StepType::ReferenceDischarge, t0, 7200.0, 0.0, (25.0, 30.0), (4.2, 3.2), 1.0)
    }

    /// Two discharges and one charge, then `rest` seconds before the closing reference.
    fn history(durations: (f64, f64), rest: f64) -> CellHistory {
        let d1 = step(StepType::RwDischarge, 8000.0, durations.0, 300.0, (20.0, 30.0), (4.0, 3.9), 1.5);
        let c = step(StepType::RwCharge, 8400.0, 300.0, 300.0, (25.0, 26.0), (3.9, 4.0), -1.5);
        let d2 = step(StepType::RwDischarge, 8800.0, durations.1, 300.0, (22.0, 34.0), (3.8, 3.5), 3.0);
        let end = 8800.0 + durations.1;
        CellHistory {
            cell_id: "f".into(),
            group: Some(3),
            steps: vec![reference(0.0), d1, c, d2, reference(end + rest)],
        }
    }

    const UNIT: RestVarianceConstant = RestVarianceConstant { sigma2: 1.0, n_used: 2 };

    #[test]
    fn averages_over_discharge_steps() {
        let h = history((300.0, 300.0), 3600.0);
        let p = segment_phases(&h).unwrap();
        let f = extract_features(&p[0], Some(2.0), &UNIT, None, FeatureOptions::default()).unwrap();
        assert_eq!(f.t_min_avg, 21.0);
        assert_eq!(f.t_max_avg, 32.0);
        assert_eq!(f.i_avg, 2.25);
        assert!((f.delta_t - 900.0 / 3600.0).abs() < 1e-15);
        assert!((f.v_in_avg - 3.9).abs() < 1e-15);
        assert!((f.dv_avg - (-0.2)).abs() < 1e-15);
        assert_eq!(f.lambda, 0.0);
        assert!((f.rest_time_h - 1.0).abs() < 1e-15);
        assert_eq!(f.c_prev, Some(2.0));
        assert_eq!(f.c_approx, None);
        assert_eq!(f.cycle_index, 1);
    }

    #[test]
    fn lambda_bounds() {
        let h = history((100.0, 250.0), 60.0);
        let p = segment_phases(&h).unwrap();
        let f = extract_features(&p[0], None, &UNIT, None, FeatureOptions::default()).unwrap();
        assert_eq!(f.lambda, 1.0);
        // within the 1% tolerance counts as full length
        let h = history((298.0, 100.0), 60.0);
        let p = segment_phases(&h).unwrap();
        let f = extract_features(&p[0], None, &UNIT, None, FeatureOptions::default()).unwrap();
        assert_eq!(f.lambda, 0.5);
    }

    #[test]
    fn rest_saturation_values() {
        assert_eq!(rest_saturation(0.0, 1.0), 0.5);
        assert!((rest_saturation(4.0, 1.0) - 1.0 / (1.0 + (-1.0f64).exp())).abs() < 1e-15);
        assert!((rest_saturation(4.0, 1.0) - 0.7311).abs() < 1e-4);
        let mut prev = 0.0;
        for k in 0..100 {
            let v = rest_saturation(k as f64 * 0.3, 2.5);
            assert!(v > prev && v < 1.0);
            prev = v;
        }
    }

    #[test]
    fn zero_rest_gives_half() {
        let h = history((300.0, 300.0), 0.0);
        let p = segment_phases(&h).unwrap();
        let f = extract_features(&p[0], None, &UNIT, None, FeatureOptions::default()).unwrap();
        assert_eq!(f.delta_t_rest, 0.5);
    }

    #[test]
    fn rest_variance() {
        assert_eq!(compute_rest_variance(&[1.0, 3.0]).unwrap().sigma2, 2.0);
        let r = compute_rest_variance(&[1.0, 3.0, 25.0]).unwrap();
        assert_eq!((r.sigma2, r.n_used), (2.0, 2));
        assert!(matches!(
            compute_rest_variance(&[20.0, 30.0]),
            Err(Error::InsufficientObservations { .. })
        ));
    }

    #[test]
    fn targets() {
        assert_eq!(build_target(2.1, 2.1), 0.0);
        assert!((build_target(2.1, 1.68) - 0.42).abs() < 1e-15);
        assert!((build_target(2.1, 1.68) - 0.2 * 2.1).abs() < 1e-15);
        assert!(build_target(2.0, 2.05) < 0.0);
    }

    #[test]
    fn empty_phase() {
        let h = CellHistory {
            cell_id: "e".into(),
            group: None,
            steps: vec![reference(0.0), reference(10000.0)],
        };
        let p = segment_phases(&h).unwrap();
        assert!(matches!(
            extract_features(&p[0], None, &UNIT, None, FeatureOptions::default()),
            Err(Error::EmptyPhase(0))
        ));
    }

    #[test]
    fn pure_and_lambda_ignores_charges() {
        let h = history((100.0, 300.0), 60.0);
        let p = segment_phases(&h).unwrap();
        let a = extract_features(&p[0], None, &UNIT, None, FeatureOptions::default()).unwrap();
        let b = extract_features(&p[0], None, &UNIT, None, FeatureOptions::default()).unwrap();
        assert_eq!(a, b);
        let mut h2 = h.clone();
        h2.steps[2].t_end = h2.steps[2].t_start + 10.0;
        let p2 = segment_phases(&h2).unwrap();
        let c = extract_features(&p2[0], None, &UNIT, None, FeatureOptions::default()).unwrap();
        assert_eq!(a.lambda, c.lambda);
    }

    #[test]
    fn table_layout() {
        let h = history((300.0, 300.0), 3600.0);
        let p = segment_phases(&h).unwrap();
        let mut f = extract_features(&p[0], None, &UNIT, None, FeatureOptions::default()).unwrap();
        f.target = Some(0.1);
        let mut buf = Vec::new();
        write_feature_table(&[f], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "cycle,t_min_avg,t_max_avg,i_avg,delta_t,lambda,delta_t_rest,v_in_avg,dv_avg,c_prev,c_approx,target"
        );
        let cells: Vec<&str> = lines.next().unwrap().split(',').collect();
        assert_eq!(cells.len(), 12);
        assert_eq!((cells[9], cells[10], cells[11]), ("", "", "0.1"));
    }

    #[test]
    fn variant_pools() {
        assert_eq!(Variant::A.candidates().len(), 8);
        assert!(!Variant::B.candidates().contains(&FeatureName::CPrev));
        assert!(Variant::B.candidates().contains(&FeatureName::CApprox));
        assert_eq!(Variant::C.candidates().len(), 10);
        for n in FeatureName::ALL {
            assert_eq!(n.as_str().parse::<FeatureName>().unwrap(), n);
        }
    }
}
