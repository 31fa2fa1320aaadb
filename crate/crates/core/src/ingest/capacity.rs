//! Reference capacity by coulomb counting, with a correction for reference
//! discharges that start below the full-charge voltage.

use super::{CellHistory, StepRecord, StepType};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::pchip::MonotoneCubic;

pub const DEFAULT_THRESHOLD_VOLTAGE: f64 = 4.2;
/// Starting voltages within this distance of the threshold need no correction.
const THRESHOLD_TOLERANCE: f64 = 1e-3;
const MIN_PREFIX: usize = 4;
/// Extrapolated start offsets above this fraction of the step duration are flagged.
const LARGE_CORRECTION_FRACTION: f64 = 0.10;

/// Trapezoidal integral of sampled `y` over `t`.
pub fn trapezoid(t: &[f64], y: &[f64]) -> Result<f64> {
    if t.len() != y.len() {
        return Err(Error::LengthMismatch {
            left: t.len(),
            right: y.len(),
        });
    }
    if t.len() < 2 {
        return Err(Error::TooFewSamples {
            needed: 2,
            got: t.len(),
        });
    }
    Ok(t.windows(2)
        .zip(y.windows(2))
        .map(|(tw, yw)| 0.5 * (tw[1] - tw[0]) * (yw[0] + yw[1]))
        .sum())
}

fn require_reference(step: &StepRecord) -> Result<()> {
    if step.step_type != StepType::ReferenceDischarge {
        return Err(Error::Validation(format!(
            "expected a reference_discharge step, got {}",
            step.step_type
        )));
    }
    Ok(())
}

/// Discharged charge of a reference discharge, ampere-hours.
pub fn compute_reference_capacity(step: &StepRecord) -> Result<f64> {
    require_reference(step)?;
    let t: Vec<f64> = step.samples.iter().map(|s| s.t).collect();
    let i: Vec<f64> = step.samples.iter().map(|s| s.current).collect();
    Ok((trapezoid(&t, &i)? / 3600.0).abs())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransientAdjustment {
    pub raw: f64,
    pub adjusted: f64,
    /// Added charge, ampere-hours; never negative.
    pub correction: f64,
    /// Extrapolated extra discharge time, hours.
    pub delta_tau_h: f64,
    /// The extrapolation exceeded 10% of the observed discharge duration.
    pub large: bool,
}

/// Extends a reference discharge back to the threshold voltage.
///
/// Time is interpolated as a monotone cubic function of voltage over the
/// initial strictly decreasing part of the voltage curve and extrapolated
/// linearly past the first sample; the extra time multiplied by the
/// discharge current is added to the coulomb-counted capacity.
pub fn adjust_capacity_transient(step: &StepRecord, threshold: f64) -> Result<TransientAdjustment> {
    let raw = compute_reference_capacity(step)?;
    let unchanged = TransientAdjustment {
        raw,
        adjusted: raw,
        correction: 0.0,
        delta_tau_h: 0.0,
        large: false,
    };
    let v0 = step.samples[0].voltage;
    if v0 >= threshold - THRESHOLD_TOLERANCE {
        return Ok(unchanged);
    }
    let prefix_len = 1 + step
        .samples
        .windows(2)
        .take_while(|w| w[1].voltage < w[0].voltage)
        .count();
    if prefix_len < MIN_PREFIX {
        return Err(Error::NonMonotonicPrefix { needed: MIN_PREFIX });
    }
    let prefix = &step.samples[..prefix_len];
    // abscissa must increase: walk the prefix backwards
    let v: Vec<f64> = prefix.iter().rev().map(|s| s.voltage).collect();
    let t: Vec<f64> = prefix.iter().rev().map(|s| s.t / 3600.0).collect();
    let spline = MonotoneCubic::new(&v, &t)?;
    let t0 = prefix[0].t / 3600.0;
    let mut delta_tau = t0 - spline.eval(threshold);
    if !(delta_tau > 0.0) {
        // end slope clipped to zero: fall back to the first segment's secant
        let secant = (prefix[1].t - prefix[0].t) / 3600.0 / (prefix[1].voltage - prefix[0].voltage);
        delta_tau = -secant * (threshold - v0);
    }
    let current = if step.nominal_current > 0.0 {
        step.nominal_current
    } else {
        prefix.iter().map(|s| s.current.abs()).sum::<f64>() / prefix.len() as f64
    };
    let correction = (current * delta_tau).max(0.0);
    let observed_h = (step.samples[step.samples.len() - 1].t - step.samples[0].t) / 3600.0;
    Ok(TransientAdjustment {
        raw,
        adjusted: raw + correction,
        correction,
        delta_tau_h: delta_tau,
        large: delta_tau > LARGE_CORRECTION_FRACTION * observed_h,
    })
}

/// Capacity measurement at one reference discharge of a history.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceMeasurement {
    /// Position among the reference discharges (0 = first).
    pub ordinal: usize,
    pub step_index: usize,
    pub t_start: f64,
    pub raw: Option<f64>,
    /// Transient-adjusted capacity; `None` when the step was not sampled.
    pub adjusted: Option<f64>,
    /// Start-minus-end voltage of the discharge.
    pub voltage_drop: Option<f64>,
    pub large_correction: bool,
}

/// Measures every reference discharge of a history. Unsampled references
/// yield `None` capacities; a missing decreasing prefix falls back to the
/// raw capacity with a warning.
pub fn reference_measurements(history: &CellHistory) -> Vec<ReferenceMeasurement> {
    let idx = history.reference_discharge_indices();
    Exec::default().map_range(idx.len(), |ordinal| {
        let step_index = idx[ordinal];
        let step = &history.steps[step_index];
        let raw = compute_reference_capacity(step).ok();
        let (adjusted, large) = match adjust_capacity_transient(step, DEFAULT_THRESHOLD_VOLTAGE) {
            Ok(a) => (Some(a.adjusted), a.large),
            Err(e) => {
                if raw.is_some() {
                    log::warn!(
                        "{}: reference {ordinal} not adjusted ({e}); using raw capacity",
                        history.cell_id
                    );
                }
                (raw, false)
            }
        };
        if large {
            log::warn!(
                "{}: reference {ordinal} transient correction exceeds 10% of its duration",
                history.cell_id
            );
        }
        ReferenceMeasurement {
            ordinal,
            step_index,
            t_start: step.t_start,
            raw,
            adjusted,
            voltage_drop: step.voltage_drop(),
            large_correction: large,
        }
    })
}
