//! Cell cycling logs: data model, the `sohlog v1` text format, reference
//! capacity measurement and segmentation into random-walk phases.
//!
//! Current is signed positive for discharge and negative for charge.
//! Times are seconds; sample times are relative to the step start.

mod capacity;
mod format;
mod phases;

use std::fmt;
use std::str::FromStr;

pub use capacity::{
    adjust_capacity_transient, compute_reference_capacity, reference_measurements, trapezoid,
    ReferenceMeasurement, TransientAdjustment, DEFAULT_THRESHOLD_VOLTAGE,
};
pub use format::{load_cell, parse_cell, write_cell, LogFormat, FORMAT_HEADER};
pub use phases::{segment_phases, RwPhase};

/// Plausibility window for voltage samples, volts.
pub const VOLTAGE_WINDOW: (f64, f64) = (2.0, 5.0);
/// Acceptable operating temperature range, degrees Celsius (open interval).
pub const TEMPERATURE_WINDOW: (f64, f64) = (-20.0, 60.0);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StepType {
    ReferenceCharge,
    ReferenceDischarge,
    RwCharge,
    RwDischarge,
    Rest,
}

impl StepType {
    pub fn as_str(self) -> &'static str {
        match self {
            StepType::ReferenceCharge => "reference_charge",
            StepType::ReferenceDischarge => "reference_discharge",
            StepType::RwCharge => "rw_charge",
            StepType::RwDischarge => "rw_discharge",
            StepType::Rest => "rest",
        }
    }

    pub fn is_rw(self) -> bool {
        matches!(self, StepType::RwCharge | StepType::RwDischarge)
    }

    pub fn is_reference(self) -> bool {
        matches!(self, StepType::ReferenceCharge | StepType::ReferenceDischarge)
    }
}

impl fmt::Display for StepType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for StepType {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Ok(match s {
            "reference_charge" => StepType::ReferenceCharge,
            "reference_discharge" => StepType::ReferenceDischarge,
            "rw_charge" => StepType::RwCharge,
            "rw_discharge" => StepType::RwDischarge,
            "rest" => StepType::Rest,
            other => return Err(format!("unknown step type `{other}`")),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sample {
    /// Seconds since the step start.
    pub t: f64,
    pub voltage: f64,
    pub current: f64,
    pub temperature: f64,
}

/// Plausibility problems found at load time. Flagged records are kept.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepFlag {
    NegativeDuration,
    NonIncreasingTime,
    VoltageOutOfRange,
    TemperatureOutOfRange,
}

impl fmt::Display for StepFlag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StepFlag::NegativeDuration => "negative_duration",
            StepFlag::NonIncreasingTime => "non_increasing_time",
            StepFlag::VoltageOutOfRange => "voltage_out_of_range",
            StepFlag::TemperatureOutOfRange => "temperature_out_of_range",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub step_type: StepType,
    pub t_start: f64,
    pub t_end: f64,
    /// Protocol set current, amperes.
    pub nominal_current: f64,
    /// Protocol step duration, seconds; 0 when the protocol has none.
    pub default_duration: f64,
    pub samples: Vec<Sample>,
    pub flags: Vec<StepFlag>,
}

impl StepRecord {
    pub fn new(
        step_type: StepType,
        t_start: f64,
        t_end: f64,
        nominal_current: f64,
        default_duration: f64,
        samples: Vec<Sample>,
    ) -> Self {
        let mut s = StepRecord {
            step_type,
            t_start,
            t_end,
            nominal_current,
            default_duration,
            samples,
            flags: Vec::new(),
        };
        s.flags = s.plausibility_flags();
        s
    }

    fn plausibility_flags(&self) -> Vec<StepFlag> {
        let mut flags = Vec::new();
        if self.t_end < self.t_start {
            flags.push(StepFlag::NegativeDuration);
        }
        if self.samples.windows(2).any(|w| !(w[1].t > w[0].t)) {
            flags.push(StepFlag::NonIncreasingTime);
        }
        let (vlo, vhi) = VOLTAGE_WINDOW;
        if self
            .samples
            .iter()
            .any(|s| !(s.voltage >= vlo && s.voltage <= vhi))
        {
            flags.push(StepFlag::VoltageOutOfRange);
        }
        let (tlo, thi) = TEMPERATURE_WINDOW;
        if self
            .samples
            .iter()
            .any(|s| !(s.temperature > tlo && s.temperature < thi))
        {
            flags.push(StepFlag::TemperatureOutOfRange);
        }
        flags
    }

    pub fn duration_s(&self) -> f64 {
        self.t_end - self.t_start
    }

    pub fn duration_h(&self) -> f64 {
        self.duration_s() / 3600.0
    }

    pub fn first_voltage(&self) -> Option<f64> {
        self.samples.first().map(|s| s.voltage)
    }

    pub fn last_voltage(&self) -> Option<f64> {
        self.samples.last().map(|s| s.voltage)
    }

    pub fn min_temperature(&self) -> Option<f64> {
        self.samples.iter().map(|s| s.temperature).reduce(f64::min)
    }

    pub fn max_temperature(&self) -> Option<f64> {
        self.samples.iter().map(|s| s.temperature).reduce(f64::max)
    }

    pub fn mean_temperature(&self) -> Option<f64> {
        mean(self.samples.iter().map(|s| s.temperature))
    }

    pub fn mean_voltage(&self) -> Option<f64> {
        mean(self.samples.iter().map(|s| s.voltage))
    }

    pub fn mean_current(&self) -> Option<f64> {
        mean(self.samples.iter().map(|s| s.current))
    }

    /// Start-minus-end voltage; positive for a discharge.
    pub fn voltage_drop(&self) -> Option<f64> {
        Some(self.first_voltage()? - self.last_voltage()?)
    }

    /// Earliest and latest instants covered by the step, robust to a
    /// negative recorded duration.
    pub fn span(&self) -> (f64, f64) {
        (self.t_start.min(self.t_end), self.t_start.max(self.t_end))
    }
}

fn mean(it: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = it.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| s / n as f64)
}

/// The full step log of one cell.
#[derive(Debug, Clone, PartialEq)]
pub struct CellHistory {
    pub cell_id: String,
    /// Protocol group 1..=4 when known.
    pub group: Option<u8>,
    pub steps: Vec<StepRecord>,
}

impl CellHistory {
    pub fn reference_discharge_indices(&self) -> Vec<usize> {
        self.steps
            .iter()
            .enumerate()
            .filter(|(_, s)| s.step_type == StepType::ReferenceDischarge)
            .map(|(i, _)| i)
            .collect()
    }

    /// First transient-adjusted reference capacity, the cell's anchor
    /// capacity `C(t0)`. `None` when the first reference was not sampled.
    pub fn nominal_capacity(&self) -> Option<f64> {
        let first = self.reference_discharge_indices().into_iter().next()?;
        reference_measurements(self)
            .into_iter()
            .find(|m| m.step_index == first)
            .and_then(|m| m.adjusted)
    }

    pub fn flagged_steps(&self) -> usize {
        self.steps.iter().filter(|s| !s.flags.is_empty()).count()
    }
}
