//! Seeded synthetic cycling logs following the four random-walk protocols.
//!
//! The cell model is deliberately simple: a linear open-circuit voltage
//! between 3.2 V (empty) and 4.2 V (full), an ohmic drop that grows with
//! permanent capacity loss, first-order heating, permanent fade proportional
//! to charge throughput and stress, and a recoverable loss that relaxes
//! during rests.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::ingest::{CellHistory, Sample, StepRecord, StepType};

pub const RW_CURRENTS: [f64; 6] = [0.75, 1.5, 2.25, 3.0, 3.75, 4.5];
const V_EMPTY: f64 = 3.2;
const V_FULL: f64 = 4.2;
const REFERENCE_CHARGE_CURRENT: f64 = 2.0;
const REFERENCE_DISCHARGE_CURRENT: f64 = 1.0;
/// Steps that would hit a voltage limit sooner than this are redrawn.
const MIN_STEP_S: f64 = 30.0;
const THERMAL_TAU_S: f64 = 600.0;
/// Steady-state temperature rise per watt of ohmic heating, kelvin.
const HEATING_K_PER_W: f64 = 28.0;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub group: u8,
    pub n_phases: usize,
    pub seed: u64,
    pub cell_id: String,
    /// Fresh capacity before cell-to-cell variation, Ah.
    pub capacity: f64,
    /// Permanent fade per ampere-hour of throughput at reference stress.
    pub fade_per_ah: f64,
    /// Recoverable loss gained per ampere-hour, and its ceiling.
    pub recoverable_per_ah: f64,
    pub recoverable_max: f64,
    /// Relaxation time of the recoverable loss during rests, hours.
    pub recovery_tau_h: f64,
    pub resistance: f64,
    pub ambient: f64,
    pub sample_interval_s: f64,
    /// Number of prolonged rests placed in the second half of the test.
    pub long_rests: usize,
}

impl SynthConfig {
    pub fn new(group: u8, n_phases: usize, seed: u64) -> Result<Self> {
        let fade_per_ah = match group {
            1 => 1.5e-4,
            2 => 1.2e-3,
            3 => 5.0e-5,
            4 => 4.0e-3,
            g => return Err(Error::InvalidGroup(g)),
        };
        Ok(SynthConfig {
            group,
            n_phases,
            seed,
            cell_id: format!("synth-g{group}-s{seed}"),
            capacity: 2.1,
            fade_per_ah,
            recoverable_per_ah: 4.0 * fade_per_ah,
            recoverable_max: 0.04,
            recovery_tau_h: 8.0,
            resistance: 0.03,
            ambient: 25.0,
            sample_interval_s: 150.0,
            long_rests: 2,
        })
    }
}

/// RW steps between consecutive reference discharges.
pub fn rw_steps_per_phase(group: u8) -> Result<usize> {
    match group {
        1 | 2 | 4 => Ok(50),
        3 => Ok(1500),
        g => Err(Error::InvalidGroup(g)),
    }
}

/// Protocol duration of RW discharges, seconds; 0 when there is none.
pub fn default_duration(group: u8) -> f64 {
    match group {
        2 | 3 => 300.0,
        4 => 60.0,
        _ => 0.0,
    }
}

fn round_to(v: f64, decimals: i32) -> f64 {
    let k = 10f64.powi(decimals);
    (v * k).round() / k
}

/// Whole deciseconds, so absolute and relative times stay exact decimals.
fn to_ds(seconds: f64) -> i64 {
    (seconds * 10.0).round() as i64
}

fn ds_to_s(ds: i64) -> f64 {
    ds as f64 / 10.0
}

struct Cell {
    rng: ChaCha8Rng,
    c0: f64,
    c_perm: f64,
    recoverable: f64,
    q: f64,
    r0: f64,
    temp: f64,
    t_ds: i64,
    fade_per_ah: f64,
    cfg: SynthConfig,
    noise: Normal<f64>,
}

impl Cell {
    fn new(cfg: &SynthConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let noise = Normal::new(0.0, 1.0).expect("unit normal");
        let c0 = cfg.capacity * (1.0 + 0.01 * noise.sample(&mut rng));
        let fade_per_ah = cfg.fade_per_ah * (1.0 + 0.08 * noise.sample(&mut rng)).max(0.5);
        let r0 = cfg.resistance * (1.0 + 0.05 * noise.sample(&mut rng));
        Cell {
            rng,
            c0,
            c_perm: c0,
            recoverable: 0.0,
            q: 0.5 * c0,
            r0,
            temp: cfg.ambient,
            t_ds: 0,
            fade_per_ah,
            cfg: cfg.clone(),
            noise,
        }
    }

    fn capacity(&self) -> f64 {
        self.c_perm - self.recoverable
    }

    fn resistance(&self) -> f64 {
        self.r0 * (1.0 + 2.0 * (self.c0 - self.c_perm) / self.c0)
    }

    /// Seconds until the voltage limit at signed current `i` (positive discharges).
    fn time_to_limit(&self, i: f64) -> f64 {
        let cap = self.capacity();
        let r = self.resistance();
        let hours = if i > 0.0 {
            (self.q - i * r * cap) / i
        } else {
            (cap * (1.0 + i * r) - self.q) / -i
        };
        3600.0 * hours.max(0.0)
    }

    fn voltage(&self, q: f64, i: f64) -> f64 {
        (V_EMPTY + q / self.capacity() - i * self.resistance()).clamp(V_EMPTY, V_FULL)
    }

    fn steady_temp(&self, i: f64) -> f64 {
        self.cfg.ambient + HEATING_K_PER_W * i * i * self.resistance()
    }

    fn relax(&mut self, seconds: f64) {
        let f = (-seconds / THERMAL_TAU_S).exp();
        self.temp = self.cfg.ambient + (self.temp - self.cfg.ambient) * f;
        self.recoverable *= (-seconds / 3600.0 / self.cfg.recovery_tau_h).exp();
    }

    fn degrade(&mut self, i: f64, seconds: f64) {
        let ah = i.abs() * seconds / 3600.0;
        let stress = (1.0 + 0.15 * (i.abs() - 2.0)).max(0.3) * ((self.temp - 25.0) / 20.0).exp();
        self.c_perm -= self.fade_per_ah * ah * stress;
        let room = (1.0 - self.recoverable / self.cfg.recoverable_max).max(0.0);
        self.recoverable += self.cfg.recoverable_per_ah * ah * room;
        self.q = self.q.min(self.capacity());
    }

    fn gap(&mut self, seconds: f64) {
        let ds = to_ds(seconds);
        self.relax(ds_to_s(ds));
        self.t_ds += ds;
    }

    /// Constant-current step of at most `max_s` seconds (or to the voltage limit).
    fn cc_step(
        &mut self,
        ty: StepType,
        i: f64,
        max_s: Option<f64>,
        interval: f64,
        default: f64,
    ) -> StepRecord {
        let limit = self.time_to_limit(i);
        let dur_ds = to_ds(max_s.map_or(limit, |m| m.min(limit))).max(10);
        let dur = ds_to_s(dur_ds);
        let t_ss = self.steady_temp(i);
        let (q0, temp0) = (self.q, self.temp);
        let interval_ds = to_ds(interval).max(1);
        let mut times: Vec<i64> = (0..dur_ds).step_by(interval_ds as usize).collect();
        times.push(dur_ds);
        let samples = times
            .into_iter()
            .map(|ds| {
                let t = ds_to_s(ds);
                let q = q0 - i * t / 3600.0;
                Sample {
                    t,
                    voltage: round_to(self.voltage(q, i), 4),
                    current: i,
                    temperature: round_to(t_ss + (temp0 - t_ss) * (-t / THERMAL_TAU_S).exp(), 2),
                }
            })
            .collect();
        self.q = (q0 - i * dur / 3600.0).clamp(0.0, self.capacity());
        self.temp = t_ss + (temp0 - t_ss) * (-dur / THERMAL_TAU_S).exp();
        self.degrade(i, dur);
        let t0 = self.t_ds;
        self.t_ds += dur_ds;
        StepRecord::new(ty, ds_to_s(t0), ds_to_s(self.t_ds), i.abs(), default, samples)
    }

    fn rest(&mut self, hours: f64) -> StepRecord {
        let ds = to_ds(hours * 3600.0).max(10);
        let t0 = self.t_ds;
        let v = round_to(self.voltage(self.q, 0.0), 4);
        let first = Sample {
            t: 0.0,
            voltage: v,
            current: 0.0,
            temperature: round_to(self.temp, 2),
        };
        self.relax(ds_to_s(ds));
        self.t_ds += ds;
        let last = Sample {
            t: ds_to_s(ds),
            voltage: v,
            current: 0.0,
            temperature: round_to(self.temp, 2),
        };
        StepRecord::new(StepType::Rest, ds_to_s(t0), ds_to_s(self.t_ds), 0.0, 0.0, vec![first, last])
    }

    /// Full charge at 2 A then a constant-voltage tail; ends full.
    fn reference_charge(&mut self) -> StepRecord {
        let i = -REFERENCE_CHARGE_CURRENT;
        let cc_s = self.time_to_limit(i);
        let cv_s = 900.0;
        let dur_ds = to_ds(cc_s + cv_s);
        let dur = ds_to_s(dur_ds);
        let q0 = self.q;
        let mut times: Vec<i64> = (0..dur_ds).step_by(6000).collect();
        times.push(dur_ds);
        let samples = times
            .into_iter()
            .map(|ds| {
                let t = ds_to_s(ds);
                let (v, cur) = if t <= cc_s {
                    (self.voltage(q0 - i * t / 3600.0, i), i)
                } else {
                    let frac = (t - cc_s) / cv_s;
                    (V_FULL, i + (REFERENCE_CHARGE_CURRENT - 0.01) * frac)
                };
                Sample {
                    t,
                    voltage: round_to(v, 4),
                    current: round_to(cur, 4),
                    temperature: round_to(self.temp, 2),
                }
            })
            .collect();
        self.degrade(i, cc_s);
        self.q = self.capacity();
        let t0 = self.t_ds;
        self.t_ds += dur_ds;
        self.relax(dur);
        StepRecord::new(
            StepType::ReferenceCharge,
            ds_to_s(t0),
            ds_to_s(self.t_ds),
            REFERENCE_CHARGE_CURRENT,
            0.0,
            samples,
        )
    }

    fn reference_discharge(&mut self) -> StepRecord {
        let jitter = 0.002 * self.noise.sample(&mut self.rng);
        let i = REFERENCE_DISCHARGE_CURRENT;
        let limit = self.time_to_limit(i) + jitter * 3600.0;
        self.cc_step(StepType::ReferenceDischarge, i, Some(limit), 60.0, 0.0)
    }

    fn pick_current(&mut self, skewed: bool) -> f64 {
        let k = if skewed {
            // weights 1..=6 favour the higher currents
            let mut u = self.rng.random_range(0..21);
            let mut k = 0;
            while u > k {
                u -= k + 1;
                k += 1;
            }
            k
        } else {
            self.rng.random_range(0..RW_CURRENTS.len())
        };
        RW_CURRENTS[k]
    }

    fn rw_phase(&mut self, group: u8, steps: &mut Vec<StepRecord>, second_half: bool) {
        let n = rw_steps_per_phase(group).expect("validated group");
        let default = default_duration(group);
        let interval = self.cfg.sample_interval_s;
        for k in 0..n {
            if k > 0 {
                let gap = if second_half { self.rng.random_range(1.0..60.0) } else { 1.0 };
                self.gap(gap);
            }
            let step = match group {
                1 => {
                    if k % 2 == 0 {
                        let hours = self.rng.random_range(0.5..3.0);
                        self.cc_step(StepType::RwCharge, -2.0, Some(hours * 3600.0), interval, 0.0)
                    } else {
                        let i = self.pick_current(false);
                        self.cc_step(StepType::RwDischarge, i, None, interval, 0.0)
                    }
                }
                2 | 4 => {
                    if k % 2 == 0 {
                        self.cc_step(StepType::RwCharge, -2.0, None, interval, 0.0)
                    } else {
                        let i = self.pick_current(group == 4);
                        self.cc_step(StepType::RwDischarge, i, Some(default), interval, default)
                    }
                }
                _ => {
                    let mut choice = (-0.75, StepType::RwCharge);
                    for _ in 0..50 {
                        let i = self.pick_current(false);
                        let discharge = self.rng.random_bool(0.5);
                        let signed = if discharge { i } else { -i };
                        if self.time_to_limit(signed) >= MIN_STEP_S {
                            let ty = if discharge { StepType::RwDischarge } else { StepType::RwCharge };
                            choice = (signed, ty);
                            break;
                        }
                    }
                    self.cc_step(choice.1, choice.0, Some(default), interval, default)
                }
            };
            steps.push(step);
        }
    }

    fn reference_cycle(&mut self, rest_h: f64, steps: &mut Vec<StepRecord>) {
        steps.push(self.rest(rest_h));
        steps.push(self.reference_charge());
        self.gap(1.0);
        steps.push(self.reference_discharge());
        self.gap(1.0);
    }
}

/// Generates a cell history with `n_phases` RW phases bounded by
/// `n_phases + 1` reference cycles.
pub fn generate(cfg: &SynthConfig) -> Result<CellHistory> {
    rw_steps_per_phase(cfg.group)?;
    if cfg.n_phases == 0 {
        return Err(Error::Validation("synthetic log needs at least one phase".into()));
    }
    let mut cell = Cell::new(cfg);
    let half = cfg.n_phases / 2;
    let mut long = Vec::new();
    let pool: Vec<usize> = (half.max(1)..cfg.n_phases).collect();
    let wanted = cfg.long_rests.min(pool.len());
    while long.len() < wanted {
        let p = pool[cell.rng.random_range(0..pool.len())];
        if !long.contains(&p) {
            long.push(p);
        }
    }
    let mut steps = Vec::new();
    cell.reference_cycle(0.5, &mut steps);
    for p in 0..cfg.n_phases {
        let second_half = p >= half;
        cell.rw_phase(cfg.group, &mut steps, second_half);
        let rest_h = if long.contains(&p) {
            cell.rng.random_range(40.0..80.0)
        } else {
            cell.rng.random_range(0.05..2.0)
        };
        cell.reference_cycle(rest_h, &mut steps);
    }
    Ok(CellHistory {
        cell_id: cfg.cell_id.clone(),
        group: Some(cfg.group),
        steps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{reference_measurements, segment_phases, write_cell};

    fn render(cfg: &SynthConfig) -> Vec<u8> {
        let mut out = Vec::new();
        write_cell(&generate(cfg).unwrap(), &mut out).unwrap();
        out
    }

    #[test]
    fn deterministic() {
        let cfg = SynthConfig::new(3, 3, 42).unwrap();
        assert_eq!(render(&cfg), render(&cfg));
        let other = SynthConfig::new(3, 3, 43).unwrap();
        assert_ne!(render(&cfg), render(&other));
    }

    #[test]
    fn group_three_cadence_and_currents() {
        let h = generate(&SynthConfig::new(3, 3, 7).unwrap()).unwrap();
        let phases = segment_phases(&h).unwrap();
        assert_eq!(phases.len(), 3);
        for p in &phases {
            assert_eq!(p.m() + p.l(), 1500);
            assert!(p.m() > 0 && p.l() > 0);
        }
        for s in h.steps.iter().filter(|s| s.step_type.is_rw()) {
            assert!(RW_CURRENTS.contains(&s.nominal_current), "{}", s.nominal_current);
            assert!(s.duration_s() <= 300.0 + 1e-6);
        }
        assert_eq!(h.flagged_steps(), 0);
    }

    #[test]
    fn every_group_segments() {
        for g in 1..=4 {
            let h = generate(&SynthConfig::new(g, 4, 1).unwrap()).unwrap();
            let phases = segment_phases(&h).unwrap();
            assert_eq!(phases.len(), 4);
            assert!(phases.iter().all(|p| p.m() + p.l() == rw_steps_per_phase(g).unwrap()));
            assert_eq!(h.flagged_steps(), 0, "group {g}");
        }
        assert!(matches!(SynthConfig::new(5, 1, 0), Err(Error::InvalidGroup(5))));
    }

    #[test]
    fn capacity_fades() {
        let h = generate(&SynthConfig::new(3, 12, 9).unwrap()).unwrap();
        let caps: Vec<f64> = reference_measurements(&h).iter().map(|m| m.adjusted.unwrap()).collect();
        assert_eq!(caps.len(), 13);
        assert!(caps[12] < caps[0] - 0.05, "{caps:?}");
        assert!(caps.iter().all(|c| *c > 1.0 && *c < 2.3));
    }
}
