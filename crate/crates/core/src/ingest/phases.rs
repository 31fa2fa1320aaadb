use super::{CellHistory, StepRecord, StepType};
use crate::error::{Error, Result};

/// The random-walk steps between two consecutive reference discharges.
#[derive(Debug, Clone)]
pub struct RwPhase<'a> {
    /// Phase index; phase `i` closes at reference discharge `i + 1`.
    pub index: usize,
    pub previous_reference: &'a StepRecord,
    pub closing_reference: &'a StepRecord,
    pub previous_ordinal: usize,
    pub closing_ordinal: usize,
    pub discharge_steps: Vec<&'a StepRecord>,
    pub charge_steps: Vec<&'a StepRecord>,
    pub rest_steps: Vec<&'a StepRecord>,
    /// Start of the reference cycle closing the phase: the reference charge
    /// preceding the closing discharge if there is one, else the discharge.
    pub reference_start: f64,
}

impl RwPhase<'_> {
    pub fn m(&self) -> usize {
        self.discharge_steps.len()
    }

    pub fn l(&self) -> usize {
        self.charge_steps.len()
    }

    /// End of the last RW step, if any.
    pub fn last_rw_end(&self) -> Option<f64> {
        self.discharge_steps
            .iter()
            .chain(&self.charge_steps)
            .map(|s| s.span().1)
            .reduce(f64::max)
    }

    /// Rest time before the closing reference cycle, hours.
    pub fn rest_time_h(&self) -> Option<f64> {
        Some((self.reference_start - self.last_rw_end()?) / 3600.0)
    }

    /// RW steps of both kinds in log order.
    pub fn rw_steps(&self) -> Vec<&StepRecord> {
        let mut v: Vec<&StepRecord> = self
            .discharge_steps
            .iter()
            .chain(&self.charge_steps)
            .copied()
            .collect();
        v.sort_by(|a, b| a.t_start.total_cmp(&b.t_start));
        v
    }
}

pub fn segment_phases(history: &CellHistory) -> Result<Vec<RwPhase<'_>>> {
    let refs = history.reference_discharge_indices();
    if refs.len() < 2 {
        return Err(Error::NoPhases);
    }
    let steps = &history.steps;
    let mut phases = Vec::with_capacity(refs.len() - 1);
    for (index, w) in refs.windows(2).enumerate() {
        let (a, b) = (w[0], w[1]);
        let prev = &steps[a];
        let close = &steps[b];
        let lo = prev.span().1;
        let mut reference_start = close.t_start;
        let mut hi = close.span().0;
        let mut phase = RwPhase {
            index,
            previous_reference: prev,
            closing_reference: close,
            previous_ordinal: index,
            closing_ordinal: index + 1,
            discharge_steps: Vec::new(),
            charge_steps: Vec::new(),
            rest_steps: Vec::new(),
            reference_start,
        };
        // the closing reference cycle begins at the last reference charge
        // after the final RW step
        if let Some(c) = steps[a + 1..b]
            .iter()
            .rev()
            .take_while(|s| !s.step_type.is_rw())
            .filter(|s| s.step_type == StepType::ReferenceCharge)
            .last()
        {
            reference_start = c.t_start;
            hi = hi.min(c.span().0);
        }
        phase.reference_start = reference_start;
        for s in &steps[a + 1..b] {
            let (s0, s1) = s.span();
            if s.step_type.is_rw() && (s0 < lo || s1 > hi) {
                return Err(Error::Validation(format!(
                    "{} step at t={} overlaps a bounding reference cycle of phase {index}",
                    s.step_type, s.t_start
                )));
            }
            match s.step_type {
                StepType::RwDischarge => phase.discharge_steps.push(s),
                StepType::RwCharge => phase.charge_steps.push(s),
                StepType::Rest => phase.rest_steps.push(s),
                _ => {}
            }
        }
        phases.push(phase);
    }
    Ok(phases)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::Sample;
    use proptest::prelude::*;

    fn step(ty: StepType, t0: f64, t1: f64) -> StepRecord {
        let s = |t: f64| Sample {
            t,
            voltage: 3.8,
            current: 1.0,
            temperature: 25.0,
        };
        StepRecord::new(ty, t0, t1, 1.0, 300.0, vec![s(0.0), s(t1 - t0)])
    }

    /// Reference cycle then `kinds.len()` RW steps per phase.
    fn history(phases: &[Vec<StepType>]) -> CellHistory {
        let mut t = 0.0;
        let mut steps = Vec::new();
        let mut push = |ty, d: f64, steps: &mut Vec<StepRecord>| {
            steps.push(step(ty, t, t + d));
            t += d + 10.0;
        };
        push(StepType::ReferenceCharge, 3600.0, &mut steps);
        push(StepType::ReferenceDischarge, 7200.0, &mut steps);
        for kinds in phases {
            for &k in kinds {
                push(k, 300.0, &mut steps);
            }
            push(StepType::ReferenceCharge, 3600.0, &mut steps);
            push(StepType::ReferenceDischarge, 7200.0, &mut steps);
        }
        CellHistory {
            cell_id: "t".into(),
            group: Some(2),
            steps,
        }
    }

    fn alternating(n: usize) -> Vec<StepType> {
        (0..n)
            .map(|k| if k % 2 == 0 { StepType::RwDischarge } else { StepType::RwCharge })
            .collect()
    }

    #[test]
    fn single_window() {
        let h = history(&[alternating(50)]);
        let p = segment_phases(&h).unwrap();
        assert_eq!(p.len(), 1);
        assert_eq!(p[0].m() + p[0].l(), 50);
        assert_eq!(p[0].m(), 25);
        // rest is the 10 s gap before the closing reference charge
        assert!((p[0].rest_time_h().unwrap() - 10.0 / 3600.0).abs() < 1e-12);
    }

    #[test]
    fn fencepost() {
        let h = history(&[alternating(4), alternating(6)]);
        let p = segment_phases(&h).unwrap();
        assert_eq!(p.len(), 2);
        assert_eq!((p[1].previous_ordinal, p[1].closing_ordinal), (1, 2));
        assert_eq!(p[1].m() + p[1].l(), 6);
    }

    #[test]
    fn needs_two_references() {
        let mut h = history(&[]);
        h.steps.pop();
        assert!(matches!(segment_phases(&h), Err(Error::NoPhases)));
    }

    #[test]
    fn overlap_is_a_validation_error() {
        let mut h = history(&[alternating(4)]);
        let closing = h.steps.len() - 1;
        h.steps[closing - 2].t_end = h.steps[closing].t_start + 5.0;
        assert!(matches!(segment_phases(&h), Err(Error::Validation(_))));
    }

    #[test]
    fn rest_records_attributed() {
        let mut kinds = alternating(4);
        kinds.insert(2, StepType::Rest);
        let h = history(&[kinds]);
        let p = segment_phases(&h).unwrap();
        assert_eq!(p[0].rest_steps.len(), 1);
        assert_eq!(p[0].m() + p[0].l(), 4);
    }

    proptest! {
        #[test]
        fn partitions_rw_steps(sizes in prop::collection::vec(0usize..30, 1..6), seed in 0u64..1000) {
            let phases: Vec<Vec<StepType>> = sizes
                .iter()
                .enumerate()
                .map(|(i, &n)| {
                    (0..n)
                        .map(|k| match (seed as usize + i * 7 + k * 3) % 5 {
                            0 | 1 => StepType::RwDischarge,
                            2 | 3 => StepType::RwCharge,
                            _ => StepType::Rest,
                        })
                        .collect()
                })
                .collect();
            let h = history(&phases);
            let p = segment_phases(&h).unwrap();
            prop_assert_eq!(p.len(), sizes.len());
            let total_rw = h.steps.iter().filter(|s| s.step_type.is_rw()).count();
            let counted: usize = p.iter().map(|ph| ph.m() + ph.l()).sum();
            prop_assert_eq!(counted, total_rw);
            let mut seen = std::collections::HashSet::new();
            for ph in &p {
                for s in ph.rw_steps() {
                    prop_assert!(seen.insert(s as *const StepRecord));
                }
            }
        }
    }
}
