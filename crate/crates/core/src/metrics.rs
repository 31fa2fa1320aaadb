//! Capacity-scale error metrics and their end-of-life truncated variants.

use std::fmt;

use serde::Serialize;

use crate::error::{Error, Result};

pub const DEFAULT_EOL_FRACTION: f64 = 0.8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ErrorSet {
    pub rmse: f64,
    pub rmse_norm: f64,
    pub mae: f64,
    pub mae_norm: f64,
    pub maxe_norm: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EvalReport {
    pub full: ErrorSet,
    /// Metrics over the prefix ending at the first cycle below the threshold.
    pub eol: ErrorSet,
    pub n_total: usize,
    pub n_eol: usize,
    pub eol_threshold: f64,
}

fn error_set(predicted: &[f64], observed: &[f64]) -> ErrorSet {
    let n = predicted.len() as f64;
    let (mut se, mut se_n, mut ae, mut ae_n, mut max_n) = (0.0, 0.0, 0.0, 0.0, 0.0f64);
    for (p, o) in predicted.iter().zip(observed) {
        let e = o - p;
        let r = e / o;
        se += e * e;
        se_n += r * r;
        ae += e.abs();
        ae_n += r.abs();
        max_n = max_n.max(r.abs());
    }
    ErrorSet {
        rmse: (se / n).sqrt(),
        rmse_norm: (se_n / n).sqrt(),
        mae: ae / n,
        mae_norm: ae_n / n,
        maxe_norm: max_n,
    }
}

/// Length of the end-of-life prefix: up to and including the first
/// observation below `threshold`, or everything if none is.
pub fn eol_prefix_len(observed: &[f64], threshold: f64) -> usize {
    observed
        .iter()
        .position(|&c| c < threshold)
        .map_or(observed.len(), |i| i + 1)
}

pub fn evaluate(predicted: &[f64], observed: &[f64], nominal: f64, eol_fraction: f64) -> Result<EvalReport> {
    if predicted.len() != observed.len() {
        return Err(Error::LengthMismatch {
            left: predicted.len(),
            right: observed.len(),
        });
    }
    if observed.is_empty() {
        return Err(Error::InsufficientData {
            what: "evaluation pairs".into(),
            needed: 1,
            got: 0,
        });
    }
    if let Some((index, &value)) = observed.iter().enumerate().find(|(_, v)| !(**v > 0.0)) {
        return Err(Error::NonPositiveObserved { index, value });
    }
    let eol_threshold = eol_fraction * nominal;
    let k = eol_prefix_len(observed, eol_threshold);
    Ok(EvalReport {
        full: error_set(predicted, observed),
        eol: error_set(&predicted[..k], &observed[..k]),
        n_total: observed.len(),
        n_eol: k,
        eol_threshold,
    })
}

impl EvalReport {
    pub const TSV_HEADER: &'static str = "n_total\tn_eol\teol_threshold\trmse\trmse_norm\tmae\tmae_norm\tmaxe_norm\trmse_eol\trmse_norm_eol\tmae_eol\tmae_norm_eol\tmaxe_norm_eol";

    pub fn tsv_row(&self) -> String {
        let f = self.full;
        let e = self.eol;
        format!(
            "{}\t{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}",
            self.n_total,
            self.n_eol,
            self.eol_threshold,
            f.rmse,
            f.rmse_norm,
            f.mae,
            f.mae_norm,
            f.maxe_norm,
            e.rmse,
            e.rmse_norm,
            e.mae,
            e.mae_norm,
            e.maxe_norm
        )
    }
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "cycles evaluated   {} (EoL prefix {}, threshold {:.4} Ah)", self.n_total, self.n_eol, self.eol_threshold)?;
        writeln!(f, "{:<12}{:>12}{:>12}", "metric", "full", "to EoL")?;
        let rows = [
            ("RMSE (Ah)", self.full.rmse, self.eol.rmse, 1.0),
            ("RMSE_norm %", self.full.rmse_norm, self.eol.rmse_norm, 100.0),
            ("MAE (Ah)", self.full.mae, self.eol.mae, 1.0),
            ("MAE_norm %", self.full.mae_norm, self.eol.mae_norm, 100.0),
            ("MaxE_norm %", self.full.maxe_norm, self.eol.maxe_norm, 100.0),
        ];
        for (name, a, b, k) in rows {
            writeln!(f, "{name:<12}{:>12.4}{:>12.4}", a * k, b * k)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn perfect_prediction() {
        let o = [2.0, 1.9, 1.7];
        let r = evaluate(&o, &o, 2.0, 0.8).unwrap();
        assert_eq!(r.full, ErrorSet { rmse: 0.0, rmse_norm: 0.0, mae: 0.0, mae_norm: 0.0, maxe_norm: 0.0 });
    }

    #[test]
    fn two_point_hand_case() {
        let r = evaluate(&[1.9, 2.1], &[2.0, 2.0], 2.0, 0.8).unwrap();
        assert!((r.full.rmse - 0.1).abs() < 1e-12);
        assert!((r.full.rmse_norm - 0.05).abs() < 1e-12);
        assert!((r.full.mae - 0.1).abs() < 1e-12);
        assert!((r.full.maxe_norm - 0.05).abs() < 1e-12);
    }

    #[test]
    fn eol_prefix_includes_crossing() {
        let o = [2.0, 1.7, 1.5];
        assert_eq!(eol_prefix_len(&o, 1.6), 3);
        assert_eq!(eol_prefix_len(&[2.0, 1.5, 1.7, 1.4], 1.6), 2);
        let r = evaluate(&[2.0, 1.7, 1.5], &o, 2.0, 0.8).unwrap();
        assert_eq!((r.n_total, r.n_eol), (3, 3));
        let r = evaluate(&[1.9, 1.9], &[2.0, 1.95], 2.0, 0.8).unwrap();
        assert_eq!(r.eol, r.full);
    }

    #[test]
    fn errors() {
        assert!(matches!(evaluate(&[1.0], &[1.0, 2.0], 2.0, 0.8), Err(Error::LengthMismatch { .. })));
        assert!(matches!(
            evaluate(&[1.0, 1.0], &[1.0, 0.0], 2.0, 0.8),
            Err(Error::NonPositiveObserved { index: 1, .. })
        ));
    }

    proptest! {
        #[test]
        fn inequalities_and_scaling(
            pairs in prop::collection::vec((0.1f64..3.0, 0.1f64..3.0), 1..30),
            c in 0.1f64..10.0,
        ) {
            let (p, o): (Vec<f64>, Vec<f64>) = pairs.iter().copied().unzip();
            let r = evaluate(&p, &o, 2.0, 0.8).unwrap();
            prop_assert!(r.full.rmse >= r.full.mae - 1e-12);
            prop_assert!(r.full.maxe_norm >= r.full.rmse_norm - 1e-12);
            let ps: Vec<f64> = p.iter().map(|v| v * c).collect();
            let os: Vec<f64> = o.iter().map(|v| v * c).collect();
            let s = evaluate(&ps, &os, 2.0 * c, 0.8).unwrap();
            prop_assert!((s.full.rmse - c * r.full.rmse).abs() <= 1e-9 * (1.0 + s.full.rmse));
            prop_assert!((s.full.rmse_norm - r.full.rmse_norm).abs() <= 1e-9);
            prop_assert_eq!(s.n_eol, r.n_eol);
            let mut rev: Vec<(f64, f64)> = pairs.clone();
            rev.reverse();
            let (pr, or): (Vec<f64>, Vec<f64>) = rev.into_iter().unzip();
            let q = evaluate(&pr, &or, 2.0, 0.8).unwrap();
            prop_assert!((q.full.rmse - r.full.rmse).abs() <= 1e-12);
        }
    }
}
