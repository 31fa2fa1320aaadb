//! Fractional polynomial transforms and single-covariate power selection.
//!
//! A first-degree FP of `x` is `x^p` with `p` drawn from a fixed set of
//! eight powers, `x^0` meaning `ln x`. A second-degree FP uses two powers;
//! a repeated power `(p, p)` expands to the basis `{x^p, x^p ln x}`.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::linreg::{fit_ols, DesignMatrix};

/// The eight candidate FP powers, strictly increasing.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerSet([f64; 8]);

impl PowerSet {
    pub const STANDARD: PowerSet = PowerSet([-2.0, -1.0, -0.5, 0.0, 0.5, 1.0, 2.0, 3.0]);

    pub fn powers(&self) -> &[f64; 8] {
        &self.0
    }

    pub fn contains(&self, p: f64) -> bool {
        self.0.contains(&p)
    }

    /// All 36 unordered pairs `(a, b)` with `a <= b`, in lexicographic order.
    pub fn pairs(&self) -> Vec<(f64, f64)> {
        let mut out = Vec::with_capacity(36);
        for i in 0..8 {
            for j in i..8 {
                out.push((self.0[i], self.0[j]));
            }
        }
        out
    }
}

/// Elementwise `x^power`, with power 0 mapped to the natural log.
pub fn fp_transform(x: &[f64], power: f64) -> Result<Vec<f64>> {
    if let Some((index, &value)) = x.iter().enumerate().find(|(_, v)| !(**v > 0.0)) {
        return Err(Error::NonPositiveInput { index, value });
    }
    Ok(x.iter().map(|&v| pow_fp(v, power)).collect())
}

/// Single-value power with exact arithmetic for the integer and half powers.
pub(crate) fn pow_fp(v: f64, power: f64) -> f64 {
    match power {
        0.0 => v.ln(),
        1.0 => v,
        2.0 => v * v,
        3.0 => v * v * v,
        -1.0 => 1.0 / v,
        -2.0 => 1.0 / (v * v),
        0.5 => v.sqrt(),
        -0.5 => 1.0 / v.sqrt(),
        p => v.powf(p),
    }
}

/// Additive shift and power-of-ten divisor that make a covariate FP-ready.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prep {
    pub shift: f64,
    pub scale: f64,
}

impl Prep {
    pub const IDENTITY: Prep = Prep {
        shift: 0.0,
        scale: 1.0,
    };

    pub fn apply(&self, v: f64) -> f64 {
        (v + self.shift) / self.scale
    }

    pub fn apply_all(&self, x: &[f64]) -> Vec<f64> {
        x.iter().map(|&v| self.apply(v)).collect()
    }
}

/// Chooses shift and scale so every value is strictly positive and the
/// shifted range lies in `[0.1, 100]`.
///
/// The shift is zero for already-positive data, otherwise `-min + gap` where
/// `gap` is the smallest positive difference between sorted distinct values.
pub fn shift_and_scale(x: &[f64]) -> Result<Prep> {
    if let Some((index, &value)) = x.iter().enumerate().find(|(_, v)| !v.is_finite()) {
        return Err(Error::Validation(format!(
            "non-finite covariate value {value} at index {index}"
        )));
    }
    let min = x.iter().copied().fold(f64::INFINITY, f64::min);
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if x.is_empty() || max == min {
        return Err(Error::ConstantInput(min));
    }
    let shift = if min > 0.0 {
        0.0
    } else {
        let mut sorted = x.to_vec();
        sorted.sort_by(f64::total_cmp);
        let gap = sorted
            .windows(2)
            .map(|w| w[1] - w[0])
            .filter(|d| *d > 0.0)
            .fold(f64::INFINITY, f64::min);
        -min + gap
    };
    let range = max - min;
    let mut scale = 1.0;
    let mut k = 0i32;
    while range / scale > 100.0 {
        k += 1;
        scale = 10f64.powi(k);
    }
    while range / scale < 0.1 {
        k -= 1;
        scale = 10f64.powi(k);
    }
    Ok(Prep { shift, scale })
}

/// A fractional polynomial term of degree 1 or 2 with its frozen
/// preprocessing constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FpTerm {
    pub powers: Vec<f64>,
    pub prep: Prep,
    /// Smallest preprocessed training value; out-of-domain inputs clamp here.
    pub domain_min: f64,
}

impl FpTerm {
    pub fn new(powers: Vec<f64>, prep: Prep, training_x: &[f64]) -> Self {
        let domain_min = training_x
            .iter()
            .map(|&v| prep.apply(v))
            .fold(f64::INFINITY, f64::min);
        FpTerm {
            powers,
            prep,
            domain_min,
        }
    }

    pub fn degree(&self) -> usize {
        self.powers.len()
    }

    /// Basis values for one raw covariate value. Returns the values and
    /// whether the input fell outside the positive domain and was clamped.
    pub fn basis_at(&self, raw: f64) -> (Vec<f64>, bool) {
        let mut v = self.prep.apply(raw);
        let clamped = !(v > 0.0);
        if clamped {
            v = self.domain_min;
        }
        (basis_values(v, &self.powers), clamped)
    }

    /// Basis columns over a whole (raw) covariate vector.
    pub fn columns(&self, raw: &[f64]) -> Result<Vec<Vec<f64>>> {
        let xs = self.prep.apply_all(raw);
        fp_transform(&xs, 1.0)?;
        Ok(basis_columns(&xs, &self.powers))
    }

    /// Column labels such as `x^0.5` or `x^2*log(x)`.
    pub fn labels(&self, name: &str) -> Vec<String> {
        let base = if self.prep == Prep::IDENTITY {
            name.to_string()
        } else {
            format!("{name}'")
        };
        let mut out = Vec::new();
        for (i, &p) in self.powers.iter().enumerate() {
            let repeated = i == 1 && self.powers[0] == p;
            let mut s = if p == 0.0 {
                format!("log({base})")
            } else {
                format!("{base}^{p}")
            };
            if repeated {
                s = format!("{s}*log({base})");
            }
            out.push(s);
        }
        out
    }
}

fn basis_values(v: f64, powers: &[f64]) -> Vec<f64> {
    match powers {
        [p] => vec![pow_fp(v, *p)],
        [a, b] if a == b => {
            let t = pow_fp(v, *a);
            vec![t, t * v.ln()]
        }
        [a, b] => vec![pow_fp(v, *a), pow_fp(v, *b)],
        _ => unreachable!("FP degree is 1 or 2"),
    }
}

/// Basis columns for already-preprocessed (positive) values.
pub fn basis_columns(xs: &[f64], powers: &[f64]) -> Vec<Vec<f64>> {
    let rows: Vec<Vec<f64>> = xs.iter().map(|&v| basis_values(v, powers)).collect();
    (0..powers.len())
        .map(|k| rows.iter().map(|r| r[k]).collect())
        .collect()
}

fn candidate_deviance(
    y: &[f64],
    base: &DesignMatrix,
    xs: &[f64],
    powers: &[f64],
) -> Result<f64> {
    let mut d = base.clone();
    for (k, col) in basis_columns(xs, powers).iter().enumerate() {
        d.push_column(&format!("__fp{k}"), "__fp", col)?;
    }
    match fit_ols(&d, y) {
        Ok(fit) => Ok(fit.deviance),
        Err(Error::RankDeficient { .. } | Error::InsufficientData { .. }) => Ok(f64::INFINITY),
        Err(e) => Err(e),
    }
}

fn prepared(x: &[f64], prep: &Prep) -> Result<Vec<f64>> {
    let xs = prep.apply_all(x);
    fp_transform(&xs, 1.0)?;
    Ok(xs)
}

/// Best first-degree power for `x` given the fixed `base` columns.
///
/// Ties on deviance go to the power closest to 1, then the smaller power.
pub fn select_fp1(y: &[f64], base: &DesignMatrix, x: &[f64], prep: &Prep) -> Result<(f64, f64)> {
    select_fp1_with(Exec::default(), y, base, x, prep)
}

pub fn select_fp1_with(
    exec: Exec,
    y: &[f64],
    base: &DesignMatrix,
    x: &[f64],
    prep: &Prep,
) -> Result<(f64, f64)> {
    let xs = prepared(x, prep)?;
    let powers = PowerSet::STANDARD.powers();
    let devs = exec.map(powers, |&p| candidate_deviance(y, base, &xs, &[p]));
    let mut best: Option<(f64, f64)> = None;
    for (&p, dev) in powers.iter().zip(devs) {
        let dev = dev?;
        let better = match best {
            None => true,
            Some((bp, bd)) => {
                dev < bd
                    || (dev == bd
                        && ((p - 1.0).abs() < (bp - 1.0).abs()
                            || ((p - 1.0).abs() == (bp - 1.0).abs() && p < bp)))
            }
        };
        if better {
            best = Some((p, dev));
        }
    }
    Ok(best.expect("power set is non-empty"))
}

/// Best second-degree power pair for `x` given the fixed `base` columns.
///
/// Ties go to the lexicographically smallest sorted pair.
pub fn select_fp2(
    y: &[f64],
    base: &DesignMatrix,
    x: &[f64],
    prep: &Prep,
) -> Result<((f64, f64), f64)> {
    select_fp2_with(Exec::default(), y, base, x, prep)
}

pub fn select_fp2_with(
    exec: Exec,
    y: &[f64],
    base: &DesignMatrix,
    x: &[f64],
    prep: &Prep,
) -> Result<((f64, f64), f64)> {
    let xs = prepared(x, prep)?;
    let pairs = PowerSet::STANDARD.pairs();
    let devs = exec.map(&pairs, |&(a, b)| candidate_deviance(y, base, &xs, &[a, b]));
    let mut best: Option<((f64, f64), f64)> = None;
    for (&pair, dev) in pairs.iter().zip(devs) {
        let dev = dev?;
        if best.is_none_or(|(_, bd)| dev < bd) {
            best = Some((pair, dev));
        }
    }
    Ok(best.expect("pair set is non-empty"))
}

/// Closed-test choice of FP degree from the three deviances.
///
/// Returns 0 (linear), 1 or 2. Deviance differences are referred to
/// chi-squared distributions: FP2 vs linear on 3 df, FP2 vs FP1 on 2 df and
/// FP1 vs linear on 1 df.
pub fn fp_degree_choice(
    dev_linear: f64,
    dev_fp1: f64,
    dev_fp2: f64,
    n: usize,
    alpha: f64,
    max_degree: u8,
) -> Result<u8> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidAlpha(alpha));
    }
    let min_n = if max_degree >= 2 { 4 } else { 3 };
    if n < min_n {
        return Err(Error::InsufficientData {
            what: "FP degree test".into(),
            needed: min_n,
            got: n,
        });
    }
    let fp1_vs_linear = significant(dev_linear - dev_fp1, 1.0, alpha);
    if max_degree < 2 {
        return Ok(u8::from(fp1_vs_linear));
    }
    if !significant(dev_linear - dev_fp2, 3.0, alpha) {
        return Ok(0);
    }
    if significant(dev_fp1 - dev_fp2, 2.0, alpha) {
        return Ok(2);
    }
    Ok(u8::from(fp1_vs_linear))
}

fn significant(stat: f64, df: f64, alpha: f64) -> bool {
    if !(stat > 0.0) {
        return false;
    }
    if stat.is_infinite() {
        return true;
    }
    ChiSquared::new(df).expect("df > 0").sf(stat) < alpha
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn power_set_shape() {
        let p = PowerSet::STANDARD.powers();
        assert_eq!(p.len(), 8);
        assert!(p.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(PowerSet::STANDARD.pairs().len(), 36);
    }

    #[test]
    fn transform_examples() {
        assert_eq!(fp_transform(&[1.0, 4.0, 9.0], 0.5).unwrap(), vec![1.0, 2.0, 3.0]);
        assert_eq!(fp_transform(&[1.0, 4.0, 9.0], 1.0).unwrap(), vec![1.0, 4.0, 9.0]);
        let e = std::f64::consts::E;
        let l = fp_transform(&[1.0, e, e * e], 0.0).unwrap();
        for (a, b) in l.iter().zip([0.0, 1.0, 2.0]) {
            assert!((a - b).abs() < 1e-15);
        }
        assert_eq!(fp_transform(&[2.0, 4.0], -2.0).unwrap(), vec![0.25, 0.0625]);
        assert!(matches!(
            fp_transform(&[1.0, 0.0], 1.0),
            Err(Error::NonPositiveInput { index: 1, .. })
        ));
    }

    #[test]
    fn shift_scale_examples() {
        assert_eq!(shift_and_scale(&[1.0, 2.0, 3.0]).unwrap(), Prep { shift: 0.0, scale: 1.0 });
        assert_eq!(shift_and_scale(&[-1.0, 0.0, 1.0]).unwrap(), Prep { shift: 2.0, scale: 1.0 });
        assert_eq!(
            shift_and_scale(&[100.0, 5000.0, 9000.0]).unwrap(),
            Prep { shift: 0.0, scale: 100.0 }
        );
        assert!(matches!(shift_and_scale(&[2.0, 2.0]), Err(Error::ConstantInput(_))));
    }

    #[test]
    fn degree_choice_examples() {
        assert_eq!(fp_degree_choice(10.0, 10.0, 10.0, 50, 0.05, 2).unwrap(), 0);
        assert_eq!(fp_degree_choice(200.0, 100.0, 100.0, 200, 0.05, 2).unwrap(), 1);
        assert_eq!(fp_degree_choice(10.1, 10.05, 10.0, 200, 0.05, 2).unwrap(), 0);
        assert_eq!(fp_degree_choice(200.0, 150.0, 100.0, 200, 0.05, 2).unwrap(), 2);
        assert_eq!(fp_degree_choice(200.0, 150.0, 100.0, 200, 0.05, 1).unwrap(), 1);
        assert!(matches!(
            fp_degree_choice(1.0, 1.0, 1.0, 10, 1.0, 2),
            Err(Error::InvalidAlpha(_))
        ));
    }

    #[test]
    fn chi_square_critical_values() {
        // 3.84 and 7.81 are the 5% points of chi2(1) and chi2(3).
        assert!(significant(3.85, 1.0, 0.05) && !significant(3.83, 1.0, 0.05));
        assert!(significant(7.82, 3.0, 0.05) && !significant(7.80, 3.0, 0.05));
    }

    fn grid(n: usize) -> Vec<f64> {
        (0..n).map(|i| 0.5 + 4.5 * i as f64 / (n - 1) as f64).collect()
    }

    #[test]
    fn fp1_recovers_exact_members() {
        let x = grid(40);
        let base = DesignMatrix::intercept(40);
        let y: Vec<f64> = x.iter().map(|v| 1.0 + 2.0 * v.sqrt()).collect();
        assert_eq!(select_fp1(&y, &base, &x, &Prep::IDENTITY).unwrap().0, 0.5);
        let y: Vec<f64> = x.iter().map(|v| 1.0 + v).collect();
        assert_eq!(select_fp1(&y, &base, &x, &Prep::IDENTITY).unwrap().0, 1.0);
    }

    #[test]
    fn fp2_recovers_exact_members() {
        let x = grid(40);
        let base = DesignMatrix::intercept(40);
        let y: Vec<f64> = x.iter().map(|v| 1.0 + v * v + v * v * v).collect();
        assert_eq!(select_fp2(&y, &base, &x, &Prep::IDENTITY).unwrap().0, (2.0, 3.0));
        let y: Vec<f64> = x.iter().map(|v| v * v.ln()).collect();
        assert_eq!(select_fp2(&y, &base, &x, &Prep::IDENTITY).unwrap().0, (1.0, 1.0));
    }

    /// Brute-force oracle: fit every candidate independently.
    fn brute_force(y: &[f64], x: &[f64]) -> (f64, f64) {
        let n = y.len();
        let mut d1 = f64::INFINITY;
        for &p in PowerSet::STANDARD.powers() {
            let col = fp_transform(x, p).unwrap();
            let d = DesignMatrix::intercept(n).with_column("__fp0", "__fp", &col).unwrap();
            d1 = d1.min(fit_ols(&d, y).unwrap().deviance);
        }
        let mut d2 = f64::INFINITY;
        for (a, b) in PowerSet::STANDARD.pairs() {
            let ca = fp_transform(x, a).unwrap();
            let cb: Vec<f64> = if a == b {
                ca.iter().zip(x).map(|(t, v)| t * v.ln()).collect()
            } else {
                fp_transform(x, b).unwrap()
            };
            let d = DesignMatrix::intercept(n)
                .with_column("__fp0", "__fp", &ca)
                .unwrap()
                .with_column("__fp1", "__fp", &cb)
                .unwrap();
            d2 = d2.min(fit_ols(&d, y).unwrap().deviance);
        }
        (d1, d2)
    }

    #[test]
    fn noise_response_matches_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x: Vec<f64> = (0..30).map(|_| rng.random_range(0.2..8.0)).collect();
        let y: Vec<f64> = (0..30).map(|_| 3.0 + rng.random::<f64>()).collect();
        let base = DesignMatrix::intercept(30);
        let (d1, d2) = brute_force(&y, &x);
        assert_eq!(select_fp1(&y, &base, &x, &Prep::IDENTITY).unwrap().1, d1);
        assert_eq!(select_fp2(&y, &base, &x, &Prep::IDENTITY).unwrap().1, d2);
    }

    #[test]
    fn sequential_and_parallel_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x: Vec<f64> = (0..25).map(|_| rng.random_range(1.0..3.0)).collect();
        let y: Vec<f64> = x.iter().map(|v| v.ln() + 0.1 * rng.random::<f64>()).collect();
        let base = DesignMatrix::intercept(25);
        let p = Prep::IDENTITY;
        assert_eq!(
            select_fp2_with(Exec::Sequential, &y, &base, &x, &p).unwrap(),
            select_fp2_with(Exec::Parallel, &y, &base, &x, &p).unwrap()
        );
    }

    #[test]
    fn labels() {
        let t = FpTerm::new(vec![2.0, 2.0], Prep::IDENTITY, &[1.0]);
        assert_eq!(t.labels("x"), vec!["x^2", "x^2*log(x)"]);
        let t = FpTerm::new(vec![0.0], Prep { shift: 1.0, scale: 1.0 }, &[1.0]);
        assert_eq!(t.labels("x"), vec!["log(x')"]);
    }

    proptest! {
        #[test]
        fn identity_and_sqrt_powers(x in prop::collection::vec(1e-3f64..1e3, 1..20)) {
            prop_assert_eq!(fp_transform(&x, 1.0).unwrap(), x.clone());
            let s = fp_transform(&x, 0.5).unwrap();
            for (a, b) in s.iter().zip(&x) {
                prop_assert!((a * a - b).abs() <= 1e-12 * b);
            }
        }

        #[test]
        fn shift_scale_makes_positive(x in prop::collection::vec(-1e4f64..1e4, 2..30)) {
            prop_assume!(x.iter().any(|v| *v != x[0]));
            let prep = shift_and_scale(&x).unwrap();
            prop_assert!(prep.scale > 0.0);
            prop_assert!(x.iter().all(|&v| prep.apply(v) > 0.0));
            let shifted = prep.apply_all(&x);
            let lo = shifted.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = shifted.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(hi - lo >= 0.1 * (1.0 - 1e-12) && hi - lo <= 100.0 * (1.0 + 1e-12));
        }

        #[test]
        fn positive_small_range_is_identity(x in prop::collection::vec(1.0f64..50.0, 2..20)) {
            let lo = x.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            prop_assume!(hi - lo >= 0.1);
            prop_assert_eq!(shift_and_scale(&x).unwrap(), Prep::IDENTITY);
        }

        #[test]
        fn degree_choice_monotone_in_alpha(
            dl in 0.0f64..40.0, d1 in 0.0f64..40.0, d2 in 0.0f64..40.0,
            a in 0.001f64..0.5, b in 0.001f64..0.5,
        ) {
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            let at_lo = fp_degree_choice(dl, d1, d2, 100, lo, 2).unwrap();
            let at_hi = fp_degree_choice(dl, d1, d2, 100, hi, 2).unwrap();
            if at_lo >= 1 {
                prop_assert!(at_hi >= 1);
            }
        }

        #[test]
        fn fp2_never_worse_than_fp1(seed in 0u64..200) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x: Vec<f64> = (0..20).map(|_| rng.random_range(0.5..5.0)).collect();
            let y: Vec<f64> = (0..20).map(|_| rng.random::<f64>()).collect();
            let base = DesignMatrix::intercept(20);
            let (_, d1) = select_fp1(&y, &base, &x, &Prep::IDENTITY).unwrap();
            let (_, d2) = select_fp2(&y, &base, &x, &Prep::IDENTITY).unwrap();
            prop_assert!(d2 <= d1 + 1e-9);
        }
    }
}
