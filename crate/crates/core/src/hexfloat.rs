//! Exact text encoding of `f64` as C99 hexadecimal floating-point literals.

use std::fmt;

use serde::de::{self, Deserializer, Visitor};
use serde::{Deserialize, Serialize, Serializer};

const MANT_BITS: u32 = 52;
const MANT_MASK: u64 = (1 << MANT_BITS) - 1;

pub fn encode(v: f64) -> String {
    if v.is_nan() {
        return "nan".into();
    }
    let sign = if v.is_sign_negative() { "-" } else { "" };
    if v.is_infinite() {
        return format!("{sign}inf");
    }
    let bits = v.to_bits();
    let exp = ((bits >> MANT_BITS) & 0x7ff) as i32;
    let mant = bits & MANT_MASK;
    if exp == 0 && mant == 0 {
        return format!("{sign}0x0p+0");
    }
    let (lead, e) = if exp == 0 { (0, -1022) } else { (1, exp - 1023) };
    let digits = format!("{mant:013x}");
    let frac = digits.trim_end_matches('0');
    let dot = if frac.is_empty() { String::new() } else { format!(".{frac}") };
    format!("{sign}0x{lead}{dot}p{e:+}")
}

pub fn decode(s: &str) -> Option<f64> {
    let (neg, body) = match s.strip_prefix('-') {
        Some(r) => (true, r),
        None => (false, s.strip_prefix('+').unwrap_or(s)),
    };
    let apply = |v: f64| if neg { -v } else { v };
    match body {
        "nan" => return Some(f64::NAN),
        "inf" => return Some(apply(f64::INFINITY)),
        _ => {}
    }
    let body = body.strip_prefix("0x")?;
    let (m, e) = body.split_once('p')?;
    let e: i32 = e.parse().ok()?;
    let (lead, frac) = match m.split_once('.') {
        Some((l, f)) => (l, f),
        None => (m, ""),
    };
    if frac.len() > 13 || !frac.chars().all(|c| c.is_ascii_hexdigit()) {
        return None;
    }
    let mant = if frac.is_empty() {
        0
    } else {
        u64::from_str_radix(frac, 16).ok()? << (4 * (13 - frac.len()))
    };
    let exp_field: u64 = match lead {
        "1" if (-1022..=1023).contains(&e) => (e + 1023) as u64,
        "0" if mant == 0 && e == 0 => return Some(apply(0.0)),
        "0" if e == -1022 => 0,
        _ => return None,
    };
    let bits = (u64::from(neg) << 63) | (exp_field << MANT_BITS) | mant;
    Some(f64::from_bits(bits))
}

/// An `f64` that serializes as a hexadecimal literal string.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hex(pub f64);

impl Serialize for Hex {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&encode(self.0))
    }
}

impl<'de> Deserialize<'de> for Hex {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        struct V;
        impl Visitor<'_> for V {
            type Value = Hex;
            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("a hexadecimal float string")
            }
            fn visit_str<E: de::Error>(self, v: &str) -> Result<Hex, E> {
                decode(v)
                    .map(Hex)
                    .ok_or_else(|| E::custom(format!("invalid hex float `{v}`")))
            }
        }
        d.deserialize_str(V)
    }
}

pub fn hex_vec(v: &[f64]) -> Vec<Hex> {
    v.iter().copied().map(Hex).collect()
}

pub fn unhex_vec(v: &[Hex]) -> Vec<f64> {
    v.iter().map(|h| h.0).collect()
}
