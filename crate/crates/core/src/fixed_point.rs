//! Signed two's-complement fixed-point numbers with a runtime format.
//!
//! A [`FixedFormat`] `q<t>.<f>` has `t` total bits (sign included) and `f`
//! fractional bits, so values step by `2^-f` over
//! `[-2^(t-1-f), 2^(t-1-f) - 2^-f]`. Every operation rounds half away from
//! zero and saturates; nothing ever wraps. Raw values are held in `i32`
//! and every intermediate is computed in `i64`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAX_TOTAL_BITS: u32 = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct FixedFormat {
    total_bits: u32,
    frac_bits: u32,
}

impl FixedFormat {
    pub fn new(total_bits: u32, frac_bits: u32) -> Result<Self> {
        if !(2..=MAX_TOTAL_BITS).contains(&total_bits) {
            return Err(Error::InvalidFormat(format!(
                "total bits {total_bits} outside 2..={MAX_TOTAL_BITS}"
            )));
        }
        if frac_bits >= total_bits {
            return Err(Error::InvalidFormat(format!(
                "fractional bits {frac_bits} must be below total bits {total_bits}"
            )));
        }
        Ok(Self {
            total_bits,
            frac_bits,
        })
    }

    pub fn total_bits(self) -> u32 {
        self.total_bits
    }

    pub fn frac_bits(self) -> u32 {
        self.frac_bits
    }

    /// Integer bits excluding the sign bit.
    pub fn int_bits(self) -> u32 {
        self.total_bits - 1 - self.frac_bits
    }

    pub fn min_raw(self) -> i64 {
        -(1i64 << (self.total_bits - 1))
    }

    pub fn max_raw(self) -> i64 {
        (1i64 << (self.total_bits - 1)) - 1
    }

    pub fn scale(self) -> f64 {
        (1u64 << self.frac_bits) as f64
    }

    /// Quantization step, `2^-frac_bits`.
    pub fn step(self) -> f64 {
        1.0 / self.scale()
    }

    pub fn min_value(self) -> f64 {
        self.min_raw() as f64 / self.scale()
    }

    pub fn max_value(self) -> f64 {
        self.max_raw() as f64 / self.scale()
    }

    pub fn contains_raw(self, raw: i64) -> bool {
        (self.min_raw()..=self.max_raw()).contains(&raw)
    }

    pub fn saturate(self, raw: i64) -> i32 {
        raw.clamp(self.min_raw(), self.max_raw()) as i32
    }

    /// Integer bits (excluding sign) needed so that `magnitude` lies inside
    /// the range at this format's resolution.
    pub fn required_int_bits(self, magnitude: f64) -> u32 {
        let mut bits = 0;
        while bits < 64 {
            let max = (2f64).powi(bits as i32) - self.step();
            if magnitude <= max {
                break;
            }
            bits += 1;
        }
        bits
    }

    /// Same resolution, with total width grown until `magnitude` fits.
    pub fn widened_to_hold(self, magnitude: f64) -> Result<Self> {
        let int_bits = self.required_int_bits(magnitude).max(self.int_bits());
        let total = 1 + int_bits + self.frac_bits;
        if total > MAX_TOTAL_BITS {
            return Err(Error::Unrepresentable {
                magnitude,
                format: self,
                required_int_bits: int_bits,
            });
        }
        Self::new(total, self.frac_bits)
    }
}

impl fmt::Display for FixedFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "q{}.{}", self.total_bits, self.frac_bits)
    }
}

impl FromStr for FixedFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidFormat(format!("`{s}` is not of the form q<total>.<frac>"));
        let body = s
            .trim()
            .strip_prefix('q')
            .or_else(|| s.trim().strip_prefix('Q'))
            .ok_or_else(bad)?;
        let (total, frac) = body.split_once('.').ok_or_else(bad)?;
        let total = total.parse().map_err(|_| bad())?;
        let frac = frac.parse().map_err(|_| bad())?;
        Self::new(total, frac)
    }
}

impl TryFrom<String> for FixedFormat {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<FixedFormat> for String {
    fn from(f: FixedFormat) -> String {
        f.to_string()
    }
}

/// Divide by `2^shift`, rounding half away from zero.
pub fn round_shift(value: i64, shift: u32) -> i64 {
    if shift == 0 {
        return value;
    }
    let half = 1i64 << (shift - 1);
    if value >= 0 {
        (value + half) >> shift
    } else {
        -((half - value) >> shift)
    }
}

/// Integer division rounding half away from zero; `den` must be positive.
pub fn round_div(num: i128, den: i128) -> i128 {
    debug_assert!(den > 0);
    if num >= 0 {
        (2 * num + den) / (2 * den)
    } else {
        -((2 * -num + den) / (2 * den))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct FixedValue {
    raw: i32,
    format: FixedFormat,
}

impl FixedValue {
    /// Saturates `raw` into the format range.
    pub fn from_raw(raw: i64, format: FixedFormat) -> Self {
        Self {
            raw: format.saturate(raw),
            format,
        }
    }

    pub fn zero(format: FixedFormat) -> Self {
        Self { raw: 0, format }
    }

    pub fn max(format: FixedFormat) -> Self {
        Self::from_raw(format.max_raw(), format)
    }

    pub fn min(format: FixedFormat) -> Self {
        Self::from_raw(format.min_raw(), format)
    }

    pub fn try_quantize(x: f64, format: FixedFormat) -> Result<Self> {
        if !x.is_finite() {
            return Err(Error::NonFinite(x));
        }
        // Exact: scaling by a power of two, then f64::round is half-away.
        let scaled = (x * format.scale()).round();
        let raw = if scaled <= format.min_raw() as f64 {
            format.min_raw()
        } else if scaled >= format.max_raw() as f64 {
            format.max_raw()
        } else {
            scaled as i64
        };
        Ok(Self::from_raw(raw, format))
    }

    /// Panics on NaN or infinity.
    pub fn quantize(x: f64, format: FixedFormat) -> Self {
        Self::try_quantize(x, format).expect("quantize requires a finite input")
    }

    pub fn raw(self) -> i32 {
        self.raw
    }

    pub fn format(self) -> FixedFormat {
        self.format
    }

    pub fn to_f64(self) -> f64 {
        self.raw as f64 / self.format.scale()
    }

    pub fn is_saturated(self) -> bool {
        self.raw as i64 == self.format.max_raw() || self.raw as i64 == self.format.min_raw()
    }

    fn check_format(self, other: Self) -> Result<()> {
        if self.format != other.format {
            return Err(Error::FormatMismatch {
                lhs: self.format,
                rhs: other.format,
            });
        }
        Ok(())
    }

    pub fn checked_add(self, other: Self) -> Result<Self> {
        self.check_format(other)?;
        Ok(Self::from_raw(self.raw as i64 + other.raw as i64, self.format))
    }

    pub fn checked_sub(self, other: Self) -> Result<Self> {
        self.check_format(other)?;
        Ok(Self::from_raw(self.raw as i64 - other.raw as i64, self.format))
    }

    pub fn checked_mul(self, other: Self) -> Result<Self> {
        self.check_format(other)?;
        let product = self.raw as i64 * other.raw as i64;
        Ok(Self::from_raw(
            round_shift(product, self.format.frac_bits),
            self.format,
        ))
    }

    pub fn shift_right(self, shift: u32) -> Result<Self> {
        if shift >= self.format.total_bits {
            return Err(Error::ShiftOutOfRange {
                shift,
                format: self.format,
            });
        }
        Ok(Self::from_raw(round_shift(self.raw as i64, shift), self.format))
    }

    /// Re-express in another format, rounding dropped fraction bits and
    /// saturating to the target range.
    pub fn requantize(self, target: FixedFormat) -> Self {
        let from = self.format.frac_bits as i32;
        let to = target.frac_bits as i32;
        let raw = if to >= from {
            (self.raw as i64) << (to - from)
        } else {
            round_shift(self.raw as i64, (from - to) as u32)
        };
        Self::from_raw(raw, target)
    }
}

impl fmt::Display for FixedValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} ({}:{})", self.to_f64(), self.format, self.raw)
    }
}

pub fn quantize(x: f64, format: FixedFormat) -> FixedValue {
    FixedValue::quantize(x, format)
}

pub fn dequantize(v: FixedValue) -> f64 {
    v.to_f64()
}

pub fn fx_add(a: FixedValue, b: FixedValue) -> Result<FixedValue> {
    a.checked_add(b)
}

pub fn fx_mul(a: FixedValue, b: FixedValue) -> Result<FixedValue> {
    a.checked_mul(b)
}

pub fn fx_shift_right(a: FixedValue, shift: u32) -> Result<FixedValue> {
    a.shift_right(shift)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn q(t: u32, f: u32) -> FixedFormat {
        FixedFormat::new(t, f).unwrap()
    }

    #[test]
    fn format_validation() {
        assert!(FixedFormat::new(1, 0).is_err());
        assert!(FixedFormat::new(33, 10).is_err());
        assert!(FixedFormat::new(16, 16).is_err());
        assert!(FixedFormat::new(32, 31).is_ok());
        let f = q(12, 6);
        assert_eq!(f.int_bits(), 5);
        assert_eq!(f.min_value(), -32.0);
        assert_eq!(f.max_value(), 32.0 - 1.0 / 64.0);
        assert_eq!(f.step(), 1.0 / 64.0);
    }

    #[test]
    fn format_parse_and_display() {
        assert_eq!("q16.15".parse::<FixedFormat>().unwrap(), q(16, 15));
        assert_eq!(q(20, 10).to_string(), "q20.10");
        for bad in ["16.15", "q16", "q16.x", "q40.2", "q8.8", ""] {
            assert!(bad.parse::<FixedFormat>().is_err(), "{bad}");
        }
        let json = serde_json::to_string(&q(12, 6)).unwrap();
        assert_eq!(json, "\"q12.6\"");
        assert_eq!(serde_json::from_str::<FixedFormat>(&json).unwrap(), q(12, 6));
    }

    #[test]
    fn quantize_examples() {
        let f = q(16, 15);
        assert_eq!(quantize(0.0, f).raw(), 0);
        assert_eq!(quantize(0.5, f).raw(), 16384);
        // round(0.99999 * 32768) = 32768, one above max raw
        assert_eq!(quantize(0.99999, f).raw(), 32767);
        assert_eq!(quantize(-7.0, f).raw(), -32768);
        assert_eq!(quantize(1.5 / 32768.0, f).raw(), 2);
        assert_eq!(quantize(-1.5 / 32768.0, f).raw(), -2);
        assert!(FixedValue::try_quantize(f64::NAN, f).is_err());
        assert!(FixedValue::try_quantize(f64::INFINITY, f).is_err());
    }

    #[test]
    fn dequantize_examples() {
        assert_eq!(dequantize(FixedValue::from_raw(16384, q(16, 15))), 0.5);
        assert_eq!(dequantize(FixedValue::from_raw(-32768, q(16, 15))), -1.0);
        assert_eq!(dequantize(FixedValue::from_raw(1, q(12, 6))), 0.015625);
    }

    #[test]
    fn add_examples() {
        let f = q(16, 15);
        let a = quantize(0.25, f);
        assert_eq!(fx_add(a, a).unwrap().to_f64(), 0.5);
        let b = quantize(0.75, f);
        let s = fx_add(b, b).unwrap();
        assert_eq!(s.raw(), 32767);
        assert!((s.to_f64() - 0.999969).abs() < 1e-6);
        assert!(fx_add(a, quantize(0.25, q(12, 6))).is_err());
    }

    #[test]
    fn mul_examples() {
        let f = q(16, 15);
        let h = quantize(0.5, f);
        assert_eq!(fx_mul(h, h).unwrap().to_f64(), 0.25);
        let t = quantize(0.1, f);
        assert_eq!(t.raw(), 3277);
        assert_eq!(fx_mul(t, t).unwrap().raw(), 328);
        assert!(fx_mul(h, quantize(0.5, q(16, 14))).is_err());
    }

    #[test]
    fn shift_examples() {
        let f = q(16, 15);
        let s = |raw, n| fx_shift_right(FixedValue::from_raw(raw, f), n).unwrap().raw();
        assert_eq!(s(32, 3), 4);
        assert_eq!(s(-32768, 1), -16384);
        assert_eq!(s(5, 1), 3);
        assert_eq!(s(-5, 1), -3);
        assert_eq!(s(7, 0), 7);
        assert!(fx_shift_right(FixedValue::from_raw(1, f), 16).is_err());
    }

    #[test]
    fn requantize_between_formats() {
        let v = FixedValue::from_raw(3, q(8, 2));
        assert_eq!(v.requantize(q(16, 6)).raw(), 48);
        assert_eq!(v.requantize(q(8, 1)).raw(), 2);
        assert_eq!(FixedValue::from_raw(-3, q(8, 2)).requantize(q(8, 1)).raw(), -2);
        assert_eq!(FixedValue::from_raw(127, q(8, 0)).requantize(q(8, 4)).raw(), 127);
    }

    #[test]
    fn widening() {
        let f = q(16, 15);
        assert_eq!(f.required_int_bits(std::f64::consts::E), 2);
        assert_eq!(f.widened_to_hold(std::f64::consts::E).unwrap(), q(18, 15));
        assert_eq!(q(12, 6).widened_to_hold(2.8).unwrap(), q(12, 6));
        assert!(q(31, 30).widened_to_hold(3.0).is_err());
    }

    #[test]
    fn round_trip_exhaustive_up_to_16_bits() {
        for (t, f) in [(8, 7), (12, 6), (16, 15), (16, 0), (10, 3)] {
            let fmt = q(t, f);
            for raw in fmt.min_raw()..=fmt.max_raw() {
                let v = FixedValue::from_raw(raw, fmt);
                assert_eq!(quantize(v.to_f64(), fmt), v);
            }
        }
    }

    fn oracle_round_div_pow2(v: i64, s: u32) -> i64 {
        // half away from zero via exact rational comparison
        let d = 1i64 << s;
        let q = v.div_euclid(d);
        let r = v.rem_euclid(d);
        if 2 * r > d || (2 * r == d && v > 0) {
            q + 1
        } else {
            q
        }
    }

    #[test]
    fn add_and_mul_match_integer_oracle_exhaustive_8_bit() {
        for f in [0u32, 3, 7] {
            let fmt = q(8, f);
            for a in -128i64..=127 {
                for b in -128i64..=127 {
                    let x = FixedValue::from_raw(a, fmt);
                    let y = FixedValue::from_raw(b, fmt);
                    let s = fx_add(x, y).unwrap();
                    assert_eq!(s.raw() as i64, (a + b).clamp(-128, 127));
                    assert_eq!(s, fx_add(y, x).unwrap());
                    let p = fx_mul(x, y).unwrap();
                    assert_eq!(p.raw() as i64, oracle_round_div_pow2(a * b, f).clamp(-128, 127));
                    assert_eq!(p, fx_mul(y, x).unwrap());
                }
            }
        }
    }

    fn any_format() -> impl Strategy<Value = FixedFormat> {
        (2u32..=32).prop_flat_map(|t| (Just(t), 0..t)).prop_map(|(t, f)| q(t, f))
    }

    proptest! {
        #[test]
        fn ops_never_leave_range(fmt in any_format(), a in any::<i64>(), b in any::<i64>(), s in 0u32..32) {
            let x = FixedValue::from_raw(a, fmt);
            let y = FixedValue::from_raw(b, fmt);
            for v in [fx_add(x, y).unwrap(), fx_mul(x, y).unwrap(), x.checked_sub(y).unwrap()] {
                prop_assert!(fmt.contains_raw(v.raw() as i64));
            }
            if s < fmt.total_bits() {
                let r = fx_shift_right(x, s).unwrap();
                prop_assert!(fmt.contains_raw(r.raw() as i64));
                prop_assert!((r.to_f64() - x.to_f64() / (1u64 << s) as f64).abs() <= fmt.step());
            }
        }

        #[test]
        fn quantization_error_bound(fmt in any_format(), u in 0.0f64..1.0) {
            let x = fmt.min_value() + u * (fmt.max_value() - fmt.min_value());
            let v = quantize(x, fmt);
            prop_assert!((v.to_f64() - x).abs() <= fmt.step() / 2.0);
        }

        #[test]
        fn mul_by_nearest_one_within_one_ulp(raw in -32768i64..32768) {
            let fmt = q(16, 15);
            let x = FixedValue::from_raw(raw, fmt);
            let one = FixedValue::max(fmt);
            let p = fx_mul(x, one).unwrap();
            prop_assert!((p.raw() as i64 - raw).abs() <= 1);
        }

        #[test]
        fn add_zero_is_identity(fmt in any_format(), a in any::<i64>()) {
            let x = FixedValue::from_raw(a, fmt);
            prop_assert_eq!(fx_add(x, FixedValue::zero(fmt)).unwrap(), x);
        }
    }
}
