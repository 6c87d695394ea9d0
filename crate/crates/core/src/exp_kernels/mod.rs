//! Exponential kernels over the constrained softmax domain.
//!
//! Three families are modelled: a high-precision reference (`exact`),
//! truncated Maclaurin polynomials of order 1 to 3 evaluated by Horner's
//! rule, and LUT-backed piecewise linear or quadratic interpolation. Each
//! kernel can be evaluated bit-accurately in its fixed-point format or with
//! real coefficients in `f64`, which isolates the approximation error from
//! quantization error.

mod export;
mod lut;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fixed_point::{round_div, FixedFormat, FixedValue};

pub use export::{export_lut, parse_lut, LutExportFormat};
pub use lut::{build_lut, eval_lut_exp, segment_index, LutTable, SegmentCoeffs, SegmentIndexMap, SegmentLocation};

pub const MAX_SEGMENTS: u32 = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Domain {
    pub lo: f64,
    pub hi: f64,
}

impl Domain {
    /// The open interval `]-1, 1[` the logits are constrained to.
    pub const UNIT: Domain = Domain { lo: -1.0, hi: 1.0 };

    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !lo.is_finite() || !hi.is_finite() || lo >= hi {
            return Err(Error::InvalidDomain(format!("[{lo}, {hi}) is not a finite interval")));
        }
        Ok(Self { lo, hi })
    }

    pub fn width(self) -> f64 {
        self.hi - self.lo
    }

    /// Raw bounds `[lo, hi)` in `format`, as `(first, last)` inclusive
    /// indices clipped to the format range.
    pub fn raw_bounds(self, format: FixedFormat) -> (i64, i64) {
        let lo = (self.lo * format.scale()).ceil() as i64;
        let hi = (self.hi * format.scale()).ceil() as i64 - 1;
        (lo.max(format.min_raw()), hi.min(format.max_raw()))
    }
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{}", self.lo, self.hi)
    }
}

impl FromStr for Domain {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidDomain(format!("`{s}` is not of the form <lo>,<hi>"));
        let (lo, hi) = s.split_once(',').ok_or_else(bad)?;
        Domain::new(lo.trim().parse().map_err(|_| bad())?, hi.trim().parse().map_err(|_| bad())?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Degree {
    Linear,
    Quadratic,
}

impl Degree {
    pub fn coeff_count(self) -> usize {
        match self {
            Degree::Linear => 2,
            Degree::Quadratic => 3,
        }
    }
}

impl fmt::Display for Degree {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Degree::Linear => "linear",
            Degree::Quadratic => "quadratic",
        })
    }
}

impl FromStr for Degree {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(Degree::Linear),
            "quadratic" => Ok(Degree::Quadratic),
            _ => Err(Error::InvalidKernel(format!("unknown degree `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum KernelKind {
    Exact,
    Taylor { order: u8 },
    Lut { degree: Degree, segments: u32 },
}

impl KernelKind {
    pub fn taylor(order: u8) -> Result<Self> {
        let kind = KernelKind::Taylor { order };
        kind.validate()?;
        Ok(kind)
    }

    pub fn lut(degree: Degree, segments: u32) -> Result<Self> {
        let kind = KernelKind::Lut { degree, segments };
        kind.validate()?;
        Ok(kind)
    }

    pub fn validate(self) -> Result<()> {
        match self {
            KernelKind::Exact => Ok(()),
            KernelKind::Taylor { order } if (1..=3).contains(&order) => Ok(()),
            KernelKind::Taylor { order } => Err(Error::InvalidKernel(format!(
                "taylor order {order} outside 1..=3"
            ))),
            KernelKind::Lut { segments, .. } => {
                if segments.is_power_of_two() && (2..=MAX_SEGMENTS).contains(&segments) {
                    Ok(())
                } else {
                    Err(Error::InvalidKernel(format!(
                        "segment count {segments} must be a power of two in 2..={MAX_SEGMENTS}"
                    )))
                }
            }
        }
    }

    /// Whether the fixed-point evaluation is non-decreasing in its input.
    pub fn is_monotone(self) -> bool {
        !matches!(self, KernelKind::Lut { degree: Degree::Quadratic, .. })
    }
}

impl fmt::Display for KernelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KernelKind::Exact => f.write_str("exact"),
            KernelKind::Taylor { order } => write!(f, "taylor{order}"),
            KernelKind::Lut { degree, segments } => write!(f, "lut-{degree}-{segments}"),
        }
    }
}

impl FromStr for KernelKind {
    type Err = Error;

    /// Accepts `exact`, `taylor<1..3>` and `lut-<linear|quadratic>-<P>`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "exact" {
            return Ok(KernelKind::Exact);
        }
        if let Some(order) = s.strip_prefix("taylor") {
            let order = order
                .trim_start_matches(['-', ':'])
                .parse()
                .map_err(|_| Error::InvalidKernel(format!("bad taylor order in `{s}`")))?;
            return KernelKind::taylor(order);
        }
        if let Some(rest) = s.strip_prefix("lut-") {
            let (degree, segments) = rest
                .split_once('-')
                .ok_or_else(|| Error::InvalidKernel(format!("`{s}` lacks a segment count")))?;
            let segments = segments
                .parse()
                .map_err(|_| Error::InvalidKernel(format!("bad segment count in `{s}`")))?;
            return KernelKind::lut(degree.parse()?, segments);
        }
        Err(Error::InvalidKernel(format!("unknown kernel `{s}`")))
    }
}

impl Serialize for KernelKind {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for KernelKind {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// A kernel choice bound to the fixed-point format it computes in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ExpKernelSpec {
    pub kind: KernelKind,
    pub format: FixedFormat,
}

impl ExpKernelSpec {
    pub fn new(kind: KernelKind, format: FixedFormat) -> Result<Self> {
        kind.validate()?;
        Ok(Self { kind, format })
    }

    /// Kernel datapath for logits in `data`: the same resolution, widened so
    /// that `e^hi` and every coefficient fit.
    pub fn for_data_format(kind: KernelKind, data: FixedFormat, domain: Domain) -> Result<Self> {
        let format = data.widened_to_hold(libm::exp(domain.hi))?;
        Self::new(kind, format)
    }
}

impl fmt::Display for ExpKernelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}@{}", self.kind, self.format)
    }
}

/// Result of one fixed-point kernel evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KernelSample {
    pub value: FixedValue,
    /// The input lay outside the kernel domain and was clamped.
    pub clamped: bool,
    /// The output hit the format bounds.
    pub saturated: bool,
}

/// `e^x` in `f64` then quantized into the format of `x`.
pub fn eval_exact_exp(x: FixedValue) -> FixedValue {
    FixedValue::quantize(libm::exp(x.to_f64()), x.format())
}

fn taylor_constants(format: FixedFormat) -> [FixedValue; 4] {
    [1.0, 1.0, 0.5, 1.0 / 6.0].map(|c| FixedValue::quantize(c, format))
}

/// Horner's rule with full-width intermediates and one final rounding.
///
/// Coefficients and `x` share a format with `F` fractional bits. Each step
/// multiplies the accumulator by the raw input and adds the next
/// coefficient rescaled to the growing scale, so nothing is rounded until
/// the result is brought back to `F` bits and saturated. A single rounding
/// of a monotone polynomial stays monotone.
pub(crate) fn horner_fixed(coeffs_high_first: &[FixedValue], x: FixedValue) -> FixedValue {
    let format = x.format();
    let frac = format.frac_bits();
    let (first, rest) = coeffs_high_first.split_first().expect("at least one coefficient");
    debug_assert!(coeffs_high_first.iter().all(|c| c.format() == format));
    debug_assert!((rest.len() as u32 + 1) * (format.total_bits() - 1) <= 124);
    let r = x.raw() as i128;
    let mut acc = first.raw() as i128;
    for (step, c) in rest.iter().enumerate() {
        acc = acc * r + ((c.raw() as i128) << (frac * (step as u32 + 1)));
    }
    let shift = frac * rest.len() as u32;
    let raw = if shift == 0 {
        acc
    } else {
        round_div(acc, 1i128 << shift)
    };
    FixedValue::from_raw(raw.clamp(i64::MIN as i128, i64::MAX as i128) as i64, format)
}

fn horner_real(coeffs_high_first: &[f64], x: f64) -> f64 {
    coeffs_high_first.iter().fold(0.0, |acc, &c| acc * x + c)
}

/// Horner evaluation of `sum_{n<=order} x^n / n!` in the format of `x`.
///
/// Panics if `order` is not in `1..=3`.
pub fn eval_taylor_exp(x: FixedValue, order: u8) -> FixedValue {
    assert!((1..=3).contains(&order), "taylor order {order} outside 1..=3");
    let consts = taylor_constants(x.format());
    let coeffs: Vec<FixedValue> = consts[..=order as usize].iter().rev().copied().collect();
    horner_fixed(&coeffs, x)
}

/// Real-arithmetic Maclaurin polynomial of `e^x`.
pub fn taylor_real(x: f64, order: u8) -> f64 {
    let coeffs: Vec<f64> = [1.0, 1.0, 0.5, 1.0 / 6.0][..=order as usize]
        .iter()
        .rev()
        .copied()
        .collect();
    horner_real(&coeffs, x)
}

/// A built, immutable exponential evaluator.
#[derive(Debug, Clone, PartialEq)]
pub enum ExpKernel {
    Exact {
        format: FixedFormat,
    },
    Taylor {
        order: u8,
        format: FixedFormat,
        domain: Domain,
    },
    Lut(LutTable),
}

impl ExpKernel {
    pub fn build(spec: ExpKernelSpec, domain: Domain) -> Result<Self> {
        spec.kind.validate()?;
        Ok(match spec.kind {
            KernelKind::Exact => ExpKernel::Exact {
                format: spec.format,
            },
            KernelKind::Taylor { order } => ExpKernel::Taylor {
                order,
                format: spec.format,
                domain,
            },
            KernelKind::Lut { .. } => ExpKernel::Lut(build_lut(spec, domain)?),
        })
    }

    pub fn kind(&self) -> KernelKind {
        match self {
            ExpKernel::Exact { .. } => KernelKind::Exact,
            ExpKernel::Taylor { order, .. } => KernelKind::Taylor { order: *order },
            ExpKernel::Lut(t) => KernelKind::Lut {
                degree: t.degree(),
                segments: t.segments(),
            },
        }
    }

    pub fn format(&self) -> FixedFormat {
        match self {
            ExpKernel::Exact { format } | ExpKernel::Taylor { format, .. } => *format,
            ExpKernel::Lut(t) => t.format(),
        }
    }

    /// `None` for the reference kernel, which accepts the whole format range.
    pub fn domain(&self) -> Option<Domain> {
        match self {
            ExpKernel::Exact { .. } => None,
            ExpKernel::Taylor { domain, .. } => Some(*domain),
            ExpKernel::Lut(t) => Some(t.domain()),
        }
    }

    pub fn spec(&self) -> ExpKernelSpec {
        ExpKernelSpec {
            kind: self.kind(),
            format: self.format(),
        }
    }

    /// Bit-accurate evaluation. `x` is re-expressed in the kernel format
    /// and clamped into the kernel domain first.
    pub fn eval_fixed(&self, x: FixedValue) -> KernelSample {
        let format = self.format();
        let x = x.requantize(format);
        let (value, clamped) = match self {
            ExpKernel::Exact { .. } => (eval_exact_exp(x), false),
            ExpKernel::Taylor { order, domain, .. } => {
                let (lo, hi) = domain.raw_bounds(format);
                let raw = x.raw() as i64;
                let clamped_raw = raw.clamp(lo, hi);
                let x = FixedValue::from_raw(clamped_raw, format);
                (eval_taylor_exp(x, *order), clamped_raw != raw)
            }
            ExpKernel::Lut(table) => {
                let (value, loc) = table.eval_fixed(x);
                (value, loc.clamped)
            }
        };
        KernelSample {
            value,
            clamped,
            saturated: value.is_saturated(),
        }
    }

    /// Real-coefficient evaluation in `f64`, clamping into the domain.
    /// Returns the value and whether a clamp happened.
    pub fn eval_real(&self, x: f64) -> (f64, bool) {
        match self {
            ExpKernel::Exact { .. } => (libm::exp(x), false),
            ExpKernel::Taylor { order, domain, .. } => {
                let c = x.clamp(domain.lo, domain.hi);
                (taylor_real(c, *order), c != x)
            }
            ExpKernel::Lut(table) => table.eval_real(x),
        }
    }
}
