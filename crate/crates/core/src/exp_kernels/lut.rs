//! Piecewise interpolation tables for `e^x`.
//!
//! The domain `[lo, hi)` is cut into `P` equal segments. Segment `p` is
//! selected from the quantized input with an add and a shift: the biased
//! raw value `raw + bias` is an unsigned offset whose high bits are the
//! segment index and whose low bits are the position inside the segment.
//! Coefficients are stored relative to the segment origin so the hardware
//! never has to subtract the node:
//!
//! * linear: `f(d) = m_p * d + y_p`, with `m_p` the chord slope;
//! * quadratic: `f(d) = (a_p * d + b_p) * d + y_p`, the interpolant through
//!   both endpoints and the midpoint.

use crate::error::{Error, Result};
use crate::exp_kernels::{horner_fixed, Degree, Domain, ExpKernelSpec, KernelKind};
use crate::fixed_point::{FixedFormat, FixedValue};

/// Add-and-shift mapping from quantized input to segment.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SegmentIndexMap {
    /// Added to the raw input so the domain lower bound maps to zero.
    pub bias: i64,
    /// Right shift producing the segment index.
    pub shift_amount: u32,
    pub segments: u32,
    // inclusive raw bounds of the domain
    first_raw: i64,
    last_raw: i64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SegmentLocation {
    pub segment: usize,
    /// Raw offset of the input from the segment origin.
    pub offset: i64,
    pub clamped: bool,
}

impl SegmentIndexMap {
    pub fn new(domain: Domain, segments: u32, format: FixedFormat) -> Result<Self> {
        let lo = domain.lo * format.scale();
        let hi = domain.hi * format.scale();
        if lo.fract() != 0.0 || hi.fract() != 0.0 {
            return Err(Error::InvalidDomain(format!(
                "bounds of [{domain}) are not multiples of the {format} step"
            )));
        }
        let (lo, hi) = (lo as i64, hi as i64);
        if lo < format.min_raw() || hi - 1 > format.max_raw() {
            return Err(Error::InvalidDomain(format!("[{domain}) exceeds the {format} range")));
        }
        let span = (hi - lo) as u64;
        if !span.is_power_of_two() {
            return Err(Error::InvalidDomain(format!(
                "[{domain}) spans {span} steps of {format}, not a power of two"
            )));
        }
        if span < segments as u64 {
            return Err(Error::InvalidDomain(format!(
                "[{domain}) has only {span} representable points in {format}, fewer than {segments} segments"
            )));
        }
        let shift_amount = span.trailing_zeros() - segments.trailing_zeros();
        Ok(Self {
            bias: -lo,
            shift_amount,
            segments,
            first_raw: lo,
            last_raw: hi - 1,
        })
    }

    /// Uses only an add, a shift and a mask; out-of-domain inputs clamp to
    /// the nearest edge and are flagged.
    pub fn locate(&self, raw: i64) -> SegmentLocation {
        let clamped_raw = raw.clamp(self.first_raw, self.last_raw);
        let biased = (clamped_raw + self.bias) as u64;
        SegmentLocation {
            segment: (biased >> self.shift_amount) as usize,
            offset: (biased & ((1u64 << self.shift_amount) - 1)) as i64,
            clamped: clamped_raw != raw,
        }
    }

    pub fn raw_bounds(&self) -> (i64, i64) {
        (self.first_raw, self.last_raw)
    }
}

pub fn segment_index(x: FixedValue, map: &SegmentIndexMap) -> SegmentLocation {
    map.locate(x.raw() as i64)
}

/// Coefficients of one segment, highest power of the offset first.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentCoeffs {
    pub real: Vec<f64>,
    pub quantized: Vec<FixedValue>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LutTable {
    domain: Domain,
    degree: Degree,
    format: FixedFormat,
    index: SegmentIndexMap,
    coeffs: Vec<SegmentCoeffs>,
}

fn fit_segment(degree: Degree, x0: f64, h: f64) -> Vec<f64> {
    let y0 = libm::exp(x0);
    let y1 = libm::exp(x0 + h);
    match degree {
        Degree::Linear => vec![(y1 - y0) / h, y0],
        Degree::Quadratic => {
            // Lagrange through d = 0, h/2, h expanded in powers of d
            let ym = libm::exp(x0 + h / 2.0);
            let a = 2.0 * (y0 - 2.0 * ym + y1) / (h * h);
            let b = (4.0 * ym - 3.0 * y0 - y1) / h;
            vec![a, b, y0]
        }
    }
}

fn quantize_coeff(c: f64, largest: f64, format: FixedFormat) -> Result<FixedValue> {
    let v = FixedValue::try_quantize(c, format)?;
    if (v.to_f64() - c).abs() > format.step() / 2.0 {
        return Err(Error::Unrepresentable {
            magnitude: largest,
            format,
            required_int_bits: format.required_int_bits(largest),
        });
    }
    Ok(v)
}

/// Precompute the table for `spec` over `domain`.
pub fn build_lut(spec: ExpKernelSpec, domain: Domain) -> Result<LutTable> {
    let KernelKind::Lut { degree, segments } = spec.kind else {
        return Err(Error::InvalidKernel(format!("{} is not a LUT kernel", spec.kind)));
    };
    spec.kind.validate()?;
    let format = spec.format;
    let index = SegmentIndexMap::new(domain, segments, format)?;
    let h = domain.width() / segments as f64;
    let real: Vec<Vec<f64>> = (0..segments)
        .map(|p| fit_segment(degree, domain.lo + p as f64 * h, h))
        .collect();
    let largest = real.iter().flatten().fold(0f64, |m, c| m.max(c.abs()));
    let mut coeffs = Vec::with_capacity(segments as usize);
    for real in real {
        let quantized = real
            .iter()
            .map(|&c| quantize_coeff(c, largest, format))
            .collect::<Result<Vec<_>>>()?;
        coeffs.push(SegmentCoeffs { real, quantized });
    }
    Ok(LutTable {
        domain,
        degree,
        format,
        index,
        coeffs,
    })
}

impl LutTable {
    pub(crate) fn from_parts(
        domain: Domain,
        degree: Degree,
        format: FixedFormat,
        coeffs: Vec<SegmentCoeffs>,
    ) -> Result<Self> {
        let segments = coeffs.len() as u32;
        KernelKind::Lut { degree, segments }.validate()?;
        let index = SegmentIndexMap::new(domain, segments, format)?;
        if coeffs
            .iter()
            .any(|c| c.real.len() != degree.coeff_count() || c.quantized.len() != degree.coeff_count())
        {
            return Err(Error::InvalidKernel(format!(
                "{degree} segments need {} coefficients",
                degree.coeff_count()
            )));
        }
        Ok(Self {
            domain,
            degree,
            format,
            index,
            coeffs,
        })
    }

    pub fn domain(&self) -> Domain {
        self.domain
    }

    pub fn degree(&self) -> Degree {
        self.degree
    }

    pub fn format(&self) -> FixedFormat {
        self.format
    }

    pub fn segments(&self) -> u32 {
        self.index.segments
    }

    pub fn index_map(&self) -> &SegmentIndexMap {
        &self.index
    }

    pub fn shift_amount(&self) -> u32 {
        self.index.shift_amount
    }

    pub fn coeffs(&self) -> &[SegmentCoeffs] {
        &self.coeffs
    }

    pub fn segment_width(&self) -> f64 {
        self.domain.width() / self.segments() as f64
    }

    /// `[lo, hi)` of segment `p`.
    pub fn segment_bounds(&self, p: usize) -> (f64, f64) {
        let h = self.segment_width();
        let lo = self.domain.lo + p as f64 * h;
        (lo, lo + h)
    }

    /// Construction nodes: all segment edges, plus midpoints for quadratic
    /// tables.
    pub fn nodes(&self) -> Vec<f64> {
        let h = self.segment_width();
        let step = match self.degree {
            Degree::Linear => h,
            Degree::Quadratic => h / 2.0,
        };
        let n = self.domain.width() / step;
        (0..=n as usize).map(|i| self.domain.lo + i as f64 * step).collect()
    }

    /// Global-form intercept of a linear segment, `y1 - m * x1`.
    pub fn intercept(&self, p: usize) -> Option<f64> {
        if self.degree != Degree::Linear {
            return None;
        }
        let (_, x1) = self.segment_bounds(p);
        let m = self.coeffs[p].real[0];
        Some(libm::exp(x1) - m * x1)
    }

    /// Fixed-point evaluation; `x` must already be in the table format.
    pub fn eval_fixed(&self, x: FixedValue) -> (FixedValue, SegmentLocation) {
        debug_assert_eq!(x.format(), self.format);
        let loc = self.index.locate(x.raw() as i64);
        let d = FixedValue::from_raw(loc.offset, self.format);
        let y = horner_fixed(&self.coeffs[loc.segment].quantized, d);
        (y, loc)
    }

    /// Real-coefficient evaluation; inputs outside `[lo, hi]` are clamped.
    pub fn eval_real(&self, x: f64) -> (f64, bool) {
        let c = x.clamp(self.domain.lo, self.domain.hi);
        let h = self.segment_width();
        let p = (((c - self.domain.lo) / h).floor() as i64).clamp(0, self.segments() as i64 - 1) as usize;
        let d = c - self.segment_bounds(p).0;
        let y = self.coeffs[p].real.iter().fold(0.0, |acc, &k| acc * d + k);
        (y, c != x)
    }
}

pub fn eval_lut_exp(x: FixedValue, table: &LutTable) -> FixedValue {
    table.eval_fixed(x.requantize(table.format())).0
}

#[cfg(test)]
mod tests {
    use super::*;

    fn q(t: u32, f: u32) -> FixedFormat {
        FixedFormat::new(t, f).unwrap()
    }

    fn table(degree: Degree, p: u32, fmt: FixedFormat) -> LutTable {
        let spec = ExpKernelSpec::new(KernelKind::Lut { degree, segments: p }, fmt).unwrap();
        build_lut(spec, Domain::UNIT).unwrap()
    }

    #[test]
    fn eight_segment_linear_layout() {
        let t = table(Degree::Linear, 8, q(18, 15));
        assert_eq!(t.coeffs().len(), 8);
        assert_eq!(t.segment_width(), 0.25);
        assert_eq!(t.nodes().len(), 9);
        let m0 = t.coeffs()[0].real[0];
        let want = ((-0.75f64).exp() - (-1f64).exp()) / 0.25;
        assert!((m0 - want).abs() < 1e-14);
        let b0 = t.intercept(0).unwrap();
        assert!((-m0 + b0 - (-1f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_configurations() {
        let spec = ExpKernelSpec { kind: KernelKind::Lut { degree: Degree::Linear, segments: 7 }, format: q(18, 15) };
        assert!(matches!(build_lut(spec, Domain::UNIT), Err(Error::InvalidKernel(_))));
        let spec = ExpKernelSpec::new(KernelKind::Exact, q(18, 15)).unwrap();
        assert!(build_lut(spec, Domain::UNIT).is_err());
        // coefficients near e^1 need two integer bits
        let spec = ExpKernelSpec::new(KernelKind::lut(Degree::Linear, 64).unwrap(), q(16, 15)).unwrap();
        match build_lut(spec, Domain::UNIT) {
            Err(Error::Unrepresentable { required_int_bits, .. }) => assert_eq!(required_int_bits, 2),
            other => panic!("{other:?}"),
        }
        let spec = ExpKernelSpec::new(KernelKind::lut(Degree::Linear, 64).unwrap(), q(12, 6)).unwrap();
        assert!(build_lut(spec, Domain::new(-1.0, 0.5).unwrap()).is_err());
        assert!(build_lut(spec, Domain::new(-1.0 / 3.0, 1.0).unwrap()).is_err());
        // 128 points cannot host 256 segments
        let spec = ExpKernelSpec::new(KernelKind::lut(Degree::Linear, 256).unwrap(), q(12, 6)).unwrap();
        assert!(build_lut(spec, Domain::UNIT).is_err());
    }

    #[test]
    fn index_map_example() {
        let map = SegmentIndexMap::new(Domain::UNIT, 64, q(16, 15)).unwrap();
        assert_eq!(map.bias, 32768);
        assert_eq!(map.shift_amount, 10);
        assert_eq!(map.locate(0).segment, 32);
        assert_eq!(map.locate(-32768).segment, 0);
        assert_eq!(map.locate(32767).segment, 63);
        let out = map.locate(40000);
        assert!(out.clamped);
        assert_eq!(out.segment, 63);
    }

    #[test]
    fn index_map_exhaustive() {
        for (fmt, p) in [(q(16, 15), 64u32), (q(16, 15), 8), (q(18, 15), 4096), (q(12, 6), 32), (q(12, 6), 2)] {
            let map = SegmentIndexMap::new(Domain::UNIT, p, fmt).unwrap();
            let (lo, hi) = map.raw_bounds();
            let steps_per_segment = (hi - lo + 1) / p as i64;
            let mut prev = 0;
            for raw in lo..=hi {
                let loc = map.locate(raw);
                assert_eq!(loc.segment as i64, (raw - lo).div_euclid(steps_per_segment));
                assert!(loc.segment >= prev && loc.segment < p as usize);
                assert!(!loc.clamped);
                prev = loc.segment;
            }
        }
    }

    #[test]
    fn real_mode_passes_through_nodes() {
        for degree in [Degree::Linear, Degree::Quadratic] {
            for p in [2, 8, 64, 1024] {
                let t = table(degree, p, q(24, 15));
                for x in t.nodes() {
                    let (y, _) = t.eval_real(x);
                    let e = x.exp();
                    assert!((y - e).abs() <= 4.0 * f64::EPSILON * e, "{degree} P={p} x={x}: {y} vs {e}");
                }
            }
        }
    }

    #[test]
    fn linear_method_error_bound_p64() {
        let t = table(Degree::Linear, 64, q(18, 15));
        let h = 2.0 / 64.0;
        let bound = h * h * std::f64::consts::E / 8.0;
        assert!(bound < 3.33e-4);
        let n = 1_000_000;
        let mut worst = 0f64;
        for i in 0..n {
            let x = -1.0 + 2.0 * (i as f64 + 0.5) / n as f64;
            worst = worst.max((t.eval_real(x).0 - x.exp()).abs());
        }
        assert!(worst <= bound, "{worst}");
        assert!(worst > 0.9 * bound / std::f64::consts::E);
    }

    #[test]
    fn fixed_mode_tracks_exp() {
        let fmt = q(18, 15);
        for degree in [Degree::Linear, Degree::Quadratic] {
            let t = table(degree, 64, fmt);
            let (lo, hi) = t.index_map().raw_bounds();
            for raw in (lo..=hi).step_by(13) {
                let x = FixedValue::from_raw(raw, fmt);
                let y = eval_lut_exp(x, &t).to_f64();
                assert!((y - x.to_f64().exp()).abs() < 4e-4, "{degree} {raw}");
            }
        }
    }

    #[test]
    fn fixed_mode_monotone_exhaustive() {
        for fmt in [q(12, 6), q(16, 11), q(18, 15), q(20, 10)] {
            for degree in [Degree::Linear, Degree::Quadratic] {
                for p in [8u32, 16, 32, 64] {
                    let t = table(degree, p, fmt);
                    let (lo, hi) = t.index_map().raw_bounds();
                    let mut prev = i32::MIN;
                    for raw in lo..=hi {
                        let y = t.eval_fixed(FixedValue::from_raw(raw, fmt)).0.raw();
                        if degree == Degree::Linear {
                            assert!(y >= prev, "{fmt} {degree} P={p} raw {raw}");
                        }
                        assert!(y > 0);
                        prev = y;
                    }
                }
            }
        }
    }
}
