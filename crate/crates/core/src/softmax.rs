//! Softmax pipelines: the real-valued oracle and the fixed-point datapath
//! (prescale, exp kernel, accumulate, normalize).

use crate::error::{Error, Result};
use crate::exp_kernels::ExpKernel;
use crate::fixed_point::{round_div, FixedFormat, FixedValue};
use crate::metrics::neumaier_sum;

/// Logits sharing one fixed-point format.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LogitsVector {
    values: Vec<FixedValue>,
    format: FixedFormat,
}

impl LogitsVector {
    pub fn new(values: Vec<FixedValue>) -> Result<Self> {
        let format = values.first().ok_or(Error::EmptyInput)?.format();
        if let Some(v) = values.iter().find(|v| v.format() != format) {
            return Err(Error::FormatMismatch {
                lhs: format,
                rhs: v.format(),
            });
        }
        Ok(Self { values, format })
    }

    pub fn quantize(reals: &[f64], format: FixedFormat) -> Result<Self> {
        let values = reals
            .iter()
            .map(|&x| FixedValue::try_quantize(x, format))
            .collect::<Result<Vec<_>>>()?;
        Self::new(values)
    }

    pub fn from_raw(raws: &[i64], format: FixedFormat) -> Result<Self> {
        Self::new(raws.iter().map(|&r| FixedValue::from_raw(r, format)).collect())
    }

    pub fn values(&self) -> &[FixedValue] {
        &self.values
    }

    pub fn format(&self) -> FixedFormat {
        self.format
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.values.iter().map(|v| v.to_f64()).collect()
    }

    /// True when no two elements share a raw value.
    pub fn is_distinct(&self) -> bool {
        let mut raws: Vec<i32> = self.values.iter().map(|v| v.raw()).collect();
        raws.sort_unstable();
        raws.windows(2).all(|w| w[0] != w[1])
    }
}

/// The `1/n` operand prescale realized as an arithmetic right shift.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct StabilizerConfig {
    pub shift_bits: u32,
}

pub fn prescale(x: &LogitsVector, cfg: StabilizerConfig) -> Result<LogitsVector> {
    let values = x
        .values
        .iter()
        .map(|v| v.shift_right(cfg.shift_bits))
        .collect::<Result<Vec<_>>>()?;
    Ok(LogitsVector {
        values,
        format: x.format,
    })
}

/// Index of the largest element; ties resolve to the lowest index.
pub fn argmax<T: PartialOrd + Copy>(values: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// `e^v_i / sum_j e^v_j` in `f64` with compensated summation.
pub fn softmax_exact(v: &[f64]) -> Result<Vec<f64>> {
    if v.is_empty() {
        return Err(Error::EmptyInput);
    }
    if let Some(&bad) = v.iter().find(|x| !x.is_finite()) {
        return Err(Error::NonFinite(bad));
    }
    // shifting by the maximum leaves the ratios unchanged and keeps exp finite
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = v.iter().map(|&x| libm::exp(x - max)).collect();
    let sum = neumaier_sum(exps.iter().copied());
    Ok(exps.into_iter().map(|e| e / sum).collect())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SoftmaxResult {
    pub probs: Vec<FixedValue>,
    /// Raw accumulator of the exponentials, in kernel-format units.
    pub sum_raw: i64,
    pub argmax: usize,
    pub clamp_count: usize,
    pub saturation_count: usize,
}

impl SoftmaxResult {
    pub fn probs_f64(&self) -> Vec<f64> {
        self.probs.iter().map(|p| p.to_f64()).collect()
    }
}

/// Method-error counterpart of [`SoftmaxResult`].
#[derive(Debug, Clone, PartialEq)]
pub struct RealSoftmax {
    pub probs: Vec<f64>,
    pub argmax: usize,
    pub clamp_count: usize,
}

/// Probabilities need no integer range: `q<t>.<t-1>`.
pub fn default_output_format(data: FixedFormat) -> FixedFormat {
    FixedFormat::new(data.total_bits(), data.total_bits() - 1).expect("t >= 2")
}

/// A configured accelerator: one exp kernel and one output format.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftmaxPipeline {
    kernel: ExpKernel,
    out_format: FixedFormat,
    stabilizer: StabilizerConfig,
}

impl SoftmaxPipeline {
    pub fn new(kernel: ExpKernel, out_format: FixedFormat) -> Self {
        Self {
            kernel,
            out_format,
            stabilizer: StabilizerConfig::default(),
        }
    }

    pub fn with_stabilizer(mut self, stabilizer: StabilizerConfig) -> Self {
        self.stabilizer = stabilizer;
        self
    }

    pub fn kernel(&self) -> &ExpKernel {
        &self.kernel
    }

    pub fn out_format(&self) -> FixedFormat {
        self.out_format
    }

    pub fn stabilizer(&self) -> StabilizerConfig {
        self.stabilizer
    }

    /// Fixed-point datapath.
    pub fn run(&self, v: &LogitsVector) -> Result<SoftmaxResult> {
        let v = prescale(v, self.stabilizer)?;
        let mut clamp_count = 0;
        let mut saturation_count = 0;
        let mut exps = Vec::with_capacity(v.len());
        // double-width accumulator, no intermediate saturation
        let mut sum_raw: i64 = 0;
        for &x in v.values() {
            let s = self.kernel.eval_fixed(x);
            clamp_count += s.clamped as usize;
            saturation_count += s.saturated as usize;
            sum_raw += s.value.raw() as i64;
            exps.push(s.value.raw() as i64);
        }
        if sum_raw <= 0 {
            return Err(Error::DegenerateDenominator {
                kernel: self.kernel.kind().to_string(),
                format: self.kernel.format(),
            });
        }
        let frac = self.out_format.frac_bits();
        let probs: Vec<FixedValue> = exps
            .iter()
            .map(|&e| {
                let raw = round_div((e as i128) << frac, sum_raw as i128);
                FixedValue::from_raw(raw as i64, self.out_format)
            })
            .collect();
        let raws: Vec<i32> = probs.iter().map(|p| p.raw()).collect();
        Ok(SoftmaxResult {
            argmax: argmax(&raws),
            probs,
            sum_raw,
            clamp_count,
            saturation_count,
        })
    }

    /// Real-coefficient kernel and real normalization, isolating the
    /// approximation error of the kernel. The prescale is applied in real
    /// arithmetic as a division by `2^shift`.
    pub fn run_real(&self, v: &[f64]) -> Result<RealSoftmax> {
        if v.is_empty() {
            return Err(Error::EmptyInput);
        }
        let scale = (1u64 << self.stabilizer.shift_bits) as f64;
        let mut clamp_count = 0;
        let exps: Vec<f64> = v
            .iter()
            .map(|&x| {
                let (y, clamped) = self.kernel.eval_real(x / scale);
                clamp_count += clamped as usize;
                y
            })
            .collect();
        let sum = neumaier_sum(exps.iter().copied());
        if sum.is_nan() || sum <= 0.0 {
            return Err(Error::DegenerateDenominator {
                kernel: self.kernel.kind().to_string(),
                format: self.kernel.format(),
            });
        }
        let probs: Vec<f64> = exps.iter().map(|e| e / sum).collect();
        Ok(RealSoftmax {
            argmax: argmax(&probs),
            probs,
            clamp_count,
        })
    }
}

pub fn softmax_approx(v: &LogitsVector, kernel: &ExpKernel, out_format: FixedFormat) -> Result<SoftmaxResult> {
    SoftmaxPipeline::new(kernel.clone(), out_format).run(v)
}

/// `y_i = w_i . (x / n) + b_i / n` in real arithmetic.
pub fn fc_layer_reference(w: &[Vec<f64>], x: &[f64], b: &[f64], n: f64) -> Result<Vec<f64>> {
    if w.len() != b.len() {
        return Err(Error::LengthMismatch {
            left: w.len(),
            right: b.len(),
        });
    }
    if let Some(row) = w.iter().find(|r| r.len() != x.len()) {
        return Err(Error::LengthMismatch {
            left: row.len(),
            right: x.len(),
        });
    }
    Ok(w.iter()
        .zip(b)
        .map(|(row, &bias)| {
            let dot: f64 = row.iter().zip(x).map(|(&wij, &xj)| wij * (xj / n)).sum();
            dot + bias / n
        })
        .collect())
}

/// Smallest power of two strictly greater than `k`.
pub fn stabilizing_scale(k: usize) -> f64 {
    (k + 1).next_power_of_two() as f64
}

#[cfg(test)]
mod tests {
    use std::f64::consts::E;

    use super::*;
    use crate::exp_kernels::{Degree, Domain, ExpKernelSpec, KernelKind};
    use proptest::prelude::*;

    fn q(t: u32, f: u32) -> FixedFormat {
        FixedFormat::new(t, f).unwrap()
    }

    fn pipeline(kind: KernelKind, data: FixedFormat) -> SoftmaxPipeline {
        let spec = ExpKernelSpec::for_data_format(kind, data, Domain::UNIT).unwrap();
        SoftmaxPipeline::new(ExpKernel::build(spec, Domain::UNIT).unwrap(), default_output_format(data))
    }

    fn all_kinds() -> Vec<KernelKind> {
        let mut v = vec![KernelKind::Exact];
        v.extend((1..=3).map(|o| KernelKind::Taylor { order: o }));
        for d in [Degree::Linear, Degree::Quadratic] {
            for p in [8, 64] {
                v.push(KernelKind::Lut { degree: d, segments: p });
            }
        }
        v
    }

    #[test]
    fn exact_examples() {
        for k in [1, 2, 7, 100] {
            let p = softmax_exact(&vec![0.3; k]).unwrap();
            assert!(p.iter().all(|&x| (x - 1.0 / k as f64).abs() < 1e-15));
        }
        assert_eq!(softmax_exact(&[0.0, 0.0]).unwrap(), vec![0.5, 0.5]);
        let p = softmax_exact(&[1.0, -1.0]).unwrap();
        assert!((p[0] - E * E / (E * E + 1.0)).abs() < 1e-15);
        assert!((p[0] - 0.880797).abs() < 1e-6 && (p[1] - 0.119203).abs() < 1e-6);
        assert!(softmax_exact(&[]).is_err());
        assert!(softmax_exact(&[f64::NAN]).is_err());
    }

    #[test]
    fn uniform_inputs_give_equal_probs() {
        let data = q(16, 15);
        for kind in all_kinds() {
            let v = LogitsVector::quantize(&[0.37; 9], data).unwrap();
            let r = pipeline(kind, data).run(&v).unwrap();
            let first = r.probs[0].raw();
            assert!(r.probs.iter().all(|p| (p.raw() - first).abs() <= 1));
            let sum: f64 = r.probs_f64().iter().sum();
            assert!((sum - 1.0).abs() <= 9.0 / 32768.0, "{kind}");
            assert_eq!(r.argmax, 0);
        }
    }

    #[test]
    fn exact_kernel_two_element_example() {
        let data = q(16, 15);
        let v = LogitsVector::quantize(&[0.5, -0.5], data).unwrap();
        let r = pipeline(KernelKind::Exact, data).run(&v).unwrap();
        for (p, want) in r.probs.iter().zip([0.731059, 0.268941]) {
            assert!((p.raw() - FixedValue::quantize(want, data).raw()).abs() <= 2);
        }
        assert_eq!(r.argmax, 0);
        assert_eq!(r.clamp_count, 0);
    }

    #[test]
    fn single_element_saturates_just_below_one() {
        let data = q(12, 6);
        let v = LogitsVector::quantize(&[0.1], data).unwrap();
        let r = pipeline(KernelKind::Taylor { order: 2 }, data).run(&v).unwrap();
        assert_eq!(r.probs[0].raw(), 2047);
    }

    #[test]
    fn degenerate_denominator_is_an_error() {
        let data = q(12, 6);
        // taylor1 at the domain lower bound is exactly zero
        let v = LogitsVector::quantize(&[-1.0, -1.0, -5.0], data).unwrap();
        let err = pipeline(KernelKind::Taylor { order: 1 }, data).run(&v).unwrap_err();
        match err {
            Error::DegenerateDenominator { kernel, .. } => assert_eq!(kernel, "taylor1"),
            other => panic!("{other:?}"),
        }
        assert_eq!(err_class_of(&[-1.0], data), crate::ErrorClass::Numeric);
    }

    fn err_class_of(v: &[f64], data: FixedFormat) -> crate::ErrorClass {
        let v = LogitsVector::quantize(v, data).unwrap();
        pipeline(KernelKind::Taylor { order: 1 }, data).run(&v).unwrap_err().class()
    }

    #[test]
    fn clamps_are_counted() {
        let data = q(20, 10);
        let v = LogitsVector::quantize(&[3.0, -2.5, 0.5, 400.0], data).unwrap();
        let r = pipeline(KernelKind::Taylor { order: 3 }, data).run(&v).unwrap();
        assert_eq!(r.clamp_count, 3);
        let r = pipeline(KernelKind::Exact, data).run(&v).unwrap();
        assert_eq!(r.clamp_count, 0);
        assert!(r.saturation_count >= 1);
    }

    #[test]
    fn prescale_examples() {
        let f = q(16, 15);
        let v = LogitsVector::quantize(&[0.8, -0.8, 0.123], f).unwrap();
        assert_eq!(prescale(&v, StabilizerConfig { shift_bits: 0 }).unwrap(), v);
        let s = prescale(&v, StabilizerConfig { shift_bits: 3 }).unwrap();
        assert!((s.values()[0].raw() - FixedValue::quantize(0.1, f).raw()).abs() <= 1);
        assert!((s.values()[1].raw() - FixedValue::quantize(-0.1, f).raw()).abs() <= 1);
        assert!(prescale(&v, StabilizerConfig { shift_bits: 16 }).is_err());
    }

    #[test]
    fn fc_layer_examples() {
        let k = 5;
        let zeros = vec![vec![0.0; k]; k];
        let y = fc_layer_reference(&zeros, &[0.5; 5], &[0.0; 5], 8.0).unwrap();
        assert!(y.iter().all(|&v| v == 0.0));
        let a = 1.0 - 1e-9;
        let w = vec![vec![a; k]; k];
        let y = fc_layer_reference(&w, &vec![a; k], &vec![a; k], (k + 1) as f64).unwrap();
        let bound = (k as f64 * a * a + a) / (k + 1) as f64;
        assert!(y.iter().all(|&v| (v - bound).abs() < 1e-12 && v < 1.0));
        // n = k lets the bias push past the boundary
        let y = fc_layer_reference(&w, &vec![a; k], &vec![a; k], k as f64).unwrap();
        assert!(y[0] > 1.0);
        assert!(fc_layer_reference(&w, &[0.1; 4], &[0.0; 5], 8.0).is_err());
        assert_eq!(stabilizing_scale(10), 16.0);
        assert_eq!(stabilizing_scale(7), 8.0);
        assert_eq!(stabilizing_scale(8), 16.0);
    }

    #[test]
    fn method_error_mode_matches_exact_for_reference_kernel() {
        let data = q(16, 15);
        let xs = [0.3, -0.7, 0.99, -0.2];
        let r = pipeline(KernelKind::Exact, data).run_real(&xs).unwrap();
        let e = softmax_exact(&xs).unwrap();
        for (a, b) in r.probs.iter().zip(&e) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    fn vector_strategy() -> impl Strategy<Value = (Vec<i64>, usize)> {
        (prop::collection::vec(-32768i64..32768, 1..40), 0..8usize)
    }

    proptest! {
        #[test]
        fn probabilities_in_range_and_normalized((raws, kind_ix) in vector_strategy()) {
            let data = q(16, 15);
            let kind = all_kinds()[kind_ix];
            let v = LogitsVector::from_raw(&raws, data).unwrap();
            let r = pipeline(kind, data).run(&v).unwrap();
            let k = raws.len() as f64;
            let probs = r.probs_f64();
            prop_assert!(probs.iter().all(|&p| (0.0..=1.0).contains(&p)));
            let sum: f64 = probs.iter().sum();
            prop_assert!((sum - 1.0).abs() <= k / 32768.0);
            prop_assert_eq!(r.argmax, argmax(&probs));
        }

        #[test]
        fn permutation_equivariance((raws, kind_ix) in vector_strategy(), rot in 0usize..40) {
            let data = q(16, 15);
            let p = pipeline(all_kinds()[kind_ix], data);
            let mut rotated = raws.clone();
            let n = rotated.len();
            rotated.rotate_left(rot % n);
            let a = p.run(&LogitsVector::from_raw(&raws, data).unwrap()).unwrap();
            let b = p.run(&LogitsVector::from_raw(&rotated, data).unwrap()).unwrap();
            let mut pa = a.probs.clone();
            pa.rotate_left(rot % n);
            prop_assert_eq!(pa, b.probs);
        }

        #[test]
        fn prescaled_inputs_stay_in_domain(raws in prop::collection::vec(-32768i64..32768, 1..20), s in 0u32..16) {
            let f = q(16, 15);
            let v = prescale(&LogitsVector::from_raw(&raws, f).unwrap(), StabilizerConfig { shift_bits: s }).unwrap();
            prop_assert!(v.to_f64().iter().all(|&x| (-1.0..1.0).contains(&x)));
        }
    }
}
