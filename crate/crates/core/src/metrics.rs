//! Error metrics between an exact and an approximate probability vector.
//!
//! Errors are `e_i = exact_i - approx_i` on real (dequantized) values.
//! Variance is the population variance of `e`, so `rmse^2 = variance +
//! mean(e)^2`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::softmax::{argmax, SoftmaxResult};

/// Neumaier-compensated sum, evaluated in iteration order.
pub fn neumaier_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MeasurementMode {
    /// Every pipeline step in fixed point.
    Quantized,
    /// Real coefficients and real arithmetic.
    MethodError,
}

impl fmt::Display for MeasurementMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MeasurementMode::Quantized => "quantized",
            MeasurementMode::MethodError => "method-error",
        })
    }
}

impl FromStr for MeasurementMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "quantized" => Ok(MeasurementMode::Quantized),
            "method-error" => Ok(MeasurementMode::MethodError),
            _ => Err(Error::Config(format!("unknown mode `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    pub rmse: f64,
    pub variance: f64,
    pub stddev: f64,
    pub max_abs_err: f64,
    pub argmax_agreement: f64,
    pub n: usize,
    pub mode: MeasurementMode,
}

pub const CSV_HEADER: &str = "method,config,mode,n,seed,rmse,variance,stddev,max_abs_err,argmax_agreement";

impl ErrorReport {
    pub fn csv_row(&self, method: &str, config: &str, seed: u64) -> String {
        format!(
            "{method},{config},{},{},{seed},{:e},{:e},{:e},{:e},{}",
            self.mode, self.n, self.rmse, self.variance, self.stddev, self.max_abs_err, self.argmax_agreement
        )
    }

    /// Arithmetic mean of each metric; `n` becomes the total sample count.
    pub fn mean(reports: &[ErrorReport]) -> Result<ErrorReport> {
        let first = reports.first().ok_or(Error::TooFewSamples { needed: 1, got: 0 })?;
        let count = reports.len() as f64;
        let avg = |f: fn(&ErrorReport) -> f64| neumaier_sum(reports.iter().map(f)) / count;
        Ok(ErrorReport {
            rmse: avg(|r| r.rmse),
            variance: avg(|r| r.variance),
            stddev: avg(|r| r.stddev),
            max_abs_err: avg(|r| r.max_abs_err),
            argmax_agreement: avg(|r| r.argmax_agreement),
            n: reports.iter().map(|r| r.n).sum(),
            mode: first.mode,
        })
    }
}

/// One-pass accumulator: Welford for mean and variance, a compensated sum
/// of squares for the RMSE. Partial accumulators merge exactly in the
/// order they are combined.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ErrorAccumulator {
    count: usize,
    mean: f64,
    m2: f64,
    sum_sq: f64,
    sum_sq_comp: f64,
    max_abs: f64,
}

impl ErrorAccumulator {
    pub fn push(&mut self, err: f64) {
        self.count += 1;
        let delta = err - self.mean;
        self.mean += delta / self.count as f64;
        self.m2 += delta * (err - self.mean);
        let sq = err * err;
        let t = self.sum_sq + sq;
        if self.sum_sq.abs() >= sq {
            self.sum_sq_comp += (self.sum_sq - t) + sq;
        } else {
            self.sum_sq_comp += (sq - t) + self.sum_sq;
        }
        self.sum_sq = t;
        self.max_abs = self.max_abs.max(err.abs());
    }

    /// Chan et al. parallel combination.
    pub fn merge(&mut self, other: &ErrorAccumulator) {
        if other.count == 0 {
            return;
        }
        if self.count == 0 {
            *self = *other;
            return;
        }
        let n = (self.count + other.count) as f64;
        let delta = other.mean - self.mean;
        self.m2 += other.m2 + delta * delta * self.count as f64 * other.count as f64 / n;
        self.mean += delta * other.count as f64 / n;
        self.count += other.count;
        let total = neumaier_sum([self.sum_sq, self.sum_sq_comp, other.sum_sq, other.sum_sq_comp]);
        self.sum_sq = total;
        self.sum_sq_comp = 0.0;
        self.max_abs = self.max_abs.max(other.max_abs);
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn rmse(&self) -> f64 {
        ((self.sum_sq + self.sum_sq_comp) / self.count as f64).sqrt()
    }

    pub fn finish(&self, mode: MeasurementMode, argmax_agreement: f64) -> Result<ErrorReport> {
        if self.count < 2 {
            return Err(Error::TooFewSamples {
                needed: 2,
                got: self.count,
            });
        }
        let variance = (self.m2 / self.count as f64).max(0.0);
        Ok(ErrorReport {
            rmse: self.rmse(),
            variance,
            stddev: variance.sqrt(),
            max_abs_err: self.max_abs,
            argmax_agreement,
            n: self.count,
            mode,
        })
    }
}

fn check_lengths(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    Ok(())
}

pub fn rmse(exact: &[f64], approx: &[f64]) -> Result<f64> {
    check_lengths(exact, approx)?;
    if exact.is_empty() {
        return Err(Error::TooFewSamples { needed: 1, got: 0 });
    }
    let mut acc = ErrorAccumulator::default();
    exact.iter().zip(approx).for_each(|(a, b)| acc.push(a - b));
    Ok(acc.rmse())
}

pub fn max_abs_err(exact: &[f64], approx: &[f64]) -> Result<f64> {
    check_lengths(exact, approx)?;
    Ok(exact.iter().zip(approx).fold(0f64, |m, (a, b)| m.max((a - b).abs())))
}

/// Full report for one vector pair. `argmax_agreement` is 1 or 0.
pub fn error_moments(exact: &[f64], approx: &[f64], mode: MeasurementMode) -> Result<ErrorReport> {
    check_lengths(exact, approx)?;
    let mut acc = ErrorAccumulator::default();
    exact.iter().zip(approx).for_each(|(a, b)| acc.push(a - b));
    let agree = (argmax(exact) == argmax(approx)) as u8 as f64;
    acc.finish(mode, agree)
}

pub fn argmax_agreement(exact: &[Vec<f64>], approx: &[SoftmaxResult]) -> Result<f64> {
    if exact.len() != approx.len() {
        return Err(Error::LengthMismatch {
            left: exact.len(),
            right: approx.len(),
        });
    }
    if exact.is_empty() {
        return Err(Error::TooFewSamples { needed: 1, got: 0 });
    }
    let hits = exact.iter().zip(approx).filter(|(e, a)| argmax(e) == a.argmax).count();
    Ok(hits as f64 / exact.len() as f64)
}
