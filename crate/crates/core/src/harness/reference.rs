//! Published figures the runs can be set beside. Tolerances belong to the
//! acceptance tests, not here.

use crate::exp_kernels::{Degree, KernelKind};

/// Softmax RMSE over a 1000-element vector in a 16-bit format.
pub fn reference_rmse(kind: KernelKind) -> Option<f64> {
    match kind {
        KernelKind::Taylor { order: 1 } => Some(3.13e-3),
        KernelKind::Taylor { order: 2 } => Some(2.97e-3),
        KernelKind::Taylor { order: 3 } => Some(4.18e-5),
        KernelKind::Lut {
            degree: Degree::Linear,
            segments: 64,
        } => Some(3.22e-6),
        KernelKind::Lut {
            degree: Degree::Quadratic,
            segments: 64,
        } => Some(2.31e-7),
        _ => None,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TopkScenario {
    /// 10 classes, 12-bit data with 6 integer bits.
    Classifier10,
    /// 1000 classes, 20-bit data with 10 integer bits.
    Classifier1000,
}

impl TopkScenario {
    pub fn for_k(k: usize) -> Option<Self> {
        match k {
            10 => Some(TopkScenario::Classifier10),
            1000 => Some(TopkScenario::Classifier1000),
            _ => None,
        }
    }
}

/// Top-1 accuracy of a kernel minus that of the exact design.
pub fn reference_top1_delta(k: usize, kind: KernelKind) -> Option<f64> {
    let lin = |segments| KernelKind::Lut {
        degree: Degree::Linear,
        segments,
    };
    let t = |order| KernelKind::Taylor { order };
    let table: &[(KernelKind, f64)] = match TopkScenario::for_k(k)? {
        TopkScenario::Classifier10 => &[
            (KernelKind::Exact, 0.0),
            (lin(32), -0.0005),
            (lin(16), -0.0005),
            (lin(8), -0.0003),
            (t(3), -0.0005),
            (t(2), -0.0016),
            (t(1), -0.0017),
        ],
        TopkScenario::Classifier1000 => &[
            (KernelKind::Exact, 0.0),
            (lin(64), -0.008),
            (lin(32), -0.06),
            (lin(16), -0.192),
            (t(3), 0.124),
            (t(2), 0.124),
            (t(1), -0.748),
        ],
    };
    table.iter().find(|(kk, _)| *kk == kind).map(|(_, d)| *d)
}
