//! Deterministic SVG plots of a kernel against `e^x`.

use std::fmt::Write;

use clap::ValueEnum;

use crate::exp_kernels::{Domain, ExpKernel};
use crate::fixed_point::FixedValue;
use crate::metrics::MeasurementMode;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PlotKind {
    Fit,
    Error,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlotPoint {
    pub x: f64,
    pub exact: f64,
    pub approx: f64,
    /// `approx - exact`.
    pub error: f64,
}

/// `points` evenly spaced samples over `[lo, hi]`. In quantized mode each
/// `x` is first rounded into the kernel format.
pub fn plot_data(kernel: &ExpKernel, domain: Domain, points: usize, mode: MeasurementMode) -> Vec<PlotPoint> {
    let n = points.max(2);
    (0..n)
        .map(|i| {
            let t = domain.lo + domain.width() * i as f64 / (n - 1) as f64;
            let (x, approx) = match mode {
                MeasurementMode::MethodError => (t, kernel.eval_real(t).0),
                MeasurementMode::Quantized => {
                    let q = FixedValue::quantize(t, kernel.format());
                    (q.to_f64(), kernel.eval_fixed(q).value.to_f64())
                }
            };
            let exact = libm::exp(x);
            PlotPoint {
                x,
                exact,
                approx,
                error: approx - exact,
            }
        })
        .collect()
}

pub fn render_csv(data: &[PlotPoint]) -> String {
    let mut out = String::from("x,exp,approx,error\n");
    for p in data {
        let _ = writeln!(out, "{},{},{},{}", p.x, p.exact, p.approx, p.error);
    }
    out
}

const W: f64 = 640.0;
const H: f64 = 400.0;
const M: f64 = 60.0;

struct Axes {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Axes {
    fn px(&self, x: f64) -> f64 {
        M + (x - self.x0) / (self.x1 - self.x0) * (W - 2.0 * M)
    }

    fn py(&self, y: f64) -> f64 {
        H - M - (y - self.y0) / (self.y1 - self.y0) * (H - 2.0 * M)
    }
}

fn polyline(out: &mut String, axes: &Axes, pts: impl Iterator<Item = (f64, f64)>, style: &str) {
    let coords: Vec<String> = pts.map(|(x, y)| format!("{:.2},{:.2}", axes.px(x), axes.py(y))).collect();
    let _ = writeln!(out, r#"<polyline fill="none" {style} points="{}"/>"#, coords.join(" "));
}

pub fn render_svg(kernel: &ExpKernel, data: &[PlotPoint], kind: PlotKind) -> String {
    let xs = data.iter().map(|p| p.x);
    let x0 = xs.clone().fold(f64::INFINITY, f64::min);
    let x1 = xs.fold(f64::NEG_INFINITY, f64::max);
    let (y0, y1) = match kind {
        PlotKind::Fit => {
            let ys = data.iter().flat_map(|p| [p.exact, p.approx]);
            let lo = ys.clone().fold(f64::INFINITY, f64::min);
            let hi = ys.fold(f64::NEG_INFINITY, f64::max);
            let pad = 0.05 * (hi - lo).max(f64::MIN_POSITIVE);
            (lo - pad, hi + pad)
        }
        PlotKind::Error => {
            let m = data.iter().fold(0f64, |m, p| m.max(p.error.abs()));
            let m = if m > 0.0 { 1.1 * m } else { 1.0 };
            (-m, m)
        }
    };
    let axes = Axes { x0, x1, y0, y1 };
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let title = match kind {
        PlotKind::Fit => format!("{} vs exp(x), {}", kernel.kind(), kernel.format()),
        PlotKind::Error => format!("{} minus exp(x), {}", kernel.kind(), kernel.format()),
    };
    let _ = writeln!(out, r#"<text x="{}" y="30" text-anchor="middle">{title}</text>"#, W / 2.0);
    let _ = writeln!(
        out,
        r#"<rect x="{M}" y="{M}" width="{}" height="{}" fill="none" stroke="black"/>"#,
        W - 2.0 * M,
        H - 2.0 * M
    );
    for i in 0..=4 {
        let x = x0 + (x1 - x0) * i as f64 / 4.0;
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{}" text-anchor="middle">{x:.2}</text>"#,
            axes.px(x),
            H - M + 18.0
        );
        let y = y0 + (y1 - y0) * i as f64 / 4.0;
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{:.2}" text-anchor="end">{y:.3e}</text>"#,
            M - 6.0,
            axes.py(y) + 4.0
        );
    }
    match kind {
        PlotKind::Fit => {
            polyline(&mut out, &axes, data.iter().map(|p| (p.x, p.exact)), r##"stroke="#1f77b4" stroke-width="2""##);
            polyline(
                &mut out,
                &axes,
                data.iter().map(|p| (p.x, p.approx)),
                r##"stroke="#d62728" stroke-width="1.5" stroke-dasharray="6,3""##,
            );
            if let ExpKernel::Lut(table) = kernel {
                for node in table.nodes() {
                    let _ = writeln!(
                        out,
                        r##"<circle cx="{:.2}" cy="{:.2}" r="3.5" fill="#d62728"/>"##,
                        axes.px(node),
                        axes.py(libm::exp(node))
                    );
                }
            }
        }
        PlotKind::Error => {
            let _ = writeln!(
                out,
                r#"<line x1="{M}" y1="{:.2}" x2="{}" y2="{:.2}" stroke="gray"/>"#,
                axes.py(0.0),
                W - M,
                axes.py(0.0)
            );
            polyline(&mut out, &axes, data.iter().map(|p| (p.x, p.error)), r##"stroke="#d62728" stroke-width="1.5""##);
        }
    }
    out.push_str("</svg>\n");
    out
}
