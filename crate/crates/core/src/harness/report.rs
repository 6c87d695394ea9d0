//! Report artifacts. Every file is rendered in memory before anything is
//! written, so a failure leaves no partial output.

use std::path::{Path, PathBuf};

use serde::Serialize;

use super::{reference_rmse, reference_top1_delta, RunRecord};
use crate::error::{Error, Result};
use crate::fixed_point::FixedFormat;
use crate::exp_kernels::KernelKind;
use crate::metrics::CSV_HEADER;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReportKind {
    Table,
    Topk,
}

#[derive(Serialize)]
struct SummaryEntry {
    method: KernelKind,
    format: FixedFormat,
    kernel_format: FixedFormat,
    n: usize,
    rmse: f64,
    variance: f64,
    stddev: f64,
    max_abs_err: f64,
    argmax_agreement: f64,
    clamp_count: usize,
    saturation_count: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    reference_rmse: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    reference_top1_delta: Option<f64>,
}

#[derive(Serialize)]
struct Summary<'a> {
    kind: ReportKind,
    config: &'a super::ExperimentConfig,
    entries: Vec<SummaryEntry>,
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:e}")).unwrap_or_default()
}

/// `(file name, contents)` pairs in write order.
pub fn render(record: &RunRecord, compare: bool) -> Vec<(&'static str, Vec<u8>)> {
    let cfg = &record.config;
    let extra = |kernel: KernelKind| -> (Option<f64>, Option<f64>) {
        match record.kind {
            super::ReportKind::Table => (compare.then(|| reference_rmse(kernel)).flatten(), None),
            super::ReportKind::Topk => (None, reference_top1_delta(cfg.k, kernel)),
        }
    };
    let extra_col = match record.kind {
        ReportKind::Table if compare => Some("reference_rmse"),
        ReportKind::Table => None,
        ReportKind::Topk => Some("reference_top1_delta"),
    };

    let mut report = String::from(CSV_HEADER);
    let mut trials = format!("trial,{CSV_HEADER}");
    if let Some(col) = extra_col {
        report.push(',');
        report.push_str(col);
    }
    report.push('\n');
    trials.push('\n');

    let mut entries = Vec::new();
    for e in &record.entries {
        let method = e.kernel.to_string();
        let label = e.config_label();
        report.push_str(&e.report.csv_row(&method, &label, cfg.seed));
        let (rr, rt) = extra(e.kernel);
        if extra_col.is_some() {
            report.push(',');
            report.push_str(&fmt_opt(rr.or(rt)));
        }
        report.push('\n');
        for (t, r) in e.trials.iter().enumerate() {
            trials.push_str(&format!("{t},{}\n", r.csv_row(&method, &label, cfg.seed)));
        }
        entries.push(SummaryEntry {
            method: e.kernel,
            format: e.format,
            kernel_format: e.kernel_format,
            n: e.report.n,
            rmse: e.report.rmse,
            variance: e.report.variance,
            stddev: e.report.stddev,
            max_abs_err: e.report.max_abs_err,
            argmax_agreement: e.report.argmax_agreement,
            clamp_count: e.clamp_count,
            saturation_count: e.saturation_count,
            reference_rmse: rr,
            reference_top1_delta: rt,
        });
    }
    let mut summary = serde_json::to_vec_pretty(&Summary {
        kind: record.kind,
        config: cfg,
        entries,
    })
    .expect("summary serializes");
    summary.push(b'\n');
    vec![
        ("report.csv", report.into_bytes()),
        ("trials.csv", trials.into_bytes()),
        ("summary.json", summary),
    ]
}

/// Writes `report.csv`, `trials.csv` and `summary.json` into `out_dir`.
pub fn write_artifacts(record: &mut RunRecord, out_dir: &Path, compare: bool) -> Result<Vec<PathBuf>> {
    let files = render(record, compare);
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut paths = Vec::new();
    for (name, bytes) in files {
        let path = out_dir.join(name);
        std::fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        paths.push(path);
    }
    record.artifacts.extend(paths.iter().cloned());
    Ok(paths)
}

#[cfg(test)]
mod tests {
    use super::super::{run_table_experiment, ExperimentConfig};
    use super::*;
    use crate::metrics::MeasurementMode;

    fn cfg() -> ExperimentConfig {
        ExperimentConfig {
            k: 100,
            trials: 2,
            seed: 42,
            mode: MeasurementMode::Quantized,
            ..Default::default()
        }
    }

    #[test]
    fn artifacts_are_byte_identical_across_runs() {
        let a = render(&run_table_experiment(&cfg()).unwrap(), true);
        let b = render(&run_table_experiment(&cfg()).unwrap(), true);
        assert_eq!(a, b);
    }

    #[test]
    fn report_layout() {
        let rec = run_table_experiment(&cfg()).unwrap();
        let files = render(&rec, true);
        let report = String::from_utf8(files[0].1.clone()).unwrap();
        let lines: Vec<&str> = report.lines().collect();
        assert_eq!(lines[0], format!("{CSV_HEADER},reference_rmse"));
        assert_eq!(lines.len(), 1 + rec.entries.len());
        assert!(lines[1].starts_with("taylor1,q16.15/q18.15,quantized,200,42,"));
        assert!(lines[1].ends_with(",3.13e-3"));
        let trials = String::from_utf8(files[1].1.clone()).unwrap();
        assert_eq!(trials.lines().count(), 1 + 2 * rec.entries.len());
        let plain = render(&rec, false);
        assert!(String::from_utf8(plain[0].1.clone()).unwrap().starts_with(&format!("{CSV_HEADER}\n")));
        let summary: serde_json::Value = serde_json::from_slice(&files[2].1).unwrap();
        assert_eq!(summary["entries"].as_array().unwrap().len(), rec.entries.len());
        assert_eq!(summary["config"]["seed"], 42);
    }

    #[test]
    fn writes_into_a_fresh_directory() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("nested/out");
        let mut rec = run_table_experiment(&cfg()).unwrap();
        let paths = write_artifacts(&mut rec, &out, false).unwrap();
        assert_eq!(paths.len(), 3);
        assert!(paths.iter().all(|p| p.exists()));
        assert_eq!(rec.artifacts, paths);
    }
}
