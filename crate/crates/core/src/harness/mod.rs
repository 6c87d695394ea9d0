//! Seeded experiment runner.
//!
//! Each trial draws its logits from a ChaCha8 stream selected by the trial
//! index, so trials are independent of scheduling. Trials run on a rayon
//! pool and are merged in trial order.

mod reference;
mod report;

use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exp_kernels::{ExpKernel, ExpKernelSpec, KernelKind};
use crate::fixed_point::FixedFormat;
use crate::metrics::{argmax_agreement, error_moments, ErrorReport, MeasurementMode};
use crate::softmax::{
    argmax, default_output_format, fc_layer_reference, softmax_exact, stabilizing_scale, LogitsVector,
    SoftmaxPipeline, StabilizerConfig,
};
use crate::exp_kernels::Domain;

pub use reference::{reference_rmse, reference_top1_delta, TopkScenario};
pub use report::{render, write_artifacts, ReportKind};

pub const THREADS_ENV: &str = "APPROXMAX_THREADS";

/// How many redraws a `distinct` vector may need before giving up.
const MAX_REDRAWS: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InputSource {
    Uniform,
    FcLayer,
    #[serde(untagged)]
    File { file: PathBuf },
}

/// Which errors feed the metrics.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Aggregation {
    /// Element-wise differences of one softmax output vector.
    #[default]
    Vector,
    /// The exponential alone at every element, treated as independent
    /// scalar evaluations.
    Scalar,
}

fn default_range() -> [f64; 2] {
    [-1.0, 1.0]
}

fn default_trials() -> usize {
    1
}

fn is_default_range(r: &[f64; 2]) -> bool {
    *r == default_range()
}

fn is_zero(v: &u32) -> bool {
    *v == 0
}

fn is_false(v: &bool) -> bool {
    !*v
}

fn is_vector(a: &Aggregation) -> bool {
    *a == Aggregation::Vector
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kernels: Vec<KernelKind>,
    pub formats: Vec<FixedFormat>,
    pub k: usize,
    #[serde(default = "default_trials")]
    pub trials: usize,
    pub seed: u64,
    pub mode: MeasurementMode,
    pub source: InputSource,
    /// Prescale right shift applied inside each pipeline.
    #[serde(default, skip_serializing_if = "is_zero")]
    pub shift: u32,
    /// Open interval the uniform source draws from.
    #[serde(default = "default_range", skip_serializing_if = "is_default_range")]
    pub range: [f64; 2],
    /// Redraw vectors until their quantized logits are pairwise distinct.
    #[serde(default, skip_serializing_if = "is_false")]
    pub distinct: bool,
    #[serde(default, skip_serializing_if = "is_vector")]
    pub aggregation: Aggregation,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            kernels: vec![
                KernelKind::Taylor { order: 1 },
                KernelKind::Taylor { order: 2 },
                KernelKind::Taylor { order: 3 },
                "lut-linear-64".parse().expect("valid kind"),
                "lut-quadratic-64".parse().expect("valid kind"),
            ],
            formats: vec![FixedFormat::new(16, 15).expect("valid format")],
            k: 1000,
            trials: 1,
            seed: 0,
            mode: MeasurementMode::MethodError,
            source: InputSource::Uniform,
            shift: 0,
            range: default_range(),
            distinct: false,
            aggregation: Aggregation::Vector,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str, path: &Path) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            line: e.line(),
            message: e.to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text, path)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Checks the scalar invariants and builds every pipeline.
    pub fn validate(&self) -> Result<Vec<Configured>> {
        if self.k == 0 {
            return Err(Error::Config("k must be at least 1".into()));
        }
        if self.trials == 0 {
            return Err(Error::Config("trials must be at least 1".into()));
        }
        if self.kernels.is_empty() || self.formats.is_empty() {
            return Err(Error::Config("at least one kernel and one format are required".into()));
        }
        let [lo, hi] = self.range;
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::Config(format!("invalid range [{lo}, {hi}]")));
        }
        let mut out = Vec::new();
        for &format in &self.formats {
            if self.shift >= format.total_bits() {
                return Err(Error::ShiftOutOfRange {
                    shift: self.shift,
                    format,
                });
            }
            for &kind in &self.kernels {
                let built = ExpKernelSpec::for_data_format(kind, format, Domain::UNIT)
                    .and_then(|spec| ExpKernel::build(spec, Domain::UNIT))
                    .map_err(|e| e.context(format!("kernel {kind} for data format {format}")))?;
                out.push(Configured {
                    kind,
                    format,
                    pipeline: SoftmaxPipeline::new(built, default_output_format(format))
                        .with_stabilizer(StabilizerConfig { shift_bits: self.shift }),
                });
            }
        }
        Ok(out)
    }
}

/// One configured (kernel, format) pair.
#[derive(Debug, Clone)]
pub struct Configured {
    pub kind: KernelKind,
    pub format: FixedFormat,
    pub pipeline: SoftmaxPipeline,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunEntry {
    pub kernel: KernelKind,
    pub format: FixedFormat,
    pub kernel_format: FixedFormat,
    /// Mean over trials.
    pub report: ErrorReport,
    pub trials: Vec<ErrorReport>,
    pub clamp_count: usize,
    pub saturation_count: usize,
}

impl RunEntry {
    pub fn config_label(&self) -> String {
        format!("{}/{}", self.format, self.kernel_format)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub kind: ReportKind,
    pub config: ExperimentConfig,
    /// One entry per configured pair, formats outermost.
    pub entries: Vec<RunEntry>,
    /// Wall time per stage. Never written to artifacts.
    pub timings: Vec<(&'static str, Duration)>,
    pub artifacts: Vec<PathBuf>,
}

impl RunRecord {
    pub fn entry(&self, kernel: KernelKind, format: FixedFormat) -> Option<&RunEntry> {
        self.entries.iter().find(|e| e.kernel == kernel && e.format == format)
    }
}

pub fn trial_rng(seed: u64, trial: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial);
    rng
}

/// Draws from the open interval `]lo, hi[`.
fn open_uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let dist = Uniform::new(lo, hi);
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let x = dist.sample(rng);
        if x > lo {
            out.push(x);
        }
    }
    out
}

/// Parses one decimal value per line. Blank lines are skipped.
pub fn parse_vector(text: &str, path: &Path) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let value: f64 = line.parse().map_err(|_| Error::Parse {
            path: path.display().to_string(),
            line: i + 1,
            message: format!("`{line}` is not a decimal number"),
        })?;
        if !value.is_finite() {
            return Err(Error::Parse {
                path: path.display().to_string(),
                line: i + 1,
                message: "value must be finite".into(),
            });
        }
        out.push(value);
    }
    if out.is_empty() {
        return Err(Error::EmptyInput.context(path.display().to_string()));
    }
    Ok(out)
}

pub fn read_vector(path: &Path) -> Result<Vec<f64>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_vector(&text, path)
}

/// Real-valued logits for one trial.
pub fn generate_reals(source: &InputSource, range: [f64; 2], rng: &mut ChaCha8Rng, k: usize) -> Result<Vec<f64>> {
    match source {
        InputSource::Uniform => Ok(open_uniform(rng, range[0], range[1], k)),
        InputSource::FcLayer => {
            let w: Vec<Vec<f64>> = (0..k).map(|_| open_uniform(rng, -1.0, 1.0, k)).collect();
            let x = open_uniform(rng, -1.0, 1.0, k);
            let b = open_uniform(rng, -1.0, 1.0, k);
            fc_layer_reference(&w, &x, &b, stabilizing_scale(k))
        }
        InputSource::File { file } => {
            let v = read_vector(file)?;
            if v.len() != k {
                return Err(Error::Config(format!(
                    "{} holds {} values but k is {k}",
                    file.display(),
                    v.len()
                )));
            }
            Ok(v)
        }
    }
}

/// Raw values strictly inside `]lo, hi[`.
fn open_raw_bounds(range: [f64; 2], format: FixedFormat) -> (i64, i64) {
    let s = format.scale();
    let lo = ((range[0] * s).floor() as i64 + 1).max(format.min_raw());
    let hi = ((range[1] * s).ceil() as i64 - 1).min(format.max_raw());
    (lo, hi)
}

/// Quantizes one trial's reals. Synthetic sources draw from an open
/// interval, and rounding must not carry a value onto its boundary.
fn quantize_draw(source: &InputSource, range: [f64; 2], reals: &[f64], format: FixedFormat) -> Result<LogitsVector> {
    let v = LogitsVector::quantize(reals, format)?;
    let range = match source {
        InputSource::File { .. } => return Ok(v),
        InputSource::Uniform => range,
        InputSource::FcLayer => default_range(),
    };
    let (lo, hi) = open_raw_bounds(range, format);
    let raws: Vec<i64> = v.values().iter().map(|x| (x.raw() as i64).clamp(lo, hi)).collect();
    LogitsVector::from_raw(&raws, format)
}

pub fn generate_logits(source: &InputSource, seed: u64, trial: u64, k: usize, format: FixedFormat) -> Result<LogitsVector> {
    let reals = generate_reals(source, default_range(), &mut trial_rng(seed, trial), k)?;
    quantize_draw(source, default_range(), &reals, format)
}

/// Logits of one trial in every configured format.
fn draw_trial(cfg: &ExperimentConfig, trial: u64) -> Result<Vec<LogitsVector>> {
    let mut rng = trial_rng(cfg.seed, trial);
    for _ in 0..MAX_REDRAWS {
        let reals = generate_reals(&cfg.source, cfg.range, &mut rng, cfg.k)?;
        let vectors = cfg
            .formats
            .iter()
            .map(|&f| quantize_draw(&cfg.source, cfg.range, &reals, f))
            .collect::<Result<Vec<_>>>()?;
        if !cfg.distinct || vectors.iter().all(|v| v.is_distinct()) {
            return Ok(vectors);
        }
        if matches!(cfg.source, InputSource::File { .. }) {
            break;
        }
    }
    Err(Error::Config(format!(
        "could not draw {} pairwise-distinct logits in every format",
        cfg.k
    )))
}

struct TrialOutcome {
    report: ErrorReport,
    clamps: usize,
    saturations: usize,
}

fn evaluate(cfg: &ExperimentConfig, c: &Configured, logits: &LogitsVector) -> Result<TrialOutcome> {
    let x = logits.to_f64();
    let scale = (1u64 << cfg.shift) as f64;
    let kernel = c.pipeline.kernel();
    match cfg.aggregation {
        Aggregation::Vector => {
            let scaled: Vec<f64> = x.iter().map(|v| v / scale).collect();
            let exact = softmax_exact(&scaled)?;
            match cfg.mode {
                MeasurementMode::Quantized => {
                    let r = c.pipeline.run(logits)?;
                    let mut report = error_moments(&exact, &r.probs_f64(), cfg.mode)?;
                    report.argmax_agreement = argmax_agreement(&[exact], std::slice::from_ref(&r))?;
                    Ok(TrialOutcome {
                        report,
                        clamps: r.clamp_count,
                        saturations: r.saturation_count,
                    })
                }
                MeasurementMode::MethodError => {
                    let r = c.pipeline.run_real(&x)?;
                    let mut report = error_moments(&exact, &r.probs, cfg.mode)?;
                    report.argmax_agreement = (argmax(&exact) == r.argmax) as u8 as f64;
                    Ok(TrialOutcome {
                        report,
                        clamps: r.clamp_count,
                        saturations: 0,
                    })
                }
            }
        }
        Aggregation::Scalar => {
            let exact: Vec<f64> = x.iter().map(|&v| libm::exp(v)).collect();
            let mut clamps = 0;
            let mut saturations = 0;
            let approx: Vec<f64> = match cfg.mode {
                MeasurementMode::Quantized => logits
                    .values()
                    .iter()
                    .map(|&v| {
                        let s = kernel.eval_fixed(v);
                        clamps += s.clamped as usize;
                        saturations += s.saturated as usize;
                        s.value.to_f64()
                    })
                    .collect(),
                MeasurementMode::MethodError => x
                    .iter()
                    .map(|&v| {
                        let (y, clamped) = kernel.eval_real(v);
                        clamps += clamped as usize;
                        y
                    })
                    .collect(),
            };
            Ok(TrialOutcome {
                report: error_moments(&exact, &approx, cfg.mode)?,
                clamps,
                saturations,
            })
        }
    }
}

/// Thread count from `APPROXMAX_THREADS`, or rayon's default.
pub fn thread_cap() -> Result<Option<usize>> {
    match std::env::var(THREADS_ENV) {
        Err(_) => Ok(None),
        Ok(s) => match s.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(Some(n)),
            _ => Err(Error::Config(format!("{THREADS_ENV} must be a positive integer, got `{s}`"))),
        },
    }
}

fn run(cfg: &ExperimentConfig, kind: ReportKind) -> Result<RunRecord> {
    let start = Instant::now();
    let configured = cfg.validate()?;
    let built = start.elapsed();

    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = thread_cap()? {
        pool = pool.num_threads(n);
    }
    let pool = pool.build().map_err(|e| Error::Config(e.to_string()))?;

    let trial_start = Instant::now();
    let per_trial: Vec<Result<Vec<TrialOutcome>>> = pool.install(|| {
        (0..cfg.trials as u64)
            .into_par_iter()
            .map(|t| {
                let vectors = draw_trial(cfg, t)?;
                configured
                    .iter()
                    .map(|c| {
                        let ix = cfg.formats.iter().position(|&f| f == c.format).expect("configured format");
                        evaluate(cfg, c, &vectors[ix]).map_err(|e| {
                            e.context(format!("kernel {} in {} (trial {t}, seed {})", c.kind, c.format, cfg.seed))
                        })
                    })
                    .collect()
            })
            .collect()
    });
    // first failure in trial order, independent of scheduling
    let per_trial = per_trial.into_iter().collect::<Result<Vec<_>>>()?;
    let trials_elapsed = trial_start.elapsed();

    let agg_start = Instant::now();
    let mut entries = Vec::with_capacity(configured.len());
    for (i, c) in configured.iter().enumerate() {
        let trials: Vec<ErrorReport> = per_trial.iter().map(|t| t[i].report).collect();
        entries.push(RunEntry {
            kernel: c.kind,
            format: c.format,
            kernel_format: c.pipeline.kernel().format(),
            report: ErrorReport::mean(&trials)?,
            trials,
            clamp_count: per_trial.iter().map(|t| t[i].clamps).sum(),
            saturation_count: per_trial.iter().map(|t| t[i].saturations).sum(),
        });
    }
    Ok(RunRecord {
        kind,
        config: cfg.clone(),
        entries,
        timings: vec![("build", built), ("trials", trials_elapsed), ("aggregate", agg_start.elapsed())],
        artifacts: Vec::new(),
    })
}

pub fn run_table_experiment(cfg: &ExperimentConfig) -> Result<RunRecord> {
    run(cfg, ReportKind::Table)
}

/// Argmax agreement per kernel, for the two classifier scenarios with
/// published Top-1 figures.
pub fn run_topk_proxy(cfg: &ExperimentConfig) -> Result<RunRecord> {
    if matches!(cfg.source, InputSource::File { .. }) {
        return Err(Error::Config("the top-k proxy draws its own vectors; use `uniform` or `fc-layer`".into()));
    }
    if TopkScenario::for_k(cfg.k).is_none() {
        return Err(Error::Config(format!(
            "k = {} matches no top-k scenario (expected 10 or 1000)",
            cfg.k
        )));
    }
    if cfg.aggregation != Aggregation::Vector {
        return Err(Error::Config("the top-k proxy needs vector aggregation".into()));
    }
    run(cfg, ReportKind::Topk)
}
