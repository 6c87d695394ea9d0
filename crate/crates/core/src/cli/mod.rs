//! Command-line front end.

mod plot;

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::error::{Error, ErrorClass, Result};
use crate::exp_kernels::{export_lut, Degree, Domain, ExpKernel, ExpKernelSpec, KernelKind, LutExportFormat};
use crate::fixed_point::{FixedFormat, FixedValue};
use crate::harness::{
    read_vector, run_table_experiment, run_topk_proxy, write_artifacts, Aggregation, ExperimentConfig, InputSource,
    RunRecord,
};
use crate::metrics::MeasurementMode;
use crate::softmax::{default_output_format, LogitsVector, SoftmaxPipeline, StabilizerConfig};

pub use plot::{plot_data, render_svg, PlotKind, PlotPoint};

pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_IO: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;

pub fn exit_code(class: ErrorClass) -> i32 {
    match class {
        ErrorClass::Config => EXIT_CONFIG,
        ErrorClass::Io => EXIT_IO,
        ErrorClass::Numeric => EXIT_NUMERIC,
    }
}

#[derive(Debug, Parser)]
#[command(name = "approxmax", version, about = "Fixed-point approximate softmax model and error harness")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build a LUT for the exponential and export its coefficients.
    GenLut(GenLutArgs),
    /// Run one fixed-point softmax over a vector file.
    Softmax(SoftmaxArgs),
    /// Run an RMSE sweep over kernels and formats.
    Sweep(SweepArgs),
    /// Run the argmax-agreement proxy for Top-1 accuracy.
    Topk(SweepArgs),
    /// Render a fit or error plot of a kernel as SVG.
    Plot(PlotArgs),
}

#[derive(Debug, Args)]
pub struct GenLutArgs {
    /// Segment count P, a power of two.
    #[arg(long)]
    pub samples: u32,
    /// Interpolation degree.
    #[arg(long, value_parser = parse_degree)]
    pub degree: Degree,
    /// Data format; integer bits are widened until e^hi fits.
    #[arg(long, default_value = "q16.15")]
    pub format: FixedFormat,
    /// Domain as `lo,hi`.
    #[arg(long, default_value = "-1,1", allow_hyphen_values = true)]
    pub domain: Domain,
    /// Output path; `.json` selects JSON, anything else CSV. Stdout if absent.
    #[arg(long)]
    pub lut_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SoftmaxArgs {
    /// Vector file, one decimal value per line.
    #[arg(long)]
    pub input: PathBuf,
    /// Exponential kernel.
    #[arg(long, default_value = "exact")]
    pub kernel: KernelKind,
    /// Data format of the logits.
    #[arg(long, default_value = "q16.15")]
    pub format: FixedFormat,
    /// Probability format; defaults to q<t>.<t-1> of the data format.
    #[arg(long)]
    pub out_format: Option<FixedFormat>,
    /// Prescale right shift.
    #[arg(long, default_value_t = 0)]
    pub shift: u32,
    /// Output CSV path. Stdout if absent.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// JSON experiment config. Flags below override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Kernels, comma separated.
    #[arg(long, alias = "kernels", value_delimiter = ',')]
    pub kernel: Vec<KernelKind>,
    /// Data formats, comma separated.
    #[arg(long, alias = "formats", value_delimiter = ',')]
    pub format: Vec<FixedFormat>,
    /// Vector length.
    #[arg(long)]
    pub k: Option<usize>,
    /// Trial count.
    #[arg(long)]
    pub trials: Option<usize>,
    /// 64-bit RNG seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Measurement mode.
    #[arg(long, value_parser = parse_mode)]
    pub mode: Option<MeasurementMode>,
    /// Input source.
    #[arg(long, value_enum)]
    pub source: Option<SourceArg>,
    /// Vector file; implies the file source.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Prescale right shift.
    #[arg(long)]
    pub shift: Option<u32>,
    /// Uniform source interval as `lo,hi`.
    #[arg(long, allow_hyphen_values = true)]
    pub range: Option<Domain>,
    /// Redraw vectors until the quantized logits are pairwise distinct.
    #[arg(long)]
    pub distinct: bool,
    /// Error aggregation.
    #[arg(long, value_enum)]
    pub aggregation: Option<AggregationArg>,
    /// Directory for report.csv, trials.csv and summary.json.
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Add the published reference values as an extra column.
    #[arg(long)]
    pub compare_paper: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SourceArg {
    Uniform,
    FcLayer,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum AggregationArg {
    Vector,
    Scalar,
}

#[derive(Debug, Args)]
pub struct PlotArgs {
    /// `fit` draws e^x and the approximation; `error` draws approximation minus e^x.
    #[arg(long, value_enum)]
    pub kind: PlotKind,
    /// Kernel to plot.
    #[arg(long, default_value = "lut-linear-8")]
    pub kernel: KernelKind,
    /// Data format; sets the kernel datapath.
    #[arg(long, default_value = "q16.15")]
    pub format: FixedFormat,
    /// Evaluate bit-accurately or with real coefficients.
    #[arg(long, value_parser = parse_mode, default_value = "method-error")]
    pub mode: MeasurementMode,
    /// Number of evenly spaced sample points over the domain.
    #[arg(long, default_value_t = 513)]
    pub points: usize,
    /// SVG output path.
    #[arg(long)]
    pub out: PathBuf,
    /// Optional CSV of the sampled curves.
    #[arg(long)]
    pub data_out: Option<PathBuf>,
}

fn parse_degree(s: &str) -> std::result::Result<Degree, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_mode(s: &str) -> std::result::Result<MeasurementMode, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { 0 };
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(e.class())
        }
    }
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenLut(a) => gen_lut(a),
        Command::Softmax(a) => softmax(a),
        Command::Sweep(a) => sweep(a, false),
        Command::Topk(a) => sweep(a, true),
        Command::Plot(a) => plot_cmd(a),
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn write_stdout(bytes: &[u8]) -> Result<()> {
    std::io::stdout().write_all(bytes).map_err(|e| Error::io("<stdout>", e))
}

fn gen_lut(a: GenLutArgs) -> Result<()> {
    let kind = KernelKind::lut(a.degree, a.samples)?;
    let spec = ExpKernelSpec::for_data_format(kind, a.format, a.domain)?;
    let kernel = ExpKernel::build(spec, a.domain)?;
    let ExpKernel::Lut(table) = &kernel else {
        unreachable!("a LUT kind builds a LUT kernel")
    };
    let fmt = a.lut_out.as_deref().map(LutExportFormat::from_path).unwrap_or(LutExportFormat::Csv);
    let bytes = export_lut(table, fmt);

    // dense scan over every representable input of the domain
    let (lo, hi) = a.domain.raw_bounds(table.format());
    let mut method_err = 0f64;
    let mut quant_err = 0f64;
    for raw in lo..=hi {
        let x = FixedValue::from_raw(raw, table.format());
        let e = libm::exp(x.to_f64());
        method_err = method_err.max((kernel.eval_real(x.to_f64()).0 - e).abs());
        quant_err = quant_err.max((kernel.eval_fixed(x).value.to_f64() - e).abs());
    }
    let summary = format!(
        "segments={} degree={} format={} shift_amount={} bias={} max_method_error={:e} max_quantized_error={:e}\n",
        table.segments(),
        table.degree(),
        table.format(),
        table.shift_amount(),
        table.index_map().bias,
        method_err,
        quant_err
    );
    match &a.lut_out {
        Some(path) => {
            write_file(path, &bytes)?;
            print!("{summary}");
        }
        None => {
            write_stdout(&bytes)?;
            eprint!("{summary}");
        }
    }
    Ok(())
}

fn softmax(a: SoftmaxArgs) -> Result<()> {
    let reals = read_vector(&a.input)?;
    let logits = LogitsVector::quantize(&reals, a.format)?;
    let spec = ExpKernelSpec::for_data_format(a.kernel, a.format, Domain::UNIT)?;
    let kernel = ExpKernel::build(spec, Domain::UNIT)?;
    let out_format = a.out_format.unwrap_or_else(|| default_output_format(a.format));
    let result = SoftmaxPipeline::new(kernel, out_format)
        .with_stabilizer(StabilizerConfig { shift_bits: a.shift })
        .run(&logits)?;
    let mut csv = String::from("index,prob_raw,prob_real\n");
    for (i, p) in result.probs.iter().enumerate() {
        csv.push_str(&format!("{i},{},{}\n", p.raw(), p.to_f64()));
    }
    match &a.output {
        Some(path) => {
            write_file(path, csv.as_bytes())?;
            println!(
                "argmax={} clamped={} saturated={}",
                result.argmax, result.clamp_count, result.saturation_count
            );
        }
        None => write_stdout(csv.as_bytes())?,
    }
    Ok(())
}

fn topk_default() -> ExperimentConfig {
    ExperimentConfig {
        kernels: ["exact", "taylor1", "taylor2", "taylor3", "lut-linear-8", "lut-linear-16", "lut-linear-32"]
            .iter()
            .map(|s| s.parse().expect("valid kind"))
            .collect(),
        formats: vec![FixedFormat::new(12, 6).expect("valid format")],
        k: 10,
        trials: 10_000,
        mode: MeasurementMode::Quantized,
        distinct: true,
        ..Default::default()
    }
}

pub fn build_config(a: &SweepArgs, topk: bool) -> Result<ExperimentConfig> {
    let mut cfg = match &a.config {
        Some(path) => ExperimentConfig::load(path)?,
        None if topk => topk_default(),
        None => ExperimentConfig::default(),
    };
    if !a.kernel.is_empty() {
        cfg.kernels = a.kernel.clone();
    }
    if !a.format.is_empty() {
        cfg.formats = a.format.clone();
    }
    if let Some(k) = a.k {
        cfg.k = k;
    }
    if let Some(t) = a.trials {
        cfg.trials = t;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(m) = a.mode {
        cfg.mode = m;
    }
    match (a.source, &a.input) {
        (Some(_), Some(_)) => return Err(Error::Config("--source and --input are exclusive".into())),
        (Some(SourceArg::Uniform), None) => cfg.source = InputSource::Uniform,
        (Some(SourceArg::FcLayer), None) => cfg.source = InputSource::FcLayer,
        (None, Some(path)) => cfg.source = InputSource::File { file: path.clone() },
        (None, None) => {}
    }
    if let Some(s) = a.shift {
        cfg.shift = s;
    }
    if let Some(r) = a.range {
        cfg.range = [r.lo, r.hi];
    }
    if a.distinct {
        cfg.distinct = true;
    }
    if let Some(agg) = a.aggregation {
        cfg.aggregation = match agg {
            AggregationArg::Vector => Aggregation::Vector,
            AggregationArg::Scalar => Aggregation::Scalar,
        };
    }
    Ok(cfg)
}

fn print_record(record: &RunRecord, topk: bool) {
    for e in &record.entries {
        if topk {
            println!("{:<18} {:<8} argmax_agreement={}", e.kernel.to_string(), e.format.to_string(), e.report.argmax_agreement);
        } else {
            println!(
                "{:<18} {:<8} rmse={:e} variance={:e} stddev={:e}",
                e.kernel.to_string(),
                e.format.to_string(),
                e.report.rmse,
                e.report.variance,
                e.report.stddev
            );
        }
    }
}

fn sweep(a: SweepArgs, topk: bool) -> Result<()> {
    let cfg = build_config(&a, topk)?;
    let mut record = if topk {
        run_topk_proxy(&cfg)?
    } else {
        run_table_experiment(&cfg)?
    };
    write_artifacts(&mut record, &a.out_dir, a.compare_paper)?;
    print_record(&record, topk);
    Ok(())
}

fn plot_cmd(a: PlotArgs) -> Result<()> {
    if a.points < 2 {
        return Err(Error::Config("--points must be at least 2".into()));
    }
    let spec = ExpKernelSpec::for_data_format(a.kernel, a.format, Domain::UNIT)?;
    let kernel = ExpKernel::build(spec, Domain::UNIT)?;
    let data = plot_data(&kernel, Domain::UNIT, a.points, a.mode);
    let svg = render_svg(&kernel, &data, a.kind);
    let csv = plot::render_csv(&data);
    write_file(&a.out, svg.as_bytes())?;
    if let Some(path) = &a.data_out {
        write_file(path, csv.as_bytes())?;
    }
    Ok(())
}
