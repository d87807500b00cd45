//! Command-line front end. Exit status: 0 on success, 2 on usage errors,
//! 1 on runtime errors.

pub mod persist;

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::analysis::{compare_report, cumulative_ac_curve, energy_table, order_from_energies, BlockTransform, Ordering};
use crate::error::Error;
use crate::residuals::{extract_residuals, load_plane, synth_ar1, Channel, PlaneFormat, PredictionMode, ResidualBlockSet};
use crate::training::{
    convergence_monitor, fit_pipeline, ConvergenceParams, FittedKernel, TransformKind, DEFAULT_DELTA_M,
    DEFAULT_EPSILON, DEFAULT_MAX_SAMPLES, DEFAULT_SCALE,
};
use crate::transforms::{StagePlan, DEFAULT_BIAS_MARGIN};
use crate::viz::basis_grid;
use persist::{is_block_file, load_blocks, load_kernel, save_blocks, save_kernel, write_atomic};

#[derive(Debug, Parser)]
#[command(name = "saabkit", version, about = "Saab and DCT energy-compaction toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Synthesize AR(1) blocks into a block file.
    Gen(GenArgs),
    /// Intra-prediction residual blocks from a PGM or Y4M plane.
    Extract(ExtractArgs),
    /// Fit a kernel; also writes the convergence trace.
    Fit(FitArgs),
    /// DC/AC/total energy table for kernels on one block set.
    Analyze(CompareArgs),
    /// Cumulative AC energy curves for kernels on one block set.
    Curve(CompareArgs),
    /// Basis-function grid as a PGM image.
    Viz(VizArgs),
    /// Maximum reconstruction error of a kernel over a block set.
    Roundtrip(RoundtripArgs),
    /// Convergence trace of a block set's covariance.
    Convergence(ConvergenceArgs),
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long)]
    pub n: usize,
    #[arg(long)]
    pub rho: f64,
    #[arg(long, default_value_t = 1.0)]
    pub sigma: f64,
    #[arg(long)]
    pub count: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ExtractArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub n: usize,
    #[arg(long)]
    pub mode: PredictionMode,
    /// Y4M frame index.
    #[arg(long, default_value_t = 0)]
    pub frame: usize,
    /// Y4M plane: y, cb or cr.
    #[arg(long, default_value = "y")]
    pub channel: Channel,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainingArgs {
    #[arg(long, default_value_t = DEFAULT_EPSILON)]
    pub epsilon: f64,
    #[arg(long = "delta-m", default_value_t = DEFAULT_DELTA_M)]
    pub delta_m: usize,
    #[arg(long = "max-samples", default_value_t = DEFAULT_MAX_SAMPLES)]
    pub max_samples: usize,
    #[arg(long, default_value_t = DEFAULT_SCALE)]
    pub scale: f64,
}

impl TrainingArgs {
    fn params(&self) -> ConvergenceParams {
        ConvergenceParams {
            epsilon: self.epsilon,
            delta_m: self.delta_m,
            max_samples: self.max_samples,
            scale: self.scale,
        }
    }
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[arg(long)]
    pub kind: TransformKind,
    #[arg(long)]
    pub plan: Option<String>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long = "in")]
    pub input: Option<PathBuf>,
    #[command(flatten)]
    pub training: TrainingArgs,
    /// Bias margin over the largest training norm.
    #[arg(long, default_value_t = DEFAULT_BIAS_MARGIN)]
    pub margin: f64,
    #[arg(long)]
    pub out: PathBuf,
    /// Trace CSV path; defaults to the output path with extension `trace.csv`.
    #[arg(long)]
    pub trace: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    /// Kernel files plus exactly one block file.
    #[arg(long = "in", required = true)]
    pub inputs: Vec<PathBuf>,
    #[arg(long, default_value = "energy")]
    pub ordering: Ordering,
    #[arg(long)]
    pub out: PathBuf,
    /// Curve only: wide CSV with one column per kernel and the max gap.
    #[arg(long)]
    pub aligned: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct VizArgs {
    /// One kernel file, optionally a block file to measure energies on.
    #[arg(long = "in", required = true)]
    pub inputs: Vec<PathBuf>,
    #[arg(long, default_value_t = 8)]
    pub columns: usize,
    #[arg(long)]
    pub top: Option<usize>,
    #[arg(long, default_value = "energy")]
    pub ordering: Ordering,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct RoundtripArgs {
    /// One kernel file and one block file.
    #[arg(long = "in", required = true)]
    pub inputs: Vec<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ConvergenceArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[command(flatten)]
    pub training: TrainingArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Runtime(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Runtime(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Runtime(e.into())
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

/// Parses `argv` (program name first), runs the subcommand and returns the
/// exit status. Diagnostics go to stderr.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            2
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e}");
            1
        }
    }
}

pub fn execute(command: Command) -> CliResult<()> {
    match command {
        Command::Gen(a) => gen(a),
        Command::Extract(a) => extract(a),
        Command::Fit(a) => fit(a),
        Command::Analyze(a) => analyze(a),
        Command::Curve(a) => curve(a),
        Command::Viz(a) => viz(a),
        Command::Roundtrip(a) => roundtrip(a),
        Command::Convergence(a) => convergence(a),
    }
}

fn gen(a: GenArgs) -> CliResult<()> {
    let set = synth_ar1(a.rho, a.sigma, a.n, a.count, a.seed)?;
    save_blocks(&set, &a.out)?;
    Ok(())
}

fn extract(a: ExtractArgs) -> CliResult<()> {
    let bytes = fs::read(&a.input)?;
    let format = PlaneFormat::detect(&bytes).ok_or_else(|| Error::Parse {
        offset: 0,
        message: format!("{} is neither PGM nor Y4M", a.input.display()),
    })?;
    let plane = load_plane(&a.input, format, a.frame, a.channel)?;
    let set = extract_residuals(&plane, a.n, a.mode)?;
    save_blocks(&set, &a.out)?;
    Ok(())
}

fn default_trace_path(out: &Path) -> PathBuf {
    out.with_extension("trace.csv")
}

fn fit(a: FitArgs) -> CliResult<()> {
    let plan = a
        .plan
        .as_deref()
        .map(StagePlan::parse)
        .transpose()
        .map_err(|e| usage(format!("--plan: {e}")))?;
    if let (Some(p), Some(n)) = (&plan, a.n) {
        if p.block_side() != n {
            return Err(usage(format!("--plan {p} covers side {}, but --n is {n}", p.block_side())));
        }
    }
    if a.kind == TransformKind::Dct && a.plan.is_some() {
        return Err(usage("--plan applies only to --kind saab"));
    }

    let blocks = match &a.input {
        Some(p) => Some(load_blocks(p)?),
        None if a.kind == TransformKind::Dct => None,
        None => return Err(usage(format!("--in is required for --kind {}", a.kind))),
    };
    let n = match (&blocks, &plan, a.n) {
        (Some(b), _, _) => b.n,
        (None, Some(p), _) => p.block_side(),
        (None, None, Some(n)) => n,
        (None, None, None) => return Err(usage("--n or --in is required")),
    };
    if let Some(want) = a.n.or(plan.as_ref().map(StagePlan::block_side)) {
        if want != n {
            return Err(usage(format!("--n {want} does not match block side {n} of --in")));
        }
    }
    let plan = match plan {
        Some(p) => p,
        None => StagePlan::one_stage(n).map_err(|e| usage(format!("--n: {e}")))?,
    };

    let (kernel, trace) = match blocks {
        Some(set) => {
            let report = fit_pipeline(&set, a.kind, &plan, &a.training.params(), a.margin)?;
            (report.kernel, report.trace)
        }
        None => {
            let kernel = crate::transforms::dct_kernel(n)?;
            let trace = crate::training::ConvergenceTrace::empty(a.training.epsilon, a.training.delta_m);
            (FittedKernel::Affine(kernel), trace)
        }
    };
    save_kernel(&kernel, &a.out)?;
    let trace_path = a.trace.unwrap_or_else(|| default_trace_path(&a.out));
    write_atomic(&trace_path, trace.to_csv().as_bytes())?;
    Ok(())
}

/// Splits `--in` paths into kernels and the single block set.
fn load_inputs(inputs: &[PathBuf], need_blocks: bool) -> CliResult<(Vec<FittedKernel>, Option<ResidualBlockSet>)> {
    let mut kernels = Vec::new();
    let mut blocks: Option<ResidualBlockSet> = None;
    for path in inputs {
        let bytes = fs::read(path)?;
        if is_block_file(&bytes) {
            if blocks.is_some() {
                return Err(usage("--in: more than one block file given"));
            }
            blocks = Some(load_blocks(path)?);
        } else {
            kernels.push(load_kernel(path)?);
        }
    }
    if kernels.is_empty() {
        return Err(usage("--in: no kernel file given"));
    }
    if need_blocks && blocks.is_none() {
        return Err(usage("--in: a block file is required"));
    }
    Ok((kernels, blocks))
}

fn analyze(a: CompareArgs) -> CliResult<()> {
    let (kernels, blocks) = load_inputs(&a.inputs, true)?;
    let blocks = blocks.expect("checked by load_inputs");
    let tables = kernels
        .iter()
        .map(|k| energy_table(k, &blocks))
        .collect::<Result<Vec<_>, _>>()?;
    let cmp = compare_report(Vec::new(), tables)?;
    write_atomic(&a.out, cmp.table_csv().as_bytes())?;
    print!("{}", cmp.table_summary());
    Ok(())
}

fn curve(a: CompareArgs) -> CliResult<()> {
    let (kernels, blocks) = load_inputs(&a.inputs, true)?;
    let blocks = blocks.expect("checked by load_inputs");
    let curves = kernels
        .iter()
        .map(|k| cumulative_ac_curve(k, &blocks, a.ordering))
        .collect::<Result<Vec<_>, _>>()?;
    let cmp = compare_report(curves, Vec::new())?;
    write_atomic(&a.out, cmp.curve_csv().as_bytes())?;
    if let Some(p) = &a.aligned {
        write_atomic(p, cmp.aligned_csv().as_bytes())?;
    }
    Ok(())
}

fn viz(a: VizArgs) -> CliResult<()> {
    let (kernels, blocks) = load_inputs(&a.inputs, false)?;
    if kernels.len() != 1 {
        return Err(usage("--in: viz takes exactly one kernel file"));
    }
    if a.columns == 0 {
        return Err(usage("--columns must be at least 1"));
    }
    if a.top == Some(0) {
        return Err(usage("--top must be at least 1"));
    }
    let kernel = match &kernels[0] {
        FittedKernel::Affine(k) => k,
        FittedKernel::Klt(_) => {
            return Err(Failure::Runtime(Error::RejectedInput(
                "viz renders affine (DCT or Saab) kernels only".into(),
            )))
        }
    };
    let energies = match &blocks {
        Some(set) => energy_table(kernel, set)?.per_index,
        None => kernel.energies.clone(),
    };
    let order = order_from_energies(&energies, kernel.n, a.ordering, BlockTransform::is_dct(kernel))?;
    let img = basis_grid(kernel, a.columns, &order, a.top)?;
    write_atomic(&a.out, &img.to_pgm())?;
    Ok(())
}

fn roundtrip(a: RoundtripArgs) -> CliResult<()> {
    let (kernels, blocks) = load_inputs(&a.inputs, true)?;
    let blocks = blocks.expect("checked by load_inputs");
    let mut report = String::from("transform,blocks,max_abs_error\n");
    for k in &kernels {
        let FittedKernel::Affine(k) = k else {
            return Err(Failure::Runtime(Error::RejectedInput(
                "roundtrip needs an affine (DCT or Saab) kernel".into(),
            )));
        };
        let mut worst = 0.0f64;
        for b in &blocks.blocks {
            let back = k.inverse(&k.forward(b)?)?;
            for (x, y) in b.values().iter().zip(back.values()) {
                worst = worst.max((x - y).abs());
            }
        }
        report.push_str(&format!("{},{},{:.11e}\n", k.label(), blocks.len(), worst));
    }
    match &a.out {
        Some(p) => write_atomic(p, report.as_bytes())?,
        None => print!("{report}"),
    }
    Ok(())
}

fn convergence(a: ConvergenceArgs) -> CliResult<()> {
    let set = load_blocks(&a.input)?;
    let p = a.training.params();
    if !(p.scale > 0.0) {
        return Err(usage("--scale must be positive"));
    }
    let inv = 1.0 / p.scale;
    let stream = set
        .blocks
        .iter()
        .map(|b| b.values().iter().map(|v| v * inv).collect::<Vec<f64>>());
    let (_, trace) = convergence_monitor(stream, p.delta_m, p.epsilon, p.max_samples)?;
    write_atomic(&a.out, trace.to_csv().as_bytes())?;
    Ok(())
}
