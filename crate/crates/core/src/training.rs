//! End-to-end kernel fitting with covariance convergence monitoring.

use std::fmt;
use std::str::FromStr;

use crate::error::{rejected, Error, Result};
use crate::linalg::{frobenius_diff, CovarianceAccumulator, SymMatrix};
use crate::residuals::ResidualBlockSet;
use crate::transforms::{
    dct_kernel, klt_kernel, saab_fit_multistage, AffineOrthoKernel, KernelMeta, KltKernel,
    SaabCascade, StagePlan,
};

pub const DEFAULT_EPSILON: f64 = 1.5e-4;
pub const DEFAULT_DELTA_M: usize = 5000;
pub const DEFAULT_SCALE: f64 = 255.0;
pub const DEFAULT_MAX_SAMPLES: usize = 1_000_000;

#[derive(Clone, Debug, PartialEq)]
pub struct ConvergenceParams {
    pub epsilon: f64,
    pub delta_m: usize,
    pub max_samples: usize,
    /// Samples are divided by this before entering the monitored covariance.
    pub scale: f64,
}

impl Default for ConvergenceParams {
    fn default() -> Self {
        Self {
            epsilon: DEFAULT_EPSILON,
            delta_m: DEFAULT_DELTA_M,
            max_samples: DEFAULT_MAX_SAMPLES,
            scale: DEFAULT_SCALE,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Checkpoint {
    pub samples: usize,
    pub diff: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvergenceTrace {
    pub checkpoints: Vec<Checkpoint>,
    pub epsilon: f64,
    pub delta_m: usize,
    pub converged_at: Option<usize>,
    /// Samples consumed when monitoring stopped.
    pub samples_seen: usize,
}

impl ConvergenceTrace {
    pub fn empty(epsilon: f64, delta_m: usize) -> Self {
        Self {
            checkpoints: Vec::new(),
            epsilon,
            delta_m,
            converged_at: None,
            samples_seen: 0,
        }
    }

    /// `M,frobenius_diff` rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("M,frobenius_diff\n");
        for c in &self.checkpoints {
            out.push_str(&format!("{},{:.11e}\n", c.samples, c.diff));
        }
        out
    }
}

/// Consumes samples until the covariance at `M` and at `M - delta_m` differ
/// by less than `epsilon` in Frobenius norm, or `max_samples` is reached.
///
/// Checkpoints fall at every multiple of `delta_m` from `2 * delta_m` on.
pub fn convergence_monitor<I, S>(
    stream: I,
    delta_m: usize,
    epsilon: f64,
    max_samples: usize,
) -> Result<(CovarianceAccumulator, ConvergenceTrace)>
where
    I: IntoIterator<Item = S>,
    S: AsRef<[f64]>,
{
    if delta_m == 0 {
        return Err(rejected("delta_m must be at least 1"));
    }
    if !(epsilon > 0.0) {
        return Err(rejected(format!("epsilon must be positive, got {epsilon}")));
    }
    let mut acc: Option<CovarianceAccumulator> = None;
    let mut previous: Option<SymMatrix> = None;
    let mut trace = ConvergenceTrace::empty(epsilon, delta_m);

    for sample in stream.into_iter().take(max_samples) {
        let sample = sample.as_ref();
        let acc = acc.get_or_insert_with(|| CovarianceAccumulator::new(sample.len()));
        acc.accumulate(sample)?;
        let seen = acc.count() as usize;
        trace.samples_seen = seen;
        if !seen.is_multiple_of(delta_m) {
            continue;
        }
        let cov = acc.covariance()?;
        if let Some(prev) = &previous {
            let diff = frobenius_diff(&cov, prev)?;
            trace.checkpoints.push(Checkpoint { samples: seen, diff });
            if diff < epsilon {
                trace.converged_at = Some(seen);
                break;
            }
        }
        previous = Some(cov);
    }

    match acc {
        Some(acc) if trace.samples_seen >= 2 * delta_m => Ok((acc, trace)),
        _ => Err(Error::InsufficientData(format!(
            "convergence monitoring needs at least {} samples, stream had {}",
            2 * delta_m,
            trace.samples_seen
        ))),
    }
}

/// `margin * max(norms)`: with this bias, `a^T x + b >= 0` for every unit
/// vector `a` and every training `x`.
pub fn bias_select<I: IntoIterator<Item = f64>>(norms: I, margin: f64) -> Result<f64> {
    if !(margin >= 1.0) {
        return Err(rejected(format!("bias margin must be >= 1, got {margin}")));
    }
    let max = norms
        .into_iter()
        .fold(None, |m: Option<f64>, v| Some(m.map_or(v, |m| m.max(v))))
        .ok_or_else(|| Error::InsufficientData("no norms to select a bias from".into()))?;
    Ok(margin * max)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum TransformKind {
    Dct,
    Klt,
    Saab,
}

impl FromStr for TransformKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "dct" => Ok(TransformKind::Dct),
            "klt" => Ok(TransformKind::Klt),
            "saab" => Ok(TransformKind::Saab),
            _ => Err(rejected(format!("unknown transform kind '{s}'"))),
        }
    }
}

impl fmt::Display for TransformKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TransformKind::Dct => "dct",
            TransformKind::Klt => "klt",
            TransformKind::Saab => "saab",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum FittedKernel {
    Affine(AffineOrthoKernel),
    Klt(KltKernel),
}

impl FittedKernel {
    pub fn n(&self) -> usize {
        match self {
            FittedKernel::Affine(k) => k.n,
            FittedKernel::Klt(k) => k.n,
        }
    }

    pub fn meta(&self) -> &KernelMeta {
        match self {
            FittedKernel::Affine(k) => &k.meta,
            FittedKernel::Klt(k) => &k.meta,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BiasBasis {
    pub max_norm: f64,
    pub margin: f64,
    pub bias: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FitReport {
    pub kernel: FittedKernel,
    pub trace: ConvergenceTrace,
    /// One entry per Saab stage; empty for DCT and KLT.
    pub bias_basis: Vec<BiasBasis>,
    pub cascade: Option<SaabCascade>,
    pub sample_count: usize,
    pub source: String,
}

/// Fits a kernel of the requested kind on `source`.
///
/// KLT and Saab monitor the convergence of the block covariance (on samples
/// divided by `params.scale`) and fit on exactly the blocks consumed. Every
/// Saab stage's input covariance is an orthonormal congruence (or principal
/// submatrix) of that block covariance, so it converges with it.
pub fn fit_pipeline(
    source: &ResidualBlockSet,
    kind: TransformKind,
    plan: &StagePlan,
    params: &ConvergenceParams,
    margin: f64,
) -> Result<FitReport> {
    plan.check_block_side(source.n)?;
    if !(params.scale > 0.0) || !params.scale.is_finite() {
        return Err(rejected(format!("scale must be positive, got {}", params.scale)));
    }
    let meta = KernelMeta {
        sample_count: 0,
        source: source.provenance.source.clone(),
        epsilon: Some(params.epsilon),
        delta_m: Some(params.delta_m as u64),
        seed: source.provenance.seed,
    };

    if kind == TransformKind::Dct {
        let mut kernel = dct_kernel(source.n)?;
        kernel.meta = KernelMeta { source: "analytic".into(), ..meta };
        return Ok(FitReport {
            kernel: FittedKernel::Affine(kernel),
            trace: ConvergenceTrace::empty(params.epsilon, params.delta_m),
            bias_basis: Vec::new(),
            cascade: None,
            sample_count: 0,
            source: "analytic".into(),
        });
    }

    let inv = 1.0 / params.scale;
    let scaled = source
        .blocks
        .iter()
        .map(|b| b.values().iter().map(|v| v * inv).collect::<Vec<f64>>());
    let (_, trace) = convergence_monitor(scaled, params.delta_m, params.epsilon, params.max_samples)?;
    let used = &source.blocks[..trace.samples_seen];
    let meta = KernelMeta {
        sample_count: used.len() as u64,
        ..meta
    };

    let (kernel, bias_basis, cascade) = match kind {
        TransformKind::Klt => {
            let flat: Vec<f64> = used.iter().flat_map(|b| b.values().iter().copied()).collect();
            let acc = CovarianceAccumulator::from_rows_par(source.n * source.n, &flat)?;
            let mut k = klt_kernel(&acc)?;
            k.meta = meta;
            (FittedKernel::Klt(k), Vec::new(), None)
        }
        TransformKind::Saab => {
            let fit = saab_fit_multistage(used, plan, margin)?;
            let basis = fit
                .cascade
                .stages
                .iter()
                .map(|s| BiasBasis {
                    max_norm: s.max_norm,
                    margin: s.margin,
                    bias: s.bias,
                })
                .collect();
            let mut k = fit.kernel;
            k.meta = meta;
            (FittedKernel::Affine(k), basis, Some(fit.cascade))
        }
        TransformKind::Dct => unreachable!(),
    };

    Ok(FitReport {
        kernel,
        sample_count: trace.samples_seen,
        trace,
        bias_basis,
        cascade,
        source: source.provenance.source.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::residuals::synth_ar1;

    #[test]
    fn constant_stream_converges_at_second_checkpoint() {
        let stream = std::iter::repeat_n(vec![0.2, -0.4, 0.9], 1000);
        let (acc, trace) = convergence_monitor(stream, 10, 1e-9, 1000).unwrap();
        assert_eq!(trace.checkpoints.len(), 1);
        assert_eq!(trace.checkpoints[0], Checkpoint { samples: 20, diff: 0.0 });
        assert_eq!(trace.converged_at, Some(20));
        assert_eq!(acc.count(), 20);
    }

    #[test]
    fn short_stream_is_insufficient() {
        let stream = std::iter::repeat_n(vec![1.0], 15);
        assert!(matches!(
            convergence_monitor(stream, 10, 1e-3, 100),
            Err(Error::InsufficientData(_))
        ));
        let empty: Vec<Vec<f64>> = Vec::new();
        assert!(convergence_monitor(empty, 10, 1e-3, 100).is_err());
    }

    #[test]
    fn monitor_validates_parameters() {
        let stream = || std::iter::repeat_n(vec![1.0], 100);
        assert!(convergence_monitor(stream(), 0, 1e-3, 100).is_err());
        assert!(convergence_monitor(stream(), 10, 0.0, 100).is_err());
    }

    #[test]
    fn checkpoints_are_evenly_spaced() {
        let set = synth_ar1(0.9, 0.05, 4, 3000, 1).unwrap();
        let (_, trace) =
            convergence_monitor(set.blocks.iter().map(|b| b.values()), 250, 1e-12, 3000).unwrap();
        assert_eq!(trace.converged_at, None);
        assert_eq!(trace.samples_seen, 3000);
        let ms: Vec<usize> = trace.checkpoints.iter().map(|c| c.samples).collect();
        assert_eq!(ms, (2..=12).map(|k| k * 250).collect::<Vec<_>>());
    }

    #[test]
    fn converged_at_is_stable_under_larger_budgets() {
        let set = synth_ar1(0.9, 0.05, 4, 40_000, 3).unwrap();
        let run = |max| {
            convergence_monitor(set.blocks.iter().map(|b| b.values()), 1000, 1e-4, max)
                .unwrap()
                .1
        };
        let small = run(20_000);
        let big = run(40_000);
        let converged = small.converged_at.expect("converges within budget");
        assert_eq!(big.converged_at, Some(converged));
        assert_eq!(small, big);
    }

    #[test]
    fn bias_selection() {
        assert_eq!(bias_select([1.0, 4.0, 2.5], 1.25).unwrap(), 5.0);
        assert_eq!(bias_select([0.0, 0.0], 1.25).unwrap(), 0.0);
        assert!(matches!(
            bias_select(std::iter::empty(), 1.25),
            Err(Error::InsufficientData(_))
        ));
        assert!(bias_select([1.0], 0.5).is_err());
    }

    #[test]
    fn dct_pipeline_is_analytic() {
        let set = synth_ar1(0.9, 1.0, 8, 10, 0).unwrap();
        let plan = StagePlan::one_stage(8).unwrap();
        let report = fit_pipeline(&set, TransformKind::Dct, &plan, &ConvergenceParams::default(), 1.25).unwrap();
        match &report.kernel {
            FittedKernel::Affine(k) => assert_eq!(k.matrix, dct_kernel(8).unwrap().matrix),
            other => panic!("unexpected {other:?}"),
        }
        assert!(report.trace.checkpoints.is_empty());
        assert_eq!(report.sample_count, report.trace.samples_seen);
    }

    #[test]
    fn pipeline_rejects_plan_mismatch() {
        let set = synth_ar1(0.9, 1.0, 4, 10, 0).unwrap();
        let plan = StagePlan::one_stage(8).unwrap();
        assert!(fit_pipeline(&set, TransformKind::Saab, &plan, &ConvergenceParams::default(), 1.25).is_err());
    }

    #[test]
    fn klt_pipeline_uses_consumed_blocks() {
        let set = synth_ar1(0.9, 10.0, 4, 4000, 5).unwrap();
        let params = ConvergenceParams {
            delta_m: 500,
            ..ConvergenceParams::default()
        };
        let plan = StagePlan::one_stage(4).unwrap();
        let report = fit_pipeline(&set, TransformKind::Klt, &plan, &params, 1.25).unwrap();
        assert_eq!(report.kernel.meta().sample_count as usize, report.sample_count);
        assert_eq!(report.sample_count, report.trace.samples_seen);
        match report.kernel {
            FittedKernel::Klt(k) => assert!(k.basis_orthonormality_error() < 1e-9),
            other => panic!("unexpected {other:?}"),
        }
    }
}
