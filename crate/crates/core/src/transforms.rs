//! DCT, KLT and Saab block transforms.
//!
//! DCT and Saab kernels share one representation, [`AffineOrthoKernel`]: an
//! orthonormal matrix whose rows are the basis functions of a lexicographically
//! flattened `n x n` block, plus a bias vector. Multi-stage Saab cascades are
//! flattened into the same form after fitting.

use std::f64::consts::PI;
use std::fmt;

use rayon::prelude::*;

use crate::error::{rejected, Error, Result};
use crate::linalg::{canonicalize_sign, dot, eig_sym, norm, orthonormality_error};
use crate::linalg::{CovarianceAccumulator, SymMatrix};
use crate::training::bias_select;

/// Block sides a kernel can be built for.
pub const SUPPORTED_SIDES: [usize; 4] = [2, 4, 8, 16];

/// Multi-stage plans in addition to the one-stage plan `(n)`.
pub const TWO_STAGE_PLANS: [[usize; 2]; 4] = [[2, 2], [2, 4], [4, 2], [4, 4]];

/// Bias margin over the largest training norm.
pub const DEFAULT_BIAS_MARGIN: f64 = 1.25;

/// Eigenvalues at or below this fraction of the AC trace are treated as a
/// missing direction and the row is rebuilt by Gram-Schmidt completion.
const RANK_TOL: f64 = 1e-12;

/// An `n x n` block flattened row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockVector {
    n: usize,
    values: Vec<f64>,
}

impl BlockVector {
    pub fn new(n: usize, values: Vec<f64>) -> Result<Self> {
        if n == 0 {
            return Err(rejected("block side must be positive"));
        }
        if values.len() != n * n {
            return Err(rejected(format!(
                "block of side {n} needs {} values, got {}",
                n * n,
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(rejected("block contains non-finite values"));
        }
        Ok(Self { n, values })
    }

    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            values: vec![0.0; n * n],
        }
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.n + col]
    }

    pub fn energy(&self) -> f64 {
        dot(&self.values, &self.values)
    }
}

/// Transform coefficients; index 0 is the DC (or mean-direction) slot.
#[derive(Clone, Debug, PartialEq)]
pub struct CoefVector {
    pub values: Vec<f64>,
}

impl CoefVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(rejected("coefficients contain non-finite values"));
        }
        Ok(Self { values })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

/// Subblock side of each Saab stage, first stage first.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct StagePlan {
    stages: Vec<usize>,
}

impl StagePlan {
    pub fn new(stages: Vec<usize>) -> Result<Self> {
        if stages.is_empty() {
            return Err(rejected("stage plan must have at least one stage"));
        }
        if let Some(s) = stages.iter().find(|s| !SUPPORTED_SIDES.contains(s)) {
            return Err(rejected(format!(
                "stage side {s} is not one of {SUPPORTED_SIDES:?}"
            )));
        }
        let plan = Self { stages };
        let n = plan.block_side();
        let supported = match plan.stages.as_slice() {
            [s] => SUPPORTED_SIDES.contains(s),
            [a, b] => TWO_STAGE_PLANS.contains(&[*a, *b]),
            _ => false,
        };
        if !supported {
            return Err(rejected(format!(
                "unsupported stage plan {plan} for {n}x{n} blocks"
            )));
        }
        Ok(plan)
    }

    pub fn one_stage(n: usize) -> Result<Self> {
        Self::new(vec![n])
    }

    /// Parses `4`, `4x4`, `2x2,2x2` or `4,2`: a comma-separated list of stage
    /// sides, each written `s` or `sxs`.
    pub fn parse(text: &str) -> Result<Self> {
        let mut stages = Vec::new();
        for token in text.split(',') {
            let token = token.trim();
            let side = match token.split_once(['x', 'X']) {
                Some((a, b)) => {
                    let a: usize = a
                        .trim()
                        .parse()
                        .map_err(|_| rejected(format!("bad stage token '{token}'")))?;
                    let b: usize = b
                        .trim()
                        .parse()
                        .map_err(|_| rejected(format!("bad stage token '{token}'")))?;
                    if a != b {
                        return Err(rejected(format!("stage '{token}' is not square")));
                    }
                    a
                }
                None => token
                    .parse()
                    .map_err(|_| rejected(format!("bad stage token '{token}'")))?,
            };
            stages.push(side);
        }
        Self::new(stages)
    }

    pub fn stages(&self) -> &[usize] {
        &self.stages
    }

    pub fn block_side(&self) -> usize {
        self.stages.iter().product()
    }

    pub fn is_one_stage(&self) -> bool {
        self.stages.len() == 1
    }

    pub fn check_block_side(&self, n: usize) -> Result<()> {
        if self.block_side() != n {
            return Err(rejected(format!(
                "plan {self} covers {m}x{m} blocks, not {n}x{n}",
                m = self.block_side()
            )));
        }
        Ok(())
    }
}

impl fmt::Display for StagePlan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.stages.iter().map(|s| format!("{s}x{s}")).collect();
        f.write_str(&parts.join(","))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum KernelKind {
    Dct,
    Saab,
}

impl KernelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            KernelKind::Dct => "dct",
            KernelKind::Saab => "saab",
        }
    }
}

/// Report column order: DCT, KLT, one-stage Saab, multi-stage Saab.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum TransformClass {
    Dct,
    Klt,
    SaabOneStage,
    SaabMultiStage,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct KernelMeta {
    pub sample_count: u64,
    pub source: String,
    pub epsilon: Option<f64>,
    pub delta_m: Option<u64>,
    pub seed: Option<u64>,
}

/// Affine block transform `y = M x + bias` with orthonormal `M`.
#[derive(Clone, Debug, PartialEq)]
pub struct AffineOrthoKernel {
    pub n: usize,
    pub kind: KernelKind,
    pub plan: StagePlan,
    /// Row-major `dim x dim`; row `k` is basis function `k`.
    pub matrix: Vec<f64>,
    pub bias: Vec<f64>,
    pub energies: Vec<f64>,
    pub meta: KernelMeta,
}

impl AffineOrthoKernel {
    #[inline]
    pub fn dim(&self) -> usize {
        self.n * self.n
    }

    pub fn row(&self, k: usize) -> &[f64] {
        let d = self.dim();
        &self.matrix[k * d..(k + 1) * d]
    }

    pub fn label(&self) -> String {
        match self.kind {
            KernelKind::Dct => "dct".to_string(),
            KernelKind::Saab => format!("saab[{}]", self.plan),
        }
    }

    pub fn class(&self) -> TransformClass {
        match self.kind {
            KernelKind::Dct => TransformClass::Dct,
            KernelKind::Saab if self.plan.is_one_stage() => TransformClass::SaabOneStage,
            KernelKind::Saab => TransformClass::SaabMultiStage,
        }
    }

    pub fn orthonormality_error(&self) -> f64 {
        orthonormality_error(&self.matrix, self.dim(), self.dim())
    }

    fn check_block(&self, x: &BlockVector) -> Result<()> {
        if x.n != self.n {
            return Err(rejected(format!(
                "block side {} does not match kernel side {}",
                x.n, self.n
            )));
        }
        Ok(())
    }

    fn linear(&self, x: &[f64]) -> Vec<f64> {
        let d = self.dim();
        self.matrix.chunks_exact(d).map(|row| dot(row, x)).collect()
    }

    /// `M x + bias`.
    pub fn forward(&self, x: &BlockVector) -> Result<CoefVector> {
        self.check_block(x)?;
        let mut y = self.linear(&x.values);
        for (v, b) in y.iter_mut().zip(&self.bias) {
            *v += b;
        }
        Ok(CoefVector { values: y })
    }

    /// `M^T (y - bias)`.
    pub fn inverse(&self, y: &CoefVector) -> Result<BlockVector> {
        let d = self.dim();
        if y.dim() != d {
            return Err(rejected(format!(
                "coefficient vector has {} entries, kernel expects {d}",
                y.dim()
            )));
        }
        let mut x = vec![0.0; d];
        for (k, row) in self.matrix.chunks_exact(d).enumerate() {
            let c = y.values[k] - self.bias[k];
            for (xi, r) in x.iter_mut().zip(row) {
                *xi += c * r;
            }
        }
        Ok(BlockVector { n: self.n, values: x })
    }

    /// `M x`, the coefficients whose squares sum to `||x||^2`.
    pub fn coefficients_biasfree(&self, x: &BlockVector) -> Result<CoefVector> {
        self.check_block(x)?;
        Ok(CoefVector {
            values: self.linear(&x.values),
        })
    }

    /// Checks the structural invariants every constructed kernel satisfies.
    pub fn validate(&self, tol: f64) -> Result<()> {
        let d = self.dim();
        if self.matrix.len() != d * d || self.bias.len() != d || self.energies.len() != d {
            return Err(Error::DimensionInconsistency(format!(
                "kernel of side {} has matrix {}, bias {}, energies {}",
                self.n,
                self.matrix.len(),
                self.bias.len(),
                self.energies.len()
            )));
        }
        let err = self.orthonormality_error();
        if !(err < tol) {
            return Err(Error::OrthonormalityViolation(err));
        }
        Ok(())
    }
}

/// Orthonormal 2D DCT-II kernel. Row `p * n + q` is frequency `(p, q)`; the
/// bias is zero and energies stay zero until measured.
pub fn dct_kernel(n: usize) -> Result<AffineOrthoKernel> {
    if !SUPPORTED_SIDES.contains(&n) {
        return Err(rejected(format!(
            "DCT side {n} is not one of {SUPPORTED_SIDES:?}"
        )));
    }
    let nf = n as f64;
    let lambda = |xi: usize| if xi == 0 { std::f64::consts::FRAC_1_SQRT_2 } else { 1.0 };
    let basis_1d = |freq: usize, pos: usize| {
        ((2 * pos + 1) as f64 * PI * freq as f64 / (2.0 * nf)).cos()
    };
    let d = n * n;
    let mut matrix = vec![0.0; d * d];
    for p in 0..n {
        for q in 0..n {
            let row = &mut matrix[(p * n + q) * d..(p * n + q + 1) * d];
            let scale = 2.0 / nf * lambda(p) * lambda(q);
            for m in 0..n {
                for col in 0..n {
                    row[m * n + col] = scale * basis_1d(p, m) * basis_1d(q, col);
                }
            }
        }
    }
    Ok(AffineOrthoKernel {
        n,
        kind: KernelKind::Dct,
        plan: StagePlan::one_stage(n)?,
        matrix,
        bias: vec![0.0; d],
        energies: vec![0.0; d],
        meta: KernelMeta {
            source: "analytic".to_string(),
            ..KernelMeta::default()
        },
    })
}

/// Karhunen-Loeve transform: ensemble mean plus the top `dim - 1`
/// eigenvectors of the mean-removed covariance.
#[derive(Clone, Debug, PartialEq)]
pub struct KltKernel {
    pub n: usize,
    pub mean: Vec<f64>,
    pub basis: Vec<Vec<f64>>,
    pub eigenvalues: Vec<f64>,
    pub meta: KernelMeta,
}

impl KltKernel {
    pub fn dim(&self) -> usize {
        self.n * self.n
    }

    /// Slot 0 is the projection onto the unit mean direction (zero when the
    /// mean vanishes); slots `1..` project `x - mean` onto the basis.
    pub fn coefficients(&self, x: &BlockVector) -> Result<CoefVector> {
        if x.n != self.n {
            return Err(rejected(format!(
                "block side {} does not match kernel side {}",
                x.n, self.n
            )));
        }
        let mu_norm = norm(&self.mean);
        let mut values = Vec::with_capacity(self.dim());
        values.push(if mu_norm > 1e-12 {
            dot(&x.values, &self.mean) / mu_norm
        } else {
            0.0
        });
        let centered: Vec<f64> = x.values.iter().zip(&self.mean).map(|(a, m)| a - m).collect();
        values.extend(self.basis.iter().map(|b| dot(&centered, b)));
        Ok(CoefVector { values })
    }

    pub fn basis_orthonormality_error(&self) -> f64 {
        let flat: Vec<f64> = self.basis.iter().flatten().copied().collect();
        orthonormality_error(&flat, self.basis.len(), self.dim())
    }
}

pub fn klt_kernel(acc: &CovarianceAccumulator) -> Result<KltKernel> {
    let dim = acc.dim();
    let n = (dim as f64).sqrt().round() as usize;
    if n * n != dim {
        return Err(rejected(format!("accumulator dimension {dim} is not a square")));
    }
    if (acc.count() as usize) < dim {
        return Err(Error::UnderDetermined {
            needed: dim,
            got: acc.count() as usize,
        });
    }
    let eig = eig_sym(&acc.covariance()?)?;
    Ok(KltKernel {
        n,
        mean: acc.mean().to_vec(),
        basis: eig.eigenvectors[..dim - 1].to_vec(),
        eigenvalues: eig.eigenvalues[..dim - 1].to_vec(),
        meta: KernelMeta {
            sample_count: acc.count(),
            ..KernelMeta::default()
        },
    })
}

/// One fitted Saab stage acting on `d`-dimensional inputs.
#[derive(Clone, Debug, PartialEq)]
pub struct SaabStage {
    /// Spatial side of the subblock this stage consumes.
    pub side: usize,
    /// Spectral channels per spatial position of the input.
    pub in_channels: usize,
    /// Row-major `d x d`: row 0 is the DC filter, rows `1..` the AC filters.
    pub matrix: Vec<f64>,
    /// Shared bias added to every output.
    pub bias: f64,
    /// Mean-removed AC variances for rows `1..`; slot 0 holds the mean
    /// squared DC response.
    pub eigenvalues: Vec<f64>,
    pub max_norm: f64,
    pub margin: f64,
    pub sample_count: u64,
    pub rank_deficient: bool,
}

impl SaabStage {
    pub fn dim(&self) -> usize {
        self.side * self.side * self.in_channels
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.matrix
            .chunks_exact(x.len())
            .map(|row| dot(row, x) + self.bias)
            .collect()
    }

    fn apply_into(&self, x: &[f64], out: &mut [f64]) {
        for (o, row) in out.iter_mut().zip(self.matrix.chunks_exact(x.len())) {
            *o = dot(row, x) + self.bias;
        }
    }
}

/// Orthonormal basis of the complement of the constant direction in `R^d`:
/// columns `1..d` of the Householder reflector sending `e_0` to `1/sqrt(d)`.
fn dc_complement_basis(d: usize) -> Vec<Vec<f64>> {
    let a0 = 1.0 / (d as f64).sqrt();
    let mut u = vec![a0; d];
    u[0] -= 1.0;
    let uu = dot(&u, &u);
    (1..d)
        .map(|k| {
            (0..d)
                .map(|i| {
                    let e = if i == k { 1.0 } else { 0.0 };
                    e - 2.0 * u[i] * u[k] / uu
                })
                .collect()
        })
        .collect()
}

/// Fits one Saab stage on row-major samples of length `d = side^2 * channels`.
///
/// The DC filter is the constant unit vector. AC filters are the
/// eigenvectors of the mean-removed covariance of the DC-removed samples,
/// by descending eigenvalue. A constant offset along the DC direction
/// (including the `b_0` term of the AC-subspace definition) is removed by the
/// mean-centering, so the AC filters do not depend on it.
pub fn saab_fit_stage(
    samples: &[f64],
    side: usize,
    in_channels: usize,
    margin: f64,
) -> Result<SaabStage> {
    let d = side * side * in_channels;
    if d < 2 {
        return Err(rejected("a Saab stage needs at least two input dimensions"));
    }
    if samples.len() % d != 0 {
        return Err(rejected(format!(
            "sample buffer length {} is not a multiple of {d}",
            samples.len()
        )));
    }
    let count = samples.len() / d;
    if count < d {
        return Err(Error::UnderDetermined { needed: d, got: count });
    }
    if samples.iter().any(|v| !v.is_finite()) {
        return Err(rejected("samples contain non-finite values"));
    }

    let acc = CovarianceAccumulator::from_rows_par(d, samples)?;
    let cov = acc.covariance()?;

    // Restrict the covariance to the DC complement: C' = Q^T C Q.
    let q = dc_complement_basis(d);
    let cq: Vec<Vec<f64>> = q.iter().map(|col| cov.mat_vec(col)).collect();
    let reduced = SymMatrix::from_upper(d - 1, |i, j| dot(&q[i], &cq[j]));
    let eig = eig_sym(&reduced)?;

    let a0 = vec![1.0 / (d as f64).sqrt(); d];
    let ac_trace: f64 = reduced.trace().max(0.0);
    let mut rows: Vec<Vec<f64>> = vec![a0.clone()];
    let mut ac_energies = Vec::with_capacity(d - 1);
    for (lambda, w) in eig.eigenvalues.iter().zip(&eig.eigenvectors) {
        if *lambda <= RANK_TOL * ac_trace {
            break;
        }
        let mut r = vec![0.0; d];
        for (wk, col) in w.iter().zip(&q) {
            for (ri, ci) in r.iter_mut().zip(col) {
                *ri += wk * ci;
            }
        }
        canonicalize_sign(&mut r);
        rows.push(r);
        ac_energies.push(*lambda);
    }

    let rank_deficient = rows.len() < d;
    if rank_deficient {
        log::warn!(
            "saab stage: AC subspace has rank {} of {}; completing deterministically",
            rows.len() - 1,
            d - 1
        );
        complete_basis(&mut rows, d);
        ac_energies.resize(d - 1, 0.0);
    }

    let max_norm = samples
        .chunks_exact(d)
        .map(norm)
        .fold(0.0_f64, f64::max);
    let bias = bias_select(std::iter::once(max_norm), margin)?;

    let mean_dc = dot(&a0, acc.mean());
    let dc_energy = mean_dc * mean_dc + dot(&a0, &cov.mat_vec(&a0));
    let mut eigenvalues = Vec::with_capacity(d);
    eigenvalues.push(dc_energy);
    eigenvalues.extend(ac_energies);

    Ok(SaabStage {
        side,
        in_channels,
        matrix: rows.into_iter().flatten().collect(),
        bias,
        eigenvalues,
        max_norm,
        margin,
        sample_count: count as u64,
        rank_deficient,
    })
}

/// Gram-Schmidt over canonical vectors until `rows` spans `R^d`.
fn complete_basis(rows: &mut Vec<Vec<f64>>, d: usize) {
    for i in 0..d {
        if rows.len() == d {
            break;
        }
        let mut v = vec![0.0; d];
        v[i] = 1.0;
        // two passes for numerical orthogonality
        for _ in 0..2 {
            for r in rows.iter() {
                let c = dot(&v, r);
                for (vi, ri) in v.iter_mut().zip(r) {
                    *vi -= c * ri;
                }
            }
        }
        let len = norm(&v);
        if len > 1e-6 {
            v.iter_mut().for_each(|x| *x /= len);
            canonicalize_sign(&mut v);
            rows.push(v);
        }
    }
}

/// Feature layout after a stage: `grid x grid` positions, row-major, each
/// holding `channels` contiguous spectral values.
#[derive(Clone, Copy, Debug)]
struct Layout {
    grid: usize,
    channels: usize,
}

/// Index map `new -> old` that regroups a layout into `side x side` cuboids,
/// position-major with the previous channels innermost.
fn regroup_permutation(from: Layout, side: usize) -> Vec<usize> {
    let grid = from.grid / side;
    let c = from.channels;
    let d = side * side * c;
    let mut perm = vec![0; grid * grid * d];
    for big_r in 0..grid {
        for big_c in 0..grid {
            let pos = big_r * grid + big_c;
            for lr in 0..side {
                for lc in 0..side {
                    for ch in 0..c {
                        let new = pos * d + (lr * side + lc) * c + ch;
                        let old_r = big_r * side + lr;
                        let old_c = big_c * side + lc;
                        perm[new] = (old_r * from.grid + old_c) * c + ch;
                    }
                }
            }
        }
    }
    perm
}

/// Fitted stages of a Saab cascade, kept for stage-by-stage evaluation.
#[derive(Clone, Debug, PartialEq)]
pub struct SaabCascade {
    pub n: usize,
    pub plan: StagePlan,
    pub stages: Vec<SaabStage>,
}

impl SaabCascade {
    /// Inputs to stage `stage` for one block: one vector per spatial position.
    pub fn stage_inputs(&self, x: &BlockVector, stage: usize) -> Result<Vec<Vec<f64>>> {
        if x.n != self.n {
            return Err(rejected("block side does not match cascade"));
        }
        if stage >= self.stages.len() {
            return Err(rejected(format!("stage {stage} out of range")));
        }
        let mut features = x.values.clone();
        let mut layout = Layout { grid: self.n, channels: 1 };
        for (i, st) in self.stages.iter().enumerate() {
            let perm = regroup_permutation(layout, st.side);
            let regrouped: Vec<f64> = perm.iter().map(|&o| features[o]).collect();
            let d = st.dim();
            if i == stage {
                return Ok(regrouped.chunks_exact(d).map(<[f64]>::to_vec).collect());
            }
            features = regrouped.chunks_exact(d).flat_map(|s| st.apply(s)).collect();
            layout = Layout {
                grid: layout.grid / st.side,
                channels: d,
            };
        }
        unreachable!()
    }

    /// Runs the cascade stage by stage; equals the flattened kernel's forward.
    pub fn forward_stagewise(&self, x: &BlockVector) -> Result<Vec<f64>> {
        let last = self.stages.len() - 1;
        let inputs = self.stage_inputs(x, last)?;
        Ok(self.stages[last].apply(&inputs[0]))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SaabFit {
    pub kernel: AffineOrthoKernel,
    pub cascade: SaabCascade,
}

/// Fits a one- or multi-stage Saab transform and flattens it into one affine
/// kernel `M = M_k P_k ... M_1 P_1`, bias accumulated through the stages.
pub fn saab_fit_multistage(
    blocks: &[BlockVector],
    plan: &StagePlan,
    margin: f64,
) -> Result<SaabFit> {
    let n = plan.block_side();
    let dim = n * n;
    if blocks.len() < dim {
        return Err(Error::UnderDetermined {
            needed: dim,
            got: blocks.len(),
        });
    }
    if let Some(b) = blocks.iter().find(|b| b.n != n) {
        return Err(rejected(format!(
            "plan {plan} needs {n}x{n} blocks, found side {}",
            b.n
        )));
    }

    let count = blocks.len();
    let mut features: Vec<f64> = Vec::with_capacity(count * dim);
    for b in blocks {
        features.extend_from_slice(&b.values);
    }
    let mut linear = vec![0.0; dim * dim];
    for i in 0..dim {
        linear[i * dim + i] = 1.0;
    }
    let mut offset = vec![0.0; dim];
    let mut layout = Layout { grid: n, channels: 1 };
    let mut stages = Vec::with_capacity(plan.stages().len());

    for &side in plan.stages() {
        let perm = regroup_permutation(layout, side);
        let d = side * side * layout.channels;

        features = features
            .par_chunks_exact(dim)
            .flat_map_iter(|f| perm.iter().map(move |&o| f[o]))
            .collect();
        linear = perm
            .iter()
            .flat_map(|&o| linear[o * dim..(o + 1) * dim].iter().copied())
            .collect();
        offset = perm.iter().map(|&o| offset[o]).collect();

        let stage = saab_fit_stage(&features, side, layout.channels, margin)?;

        features.par_chunks_exact_mut(d).for_each(|slice| {
            let input = slice.to_vec();
            stage.apply_into(&input, slice);
        });
        let mut next_linear = vec![0.0; dim * dim];
        let mut next_offset = vec![0.0; dim];
        for pos in 0..dim / d {
            let base = pos * d;
            for (k, row) in stage.matrix.chunks_exact(d).enumerate() {
                let out = &mut next_linear[(base + k) * dim..(base + k + 1) * dim];
                for (j, &w) in row.iter().enumerate() {
                    let src = &linear[(base + j) * dim..(base + j + 1) * dim];
                    for (o, s) in out.iter_mut().zip(src) {
                        *o += w * s;
                    }
                }
                next_offset[base + k] = dot(row, &offset[base..base + d]) + stage.bias;
            }
        }
        linear = next_linear;
        offset = next_offset;
        layout = Layout {
            grid: layout.grid / side,
            channels: d,
        };
        stages.push(stage);
    }

    let last = stages.last().expect("plan has at least one stage");
    let dc_energy = features
        .chunks_exact(dim)
        .map(|f| {
            let c = f[0] - offset[0];
            c * c
        })
        .sum::<f64>()
        / count as f64;
    let mut energies = last.eigenvalues.clone();
    energies[0] = dc_energy;

    let kernel = AffineOrthoKernel {
        n,
        kind: KernelKind::Saab,
        plan: plan.clone(),
        matrix: linear,
        bias: offset,
        energies,
        meta: KernelMeta {
            sample_count: count as u64,
            ..KernelMeta::default()
        },
    };
    Ok(SaabFit {
        kernel,
        cascade: SaabCascade {
            n,
            plan: plan.clone(),
            stages,
        },
    })
}
