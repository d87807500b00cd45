//! Dense symmetric linear algebra: streaming covariance accumulation and a
//! cyclic Jacobi eigensolver.
//!
//! Everything downstream (KLT, Saab AC filters, synthetic AR(1) generation)
//! reduces to "accumulate second moments, then diagonalize".

use rayon::prelude::*;

use crate::error::{rejected, Error, Result};

/// Largest matrix order accepted by [`eig_sym`].
pub const MAX_EIG_DIM: usize = 4096;

const JACOBI_MAX_SWEEPS: usize = 100;
const JACOBI_REL_TOL: f64 = 1e-12;

/// Samples per shard when accumulating in parallel. Fixed so the merge tree,
/// and therefore the floating-point result, does not depend on thread count.
const SHARD_ROWS: usize = 4096;

/// Square symmetric matrix stored densely in row-major order.
#[derive(Clone, Debug, PartialEq)]
pub struct SymMatrix {
    dim: usize,
    entries: Vec<f64>,
}

impl SymMatrix {
    /// Builds a symmetric matrix from row-major entries.
    ///
    /// Entry pairs that differ by more than `1e-12` (relative) are rejected;
    /// smaller discrepancies are averaged so that `a[i][j] == a[j][i]` holds
    /// exactly.
    pub fn new(dim: usize, mut entries: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(rejected("matrix dimension must be at least 1"));
        }
        if entries.len() != dim * dim {
            return Err(rejected(format!(
                "expected {} entries for a {dim}x{dim} matrix, got {}",
                dim * dim,
                entries.len()
            )));
        }
        for i in 0..dim {
            for j in (i + 1)..dim {
                let a = entries[i * dim + j];
                let b = entries[j * dim + i];
                let scale = a.abs().max(b.abs()).max(1.0);
                if (a - b).abs() > 1e-12 * scale {
                    return Err(rejected(format!(
                        "matrix is not symmetric at ({i}, {j}): {a} vs {b}"
                    )));
                }
                let avg = 0.5 * (a + b);
                entries[i * dim + j] = avg;
                entries[j * dim + i] = avg;
            }
        }
        Ok(Self { dim, entries })
    }

    pub fn zeros(dim: usize) -> Self {
        Self {
            dim,
            entries: vec![0.0; dim * dim],
        }
    }

    pub fn identity(dim: usize) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            m.entries[i * dim + i] = 1.0;
        }
        m
    }

    /// Builds a matrix from its upper triangle; `f(i, j)` is called for `i <= j`.
    pub fn from_upper(dim: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            for j in i..dim {
                let v = f(i, j);
                m.entries[i * dim + j] = v;
                m.entries[j * dim + i] = v;
            }
        }
        m
    }

    pub fn diagonal(values: &[f64]) -> Self {
        let mut m = Self::zeros(values.len());
        for (i, &v) in values.iter().enumerate() {
            m.entries[i * values.len() + i] = v;
        }
        m
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.dim + j]
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.entries[i * self.dim..(i + 1) * self.dim]
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim).map(|i| self.get(i, i)).sum()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.entries.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            dim: self.dim,
            entries: self.entries.iter().map(|v| v * factor).collect(),
        }
    }

    pub fn mat_vec(&self, v: &[f64]) -> Vec<f64> {
        (0..self.dim).map(|i| dot(self.row(i), v)).collect()
    }
}

/// Frobenius norm of `a - b`.
pub fn frobenius_diff(a: &SymMatrix, b: &SymMatrix) -> Result<f64> {
    if a.dim != b.dim {
        return Err(rejected(format!(
            "dimension mismatch: {} vs {}",
            a.dim, b.dim
        )));
    }
    Ok(a.entries
        .iter()
        .zip(&b.entries)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt())
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `||R R^T - I||_F` for a row-major `rows x cols` matrix.
pub fn orthonormality_error(matrix: &[f64], rows: usize, cols: usize) -> f64 {
    let mut acc = 0.0;
    for i in 0..rows {
        let ri = &matrix[i * cols..(i + 1) * cols];
        for j in 0..rows {
            let rj = &matrix[j * cols..(j + 1) * cols];
            let target = if i == j { 1.0 } else { 0.0 };
            let d = dot(ri, rj) - target;
            acc += d * d;
        }
    }
    acc.sqrt()
}

/// Streaming mean and scatter (sum of centered outer products) of a vector
/// stream. Only the upper triangle of the scatter is stored.
#[derive(Clone, Debug, PartialEq)]
pub struct CovarianceAccumulator {
    dim: usize,
    count: u64,
    mean: Vec<f64>,
    // packed upper triangle, row by row
    scatter: Vec<f64>,
}

#[inline]
fn packed_len(dim: usize) -> usize {
    dim * (dim + 1) / 2
}

impl CovarianceAccumulator {
    pub fn new(dim: usize) -> Self {
        assert!(dim >= 1, "accumulator dimension must be positive");
        Self {
            dim,
            count: 0,
            mean: vec![0.0; dim],
            scatter: vec![0.0; packed_len(dim)],
        }
    }

    /// Accumulates row-major `samples` (each `dim` long) in fixed-size shards
    /// on the rayon pool and merges the shards in order.
    pub fn from_rows_par(dim: usize, samples: &[f64]) -> Result<Self> {
        if !samples.len().is_multiple_of(dim) {
            return Err(rejected(format!(
                "sample buffer length {} is not a multiple of {dim}",
                samples.len()
            )));
        }
        let shards: Vec<Self> = samples
            .par_chunks(SHARD_ROWS * dim)
            .map(|chunk| {
                let mut acc = Self::new(dim);
                for row in chunk.chunks_exact(dim) {
                    acc.push(row);
                }
                acc
            })
            .collect();
        let mut total = Self::new(dim);
        for shard in &shards {
            total.merge_from(shard)?;
        }
        Ok(total)
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn accumulate(&mut self, sample: &[f64]) -> Result<()> {
        if sample.len() != self.dim {
            return Err(rejected(format!(
                "sample length {} does not match accumulator dimension {}",
                sample.len(),
                self.dim
            )));
        }
        self.push(sample);
        Ok(())
    }

    fn push(&mut self, sample: &[f64]) {
        self.count += 1;
        let n = self.count as f64;
        let mut delta = Vec::with_capacity(self.dim);
        for (m, &x) in self.mean.iter_mut().zip(sample) {
            let d = x - *m;
            *m += d / n;
            delta.push(d);
        }
        // Welford: delta_i * (x_j - mean'_j) == delta_i * delta_j * (n - 1) / n
        let factor = (n - 1.0) / n;
        let mut idx = 0;
        for i in 0..self.dim {
            let di = delta[i] * factor;
            let row = &mut self.scatter[idx..idx + self.dim - i];
            for (s, &dj) in row.iter_mut().zip(&delta[i..]) {
                *s += di * dj;
            }
            idx += self.dim - i;
        }
    }

    /// Chan et al. pairwise combination; `self` becomes the accumulator of the
    /// concatenated streams.
    pub fn merge_from(&mut self, other: &Self) -> Result<()> {
        if self.dim != other.dim {
            return Err(rejected(format!(
                "cannot merge accumulators of dimension {} and {}",
                self.dim, other.dim
            )));
        }
        if other.count == 0 {
            return Ok(());
        }
        if self.count == 0 {
            *self = other.clone();
            return Ok(());
        }
        let na = self.count as f64;
        let nb = other.count as f64;
        let n = na + nb;
        let delta: Vec<f64> = other
            .mean
            .iter()
            .zip(&self.mean)
            .map(|(b, a)| b - a)
            .collect();
        let w = na * nb / n;
        let mut idx = 0;
        for i in 0..self.dim {
            for j in i..self.dim {
                self.scatter[idx] += other.scatter[idx] + w * delta[i] * delta[j];
                idx += 1;
            }
        }
        for (m, d) in self.mean.iter_mut().zip(&delta) {
            *m += d * nb / n;
        }
        self.count += other.count;
        Ok(())
    }

    pub fn merge(&self, other: &Self) -> Result<Self> {
        let mut out = self.clone();
        out.merge_from(other)?;
        Ok(out)
    }

    pub fn scatter(&self) -> SymMatrix {
        let dim = self.dim;
        let mut m = SymMatrix::zeros(dim);
        let mut idx = 0;
        for i in 0..dim {
            for j in i..dim {
                m.entries[i * dim + j] = self.scatter[idx];
                m.entries[j * dim + i] = self.scatter[idx];
                idx += 1;
            }
        }
        m
    }

    /// Population covariance (`scatter / count`).
    pub fn covariance(&self) -> Result<SymMatrix> {
        if self.count == 0 {
            return Err(Error::EmptyAccumulator);
        }
        Ok(self.scatter().scaled(1.0 / self.count as f64))
    }
}

/// Eigen-decomposition of a symmetric matrix, eigenvalues descending.
#[derive(Clone, Debug, PartialEq)]
pub struct EigDecomposition {
    pub eigenvalues: Vec<f64>,
    /// `eigenvectors[k]` is the unit eigenvector for `eigenvalues[k]`.
    pub eigenvectors: Vec<Vec<f64>>,
}

impl EigDecomposition {
    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    /// `V diag(lambda) V^T`.
    pub fn reconstruct(&self) -> SymMatrix {
        let dim = self.dim();
        SymMatrix::from_upper(dim, |i, j| {
            self.eigenvalues
                .iter()
                .zip(&self.eigenvectors)
                .map(|(l, v)| l * v[i] * v[j])
                .sum()
        })
    }
}

/// Symmetric eigensolver by cyclic Jacobi rotations.
///
/// Sweeps visit `(p, q)` pairs in row order. Iteration stops once the
/// off-diagonal Frobenius norm falls below `1e-12` times the input's
/// Frobenius norm, or after 100 sweeps. Each returned eigenvector has its
/// first component of magnitude above `1e-12` positive.
pub fn eig_sym(m: &SymMatrix) -> Result<EigDecomposition> {
    let n = m.dim;
    if n > MAX_EIG_DIM {
        return Err(rejected(format!(
            "matrix order {n} exceeds supported maximum {MAX_EIG_DIM}"
        )));
    }
    if m.entries.iter().any(|v| !v.is_finite()) {
        return Err(rejected("matrix has non-finite entries"));
    }

    let mut a = m.entries.clone();
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }

    let threshold = JACOBI_REL_TOL * m.frobenius_norm();
    let off_norm = |a: &[f64]| -> f64 {
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    s += a[i * n + j] * a[i * n + j];
                }
            }
        }
        s.sqrt()
    };

    let mut sweeps = 0;
    while off_norm(&a) >= threshold && threshold > 0.0 {
        if sweeps == JACOBI_MAX_SWEEPS {
            log::warn!("jacobi: no convergence after {JACOBI_MAX_SWEEPS} sweeps (n = {n})");
            break;
        }
        sweeps += 1;
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let app = a[p * n + p];
                let aqq = a[q * n + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = if theta.abs() > 1e150 {
                    0.5 / theta
                } else {
                    theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt())
                };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;

                for k in 0..n {
                    if k == p || k == q {
                        continue;
                    }
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    let new_kp = c * akp - s * akq;
                    let new_kq = s * akp + c * akq;
                    a[k * n + p] = new_kp;
                    a[p * n + k] = new_kp;
                    a[k * n + q] = new_kq;
                    a[q * n + k] = new_kq;
                }
                a[p * n + p] = app - t * apq;
                a[q * n + q] = aqq + t * apq;
                a[p * n + q] = 0.0;
                a[q * n + p] = 0.0;

                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    // stable: ties keep solver order
    order.sort_by(|&i, &j| a[j * n + j].total_cmp(&a[i * n + i]));

    let eigenvalues = order.iter().map(|&i| a[i * n + i]).collect();
    let eigenvectors = order
        .iter()
        .map(|&col| {
            let mut vec: Vec<f64> = (0..n).map(|k| v[k * n + col]).collect();
            canonicalize_sign(&mut vec);
            vec
        })
        .collect();

    Ok(EigDecomposition {
        eigenvalues,
        eigenvectors,
    })
}

/// Flips `v` so its first component with magnitude above `1e-12` is positive.
pub fn canonicalize_sign(v: &mut [f64]) {
    if let Some(&lead) = v.iter().find(|x| x.abs() > 1e-12) {
        if lead < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
    }
}
