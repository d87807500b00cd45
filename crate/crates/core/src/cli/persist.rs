//! Kernel files (JSON) and block files (SBLK binary).
//!
//! Reals are written by serde_json in shortest round-trip form, so a saved
//! matrix reads back bit-identical.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::orthonormality_error;
use crate::residuals::{Channel, Provenance, ResidualBlockSet, ResidualMode};
use crate::training::FittedKernel;
use crate::transforms::{AffineOrthoKernel, BlockVector, KernelKind, KernelMeta, KltKernel, StagePlan};

pub const KERNEL_FORMAT_VERSION: u32 = 1;
pub const BLOCK_FORMAT_VERSION: u32 = 1;
pub const BLOCK_MAGIC: &[u8; 4] = b"SBLK";
/// Load-time guard on `||M M^T - I||_F`.
pub const LOAD_ORTHO_TOL: f64 = 1e-6;

const BLOCK_HEADER_LEN: usize = 4 + 4 + 4 + 8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub sample_count: u64,
    pub epsilon: Option<f64>,
    pub delta_m: Option<u64>,
    pub source: String,
    pub seed: Option<u64>,
}

impl From<&KernelMeta> for TrainingMeta {
    fn from(m: &KernelMeta) -> Self {
        Self {
            sample_count: m.sample_count,
            epsilon: m.epsilon,
            delta_m: m.delta_m,
            source: m.source.clone(),
            seed: m.seed,
        }
    }
}

impl From<TrainingMeta> for KernelMeta {
    fn from(m: TrainingMeta) -> Self {
        Self {
            sample_count: m.sample_count,
            source: m.source,
            epsilon: m.epsilon,
            delta_m: m.delta_m,
            seed: m.seed,
        }
    }
}

/// On-disk kernel document. For `klt` the matrix holds the `n^2 - 1` basis
/// rows, `energies` their eigenvalues, and `mean` the ensemble mean.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelFile {
    pub format_version: u32,
    pub kind: String,
    pub n: usize,
    pub plan: Option<String>,
    pub bias: Vec<f64>,
    pub matrix: Vec<Vec<f64>>,
    pub energies: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean: Option<Vec<f64>>,
    pub training: TrainingMeta,
}

impl KernelFile {
    pub fn from_kernel(kernel: &FittedKernel) -> Self {
        match kernel {
            FittedKernel::Affine(k) => Self {
                format_version: KERNEL_FORMAT_VERSION,
                kind: k.kind.as_str().to_string(),
                n: k.n,
                plan: (k.kind == KernelKind::Saab).then(|| k.plan.to_string()),
                bias: k.bias.clone(),
                matrix: k.matrix.chunks_exact(k.dim()).map(<[f64]>::to_vec).collect(),
                energies: k.energies.clone(),
                mean: None,
                training: (&k.meta).into(),
            },
            FittedKernel::Klt(k) => Self {
                format_version: KERNEL_FORMAT_VERSION,
                kind: "klt".to_string(),
                n: k.n,
                plan: None,
                bias: Vec::new(),
                matrix: k.basis.clone(),
                energies: k.eigenvalues.clone(),
                mean: Some(k.mean.clone()),
                training: (&k.meta).into(),
            },
        }
    }

    pub fn into_kernel(self) -> Result<FittedKernel> {
        if self.format_version != KERNEL_FORMAT_VERSION {
            return Err(Error::VersionMismatch {
                expected: KERNEL_FORMAT_VERSION,
                found: self.format_version,
            });
        }
        let d = self.n * self.n;
        let dims = |what: &str, got: usize, want: usize| -> Result<()> {
            if got == want {
                Ok(())
            } else {
                Err(Error::DimensionInconsistency(format!(
                    "{what} has {got} entries, expected {want} for n = {}",
                    self.n
                )))
            }
        };
        let rows = if self.kind == "klt" { d.saturating_sub(1) } else { d };
        dims("matrix", self.matrix.len(), rows)?;
        for (i, row) in self.matrix.iter().enumerate() {
            dims(&format!("matrix row {i}"), row.len(), d)?;
        }
        dims("energies", self.energies.len(), rows)?;
        let flat: Vec<f64> = self.matrix.iter().flatten().copied().collect();
        let err = orthonormality_error(&flat, rows, d);
        if !(err < LOAD_ORTHO_TOL) {
            return Err(Error::OrthonormalityViolation(err));
        }

        let meta = KernelMeta::from(self.training);
        match self.kind.as_str() {
            "klt" => {
                let mean = self
                    .mean
                    .ok_or_else(|| Error::Format("klt kernel without a mean".into()))?;
                dims("mean", mean.len(), d)?;
                Ok(FittedKernel::Klt(KltKernel {
                    n: self.n,
                    mean,
                    basis: self.matrix,
                    eigenvalues: self.energies,
                    meta,
                }))
            }
            "dct" | "saab" => {
                dims("bias", self.bias.len(), d)?;
                let (kind, plan) = if self.kind == "dct" {
                    (KernelKind::Dct, StagePlan::one_stage(self.n)?)
                } else {
                    let text = self
                        .plan
                        .ok_or_else(|| Error::Format("saab kernel without a plan".into()))?;
                    let plan = StagePlan::parse(&text)?;
                    if plan.block_side() != self.n {
                        return Err(Error::DimensionInconsistency(format!(
                            "plan {plan} covers side {}, file says n = {}",
                            plan.block_side(),
                            self.n
                        )));
                    }
                    (KernelKind::Saab, plan)
                };
                Ok(FittedKernel::Affine(AffineOrthoKernel {
                    n: self.n,
                    kind,
                    plan,
                    matrix: flat,
                    bias: self.bias,
                    energies: self.energies,
                    meta,
                }))
            }
            other => Err(Error::Format(format!("unknown kernel kind '{other}'"))),
        }
    }
}

/// Writes `bytes` to a sibling temp file, then renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

pub fn kernel_to_json(kernel: &FittedKernel) -> Result<String> {
    let mut text = serde_json::to_string_pretty(&KernelFile::from_kernel(kernel))
        .map_err(|e| Error::Format(e.to_string()))?;
    text.push('\n');
    Ok(text)
}

pub fn kernel_from_json(text: &str) -> Result<FittedKernel> {
    let value: serde_json::Value =
        serde_json::from_str(text).map_err(|e| Error::Format(e.to_string()))?;
    // version first, so a future layout reports a mismatch rather than a shape error
    let found = value
        .get("format_version")
        .and_then(serde_json::Value::as_u64)
        .ok_or_else(|| Error::Format("missing format_version".into()))?;
    if found != u64::from(KERNEL_FORMAT_VERSION) {
        return Err(Error::VersionMismatch {
            expected: KERNEL_FORMAT_VERSION,
            found: u32::try_from(found).unwrap_or(u32::MAX),
        });
    }
    let file: KernelFile = serde_json::from_value(value).map_err(|e| Error::Format(e.to_string()))?;
    file.into_kernel()
}

pub fn save_kernel(kernel: &FittedKernel, path: &Path) -> Result<()> {
    write_atomic(path, kernel_to_json(kernel)?.as_bytes())
}

pub fn load_kernel(path: &Path) -> Result<FittedKernel> {
    kernel_from_json(&fs::read_to_string(path)?)
}

pub fn encode_blocks(set: &ResidualBlockSet) -> Vec<u8> {
    let d = set.n * set.n;
    let mut out = Vec::with_capacity(BLOCK_HEADER_LEN + set.len() * d * 8);
    out.extend_from_slice(BLOCK_MAGIC);
    out.extend_from_slice(&BLOCK_FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(set.n as u32).to_le_bytes());
    out.extend_from_slice(&(set.len() as u64).to_le_bytes());
    for b in &set.blocks {
        for v in b.values() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

/// Decodes an SBLK container. The result is labeled `UNLABELED` with
/// `source` as its provenance.
pub fn decode_blocks(bytes: &[u8], source: &str) -> Result<ResidualBlockSet> {
    if bytes.len() < BLOCK_HEADER_LEN || &bytes[..4] != BLOCK_MAGIC {
        return Err(Error::Parse {
            offset: 0,
            message: "not an SBLK block file".into(),
        });
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().expect("4 bytes"));
    let version = u32_at(4);
    if version != BLOCK_FORMAT_VERSION {
        return Err(Error::Parse {
            offset: 4,
            message: format!("unsupported block file version {version}"),
        });
    }
    let n = u32_at(8) as usize;
    let count = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
    let d = n * n;
    let payload = &bytes[BLOCK_HEADER_LEN..];
    let expected = count.checked_mul(d).and_then(|v| v.checked_mul(8));
    if expected != Some(payload.len()) {
        return Err(Error::Parse {
            offset: BLOCK_HEADER_LEN,
            message: format!("payload of {} bytes does not hold {count} blocks of side {n}", payload.len()),
        });
    }
    let blocks = payload
        .chunks_exact(d * 8)
        .map(|chunk| {
            let values = chunk
                .chunks_exact(8)
                .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
                .collect();
            BlockVector::new(n, values)
        })
        .collect::<Result<Vec<_>>>()?;
    ResidualBlockSet::new(
        n,
        ResidualMode::Unlabeled,
        Channel::Gray,
        blocks,
        Provenance {
            source: source.to_string(),
            seed: None,
        },
    )
}

pub fn save_blocks(set: &ResidualBlockSet, path: &Path) -> Result<()> {
    write_atomic(path, &encode_blocks(set))
}

pub fn load_blocks(path: &Path) -> Result<ResidualBlockSet> {
    let source = path
        .file_name()
        .map_or_else(|| path.display().to_string(), |f| f.to_string_lossy().into_owned());
    decode_blocks(&fs::read(path)?, &source)
}

pub fn is_block_file(bytes: &[u8]) -> bool {
    bytes.starts_with(BLOCK_MAGIC)
}
