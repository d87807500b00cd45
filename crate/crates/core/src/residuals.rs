//! Residual block datasets: raw plane loading (binary PGM, 8-bit Y4M),
//! simplified open-loop intra prediction, and separable AR(1) synthesis.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{rejected, Error, Result};
use crate::linalg::{eig_sym, SymMatrix};
use crate::transforms::BlockVector;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Channel {
    Y,
    Cb,
    Cr,
    Gray,
}

impl Channel {
    pub fn as_str(self) -> &'static str {
        match self {
            Channel::Y => "Y",
            Channel::Cb => "Cb",
            Channel::Cr => "Cr",
            Channel::Gray => "GRAY",
        }
    }
}

impl FromStr for Channel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "y" => Ok(Channel::Y),
            "cb" | "u" => Ok(Channel::Cb),
            "cr" | "v" => Ok(Channel::Cr),
            "gray" | "grey" => Ok(Channel::Gray),
            _ => Err(rejected(format!("unknown channel '{s}'"))),
        }
    }
}

/// Single image plane with samples normalized to `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Plane {
    pub width: usize,
    pub height: usize,
    pub samples: Vec<f64>,
    pub channel: Channel,
}

impl Plane {
    pub fn new(width: usize, height: usize, samples: Vec<f64>, channel: Channel) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(rejected("plane dimensions must be positive"));
        }
        if samples.len() != width * height {
            return Err(rejected(format!(
                "plane {width}x{height} needs {} samples, got {}",
                width * height,
                samples.len()
            )));
        }
        if samples.iter().any(|v| !v.is_finite() || *v < 0.0 || *v > 1.0) {
            return Err(rejected("plane samples must be finite and within [0, 1]"));
        }
        Ok(Self {
            width,
            height,
            samples,
            channel,
        })
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        channel: Channel,
        f: impl Fn(usize, usize) -> f64,
    ) -> Result<Self> {
        let mut samples = Vec::with_capacity(width * height);
        for r in 0..height {
            for c in 0..width {
                samples.push(f(r, c));
            }
        }
        Self::new(width, height, samples, channel)
    }

    #[inline]
    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.samples[row * self.width + col]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PlaneFormat {
    Pgm,
    Y4m,
}

impl PlaneFormat {
    pub fn detect(bytes: &[u8]) -> Option<Self> {
        if bytes.starts_with(b"YUV4MPEG2") {
            Some(PlaneFormat::Y4m)
        } else if bytes.starts_with(b"P") {
            Some(PlaneFormat::Pgm)
        } else {
            None
        }
    }
}

pub fn load_plane(
    path: &Path,
    format: PlaneFormat,
    frame: usize,
    channel: Channel,
) -> Result<Plane> {
    let bytes = std::fs::read(path)?;
    match format {
        PlaneFormat::Pgm => {
            if frame != 0 {
                return Err(Error::Range(format!("PGM has one frame, requested {frame}")));
            }
            parse_pgm(&bytes)
        }
        PlaneFormat::Y4m => parse_y4m(&bytes, frame, channel),
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn error(&self, message: impl Into<String>) -> Error {
        Error::Parse {
            offset: self.pos,
            message: message.into(),
        }
    }

    fn skip_space_and_comments(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b.is_ascii_whitespace() {
                self.pos += 1;
            } else if b == b'#' {
                while let Some(&c) = self.bytes.get(self.pos) {
                    self.pos += 1;
                    if c == b'\n' {
                        break;
                    }
                }
            } else {
                break;
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<usize> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(u8::is_ascii_digit) {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(self.error(format!("expected {what}")));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Parse {
                offset: start,
                message: format!("{what} out of range"),
            })
    }
}

/// Parses a binary (P5) 8-bit PGM.
pub fn parse_pgm(bytes: &[u8]) -> Result<Plane> {
    let mut cur = Cursor { bytes, pos: 0 };
    match bytes.get(..2) {
        Some(b"P5") => {}
        Some(b"P2") | Some(b"P3") => {
            return Err(cur.error("ASCII PNM variants are not supported; expected binary P5"))
        }
        _ => return Err(cur.error("expected P5 magic")),
    }
    cur.pos = 2;
    if !bytes.get(2).is_some_and(|b| b.is_ascii_whitespace() || *b == b'#') {
        return Err(cur.error("expected whitespace after magic"));
    }
    let width = cur.number("width")?;
    let height = cur.number("height")?;
    let maxval = cur.number("maxval")?;
    if width == 0 || height == 0 {
        return Err(cur.error("image dimensions must be positive"));
    }
    if maxval == 0 || maxval > 255 {
        return Err(cur.error(format!("maxval {maxval} is not an 8-bit value")));
    }
    if !bytes.get(cur.pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(cur.error("expected single whitespace before raster"));
    }
    cur.pos += 1;
    let len = width * height;
    let raster = bytes
        .get(cur.pos..cur.pos + len)
        .ok_or_else(|| cur.error(format!("raster truncated: need {len} bytes")))?;
    let scale = maxval as f64;
    let samples = raster
        .iter()
        .map(|&b| {
            if b as usize > maxval {
                Err(rejected(format!("sample {b} exceeds maxval {maxval}")))
            } else {
                Ok(b as f64 / scale)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Plane::new(width, height, samples, Channel::Gray)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Chroma {
    C420,
    C444,
}

/// Parses the requested plane of one frame of an 8-bit 4:2:0 or 4:4:4 Y4M
/// stream. Chroma planes are returned at their native resolution.
pub fn parse_y4m(bytes: &[u8], frame: usize, channel: Channel) -> Result<Plane> {
    if !bytes.starts_with(b"YUV4MPEG2") {
        return Err(Error::Parse {
            offset: 0,
            message: "expected YUV4MPEG2 signature".into(),
        });
    }
    let header_end = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::Parse {
            offset: bytes.len(),
            message: "unterminated stream header".into(),
        })?;
    let header = std::str::from_utf8(&bytes[..header_end]).map_err(|e| Error::Parse {
        offset: e.valid_up_to(),
        message: "header is not ASCII".into(),
    })?;

    let mut width = None;
    let mut height = None;
    let mut chroma = Chroma::C420;
    let mut offset = 0;
    for token in header.split(' ') {
        let tok_offset = offset;
        offset += token.len() + 1;
        let parse_dim = |s: &str| {
            s.parse::<usize>().ok().filter(|&v| v > 0).ok_or(Error::Parse {
                offset: tok_offset,
                message: format!("bad dimension '{token}'"),
            })
        };
        match token.as_bytes().first() {
            Some(b'W') => width = Some(parse_dim(&token[1..])?),
            Some(b'H') => height = Some(parse_dim(&token[1..])?),
            Some(b'C') => {
                chroma = match &token[1..] {
                    "420" | "420jpeg" | "420paldv" | "420mpeg2" => Chroma::C420,
                    "444" => Chroma::C444,
                    other => {
                        return Err(Error::Parse {
                            offset: tok_offset,
                            message: format!("unsupported colorspace '{other}'"),
                        })
                    }
                }
            }
            _ => {}
        }
    }
    let (width, height) = match (width, height) {
        (Some(w), Some(h)) => (w, h),
        _ => {
            return Err(Error::Parse {
                offset: header_end,
                message: "header lacks W or H".into(),
            })
        }
    };
    let (cw, ch) = match chroma {
        Chroma::C420 => (width.div_ceil(2), height.div_ceil(2)),
        Chroma::C444 => (width, height),
    };
    let luma_len = width * height;
    let chroma_len = cw * ch;
    let frame_len = luma_len + 2 * chroma_len;

    let mut pos = header_end + 1;
    let mut index = 0;
    loop {
        if pos >= bytes.len() {
            return Err(Error::Range(format!(
                "frame {frame} requested but stream has {index} frames"
            )));
        }
        if !bytes[pos..].starts_with(b"FRAME") {
            return Err(Error::Parse {
                offset: pos,
                message: "expected FRAME marker".into(),
            });
        }
        let line_end = bytes[pos..]
            .iter()
            .position(|&b| b == b'\n')
            .map(|p| pos + p)
            .ok_or_else(|| Error::Parse {
                offset: pos,
                message: "unterminated FRAME header".into(),
            })?;
        let data = line_end + 1;
        if data + frame_len > bytes.len() {
            return Err(Error::Parse {
                offset: data,
                message: format!("frame {index} truncated"),
            });
        }
        if index == frame {
            let (start, w, h) = match channel {
                Channel::Y => (data, width, height),
                Channel::Cb => (data + luma_len, cw, ch),
                Channel::Cr => (data + luma_len + chroma_len, cw, ch),
                Channel::Gray => return Err(rejected("Y4M planes are Y, Cb or Cr")),
            };
            let samples = bytes[start..start + w * h]
                .iter()
                .map(|&b| b as f64 / 255.0)
                .collect();
            return Plane::new(w, h, samples, channel);
        }
        pos = data + frame_len;
        index += 1;
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum PredictionMode {
    Planar,
    Dc,
    Horizontal,
    Vertical,
}

impl FromStr for PredictionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "planar" => Ok(PredictionMode::Planar),
            "dc" => Ok(PredictionMode::Dc),
            "horizontal" => Ok(PredictionMode::Horizontal),
            "vertical" => Ok(PredictionMode::Vertical),
            _ => Err(rejected(format!("unknown prediction mode '{s}'"))),
        }
    }
}

/// Label of how a block set was produced.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ResidualMode {
    Planar,
    Dc,
    Horizontal,
    Vertical,
    SynthAr1,
    /// Loaded from a block file, which does not record the mode.
    Unlabeled,
}

impl From<PredictionMode> for ResidualMode {
    fn from(m: PredictionMode) -> Self {
        match m {
            PredictionMode::Planar => ResidualMode::Planar,
            PredictionMode::Dc => ResidualMode::Dc,
            PredictionMode::Horizontal => ResidualMode::Horizontal,
            PredictionMode::Vertical => ResidualMode::Vertical,
        }
    }
}

impl fmt::Display for ResidualMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ResidualMode::Planar => "PLANAR",
            ResidualMode::Dc => "DC",
            ResidualMode::Horizontal => "HORIZONTAL",
            ResidualMode::Vertical => "VERTICAL",
            ResidualMode::SynthAr1 => "SYNTH_AR1",
            ResidualMode::Unlabeled => "UNLABELED",
        })
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Provenance {
    pub source: String,
    pub seed: Option<u64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ResidualBlockSet {
    pub n: usize,
    pub mode: ResidualMode,
    pub channel: Channel,
    pub blocks: Vec<BlockVector>,
    pub provenance: Provenance,
}

impl ResidualBlockSet {
    pub fn new(
        n: usize,
        mode: ResidualMode,
        channel: Channel,
        blocks: Vec<BlockVector>,
        provenance: Provenance,
    ) -> Result<Self> {
        if blocks.is_empty() {
            return Err(Error::InsufficientData("block set is empty".into()));
        }
        if let Some(b) = blocks.iter().find(|b| b.n() != n) {
            return Err(rejected(format!(
                "block of side {} in a set of side {n}",
                b.n()
            )));
        }
        Ok(Self {
            n,
            mode,
            channel,
            blocks,
            provenance,
        })
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    /// Every block multiplied by `factor`; provenance is kept.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        let blocks = self
            .blocks
            .iter()
            .map(|b| BlockVector::new(self.n, b.values().iter().map(|v| v * factor).collect()))
            .collect::<Result<Vec<_>>>()?;
        Self::new(self.n, self.mode, self.channel, blocks, self.provenance.clone())
    }
}

/// Predicts the `n x n` block at `origin = (row, col)` from the original
/// samples bordering it. Top-right and bottom-left references beyond the
/// plane edge are replaced by the last top and left reference respectively.
pub fn intra_predict(
    plane: &Plane,
    origin: (usize, usize),
    n: usize,
    mode: PredictionMode,
) -> Result<BlockVector> {
    let (row, col) = origin;
    if n == 0 {
        return Err(rejected("block side must be positive"));
    }
    if row == 0 || col == 0 || row + n > plane.height || col + n > plane.width {
        return Err(Error::OutOfBorder(format!(
            "{n}x{n} block at ({row}, {col}) with its top/left border does not fit in a {}x{} plane",
            plane.width, plane.height
        )));
    }
    let top: Vec<f64> = (0..n).map(|x| plane.at(row - 1, col + x)).collect();
    let left: Vec<f64> = (0..n).map(|y| plane.at(row + y, col - 1)).collect();

    let mut values = vec![0.0; n * n];
    match mode {
        PredictionMode::Dc => {
            let mean = (top.iter().sum::<f64>() + left.iter().sum::<f64>()) / (2 * n) as f64;
            values.fill(mean);
        }
        PredictionMode::Horizontal => {
            for (y, row_vals) in values.chunks_exact_mut(n).enumerate() {
                row_vals.fill(left[y]);
            }
        }
        PredictionMode::Vertical => {
            for row_vals in values.chunks_exact_mut(n) {
                row_vals.copy_from_slice(&top);
            }
        }
        PredictionMode::Planar => {
            let top_right = if col + n < plane.width {
                plane.at(row - 1, col + n)
            } else {
                top[n - 1]
            };
            let bottom_left = if row + n < plane.height {
                plane.at(row + n, col - 1)
            } else {
                left[n - 1]
            };
            let nf = n as f64;
            for y in 0..n {
                for x in 0..n {
                    let (xf, yf) = (x as f64, y as f64);
                    values[y * n + x] = ((nf - 1.0 - xf) * left[y]
                        + (xf + 1.0) * top_right
                        + (nf - 1.0 - yf) * top[x]
                        + (yf + 1.0) * bottom_left)
                        / (2.0 * nf);
                }
            }
        }
    }
    BlockVector::new(n, values)
}

/// Tiles the plane into `n x n` blocks starting at `(1, 1)` and returns
/// `original - prediction` for each, in raster order.
pub fn extract_residuals(plane: &Plane, n: usize, mode: PredictionMode) -> Result<ResidualBlockSet> {
    if n == 0 || plane.width < n + 1 || plane.height < n + 1 {
        return Err(Error::Range(format!(
            "{}x{} plane is too small for {n}x{n} blocks with a reference border",
            plane.width, plane.height
        )));
    }
    let rows = (plane.height - 1) / n;
    let cols = (plane.width - 1) / n;
    let blocks = (0..rows * cols)
        .into_par_iter()
        .map(|i| {
            let origin = (1 + (i / cols) * n, 1 + (i % cols) * n);
            let pred = intra_predict(plane, origin, n, mode)?;
            let mut values = pred.into_values();
            for y in 0..n {
                for x in 0..n {
                    values[y * n + x] = plane.at(origin.0 + y, origin.1 + x) - values[y * n + x];
                }
            }
            BlockVector::new(n, values)
        })
        .collect::<Result<Vec<_>>>()?;
    ResidualBlockSet::new(
        n,
        mode.into(),
        plane.channel,
        blocks,
        Provenance {
            source: format!("intra {mode:?} residuals of {}x{} {} plane", plane.width, plane.height, plane.channel.as_str()),
            seed: None,
        },
    )
}

/// Zero-mean Gaussian blocks with separable covariance
/// `sigma^2 rho^|i-k| rho^|j-l|`. Block `i` draws from ChaCha stream `i` of
/// `seed`, so output is independent of thread scheduling.
pub fn synth_ar1(rho: f64, sigma: f64, n: usize, count: usize, seed: u64) -> Result<ResidualBlockSet> {
    if !(0.0..1.0).contains(&rho) {
        return Err(rejected(format!("rho must lie in [0, 1), got {rho}")));
    }
    if !sigma.is_finite() || sigma < 0.0 {
        return Err(rejected(format!("sigma must be finite and non-negative, got {sigma}")));
    }
    if n == 0 {
        return Err(rejected("block side must be positive"));
    }
    if count == 0 {
        return Err(rejected("count must be at least 1"));
    }

    let root = ar1_sqrt(rho, n)?;
    let blocks = (0..count)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let z: Vec<f64> = (0..n * n).map(|_| rng.sample(StandardNormal)).collect();
            // rows: T = Z S^T, then columns: X = S T
            let mut t = vec![0.0; n * n];
            for r in 0..n {
                for c in 0..n {
                    t[r * n + c] = (0..n).map(|k| z[r * n + k] * root[c * n + k]).sum();
                }
            }
            let mut x = vec![0.0; n * n];
            for r in 0..n {
                for c in 0..n {
                    x[r * n + c] = sigma * (0..n).map(|k| root[r * n + k] * t[k * n + c]).sum::<f64>();
                }
            }
            BlockVector::new(n, x)
        })
        .collect::<Result<Vec<_>>>()?;
    ResidualBlockSet::new(
        n,
        ResidualMode::SynthAr1,
        Channel::Gray,
        blocks,
        Provenance {
            source: format!("ar1 rho={rho} sigma={sigma} n={n} count={count}"),
            seed: Some(seed),
        },
    )
}

/// Symmetric square root of the 1D AR(1) correlation matrix, row-major.
fn ar1_sqrt(rho: f64, n: usize) -> Result<Vec<f64>> {
    let k = SymMatrix::from_upper(n, |i, j| rho.powi((j - i) as i32));
    let eig = eig_sym(&k)?;
    let mut root = vec![0.0; n * n];
    for (lambda, v) in eig.eigenvalues.iter().zip(&eig.eigenvectors) {
        let s = lambda.max(0.0).sqrt();
        for i in 0..n {
            for j in 0..n {
                root[i * n + j] += s * v[i] * v[j];
            }
        }
    }
    Ok(root)
}
