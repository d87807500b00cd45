//! Basis-function rendering: a unit impulse in one coefficient slot is sent
//! through the inverse transform and linearly stretched to 8-bit gray.

use std::io::Write;

use rayon::prelude::*;

use crate::error::{rejected, Result};
use crate::transforms::{AffineOrthoKernel, CoefVector};

/// Below this range a tile is treated as constant.
const FLAT_RANGE: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    /// Row-major.
    pub pixels: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            pixels: vec![0; width * height],
        }
    }

    pub fn at(&self, row: usize, col: usize) -> u8 {
        self.pixels[row * self.width + col]
    }

    /// Binary PGM, maxval 255.
    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }

    pub fn write_pgm<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        w.write_all(&self.to_pgm())
    }
}

/// Linear map of `values` onto 0..=255, min to 0 and max to 255.
pub fn normalize_to_gray(values: &[f64]) -> Vec<u8> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(hi - lo >= FLAT_RANGE) {
        return vec![128; values.len()];
    }
    let scale = 255.0 / (hi - lo);
    values
        .iter()
        // f64::round rounds half away from zero
        .map(|v| ((v - lo) * scale).round().clamp(0.0, 255.0) as u8)
        .collect()
}

pub fn basis_image(kernel: &AffineOrthoKernel, k: usize) -> Result<GrayImage> {
    let d = kernel.dim();
    if k >= d {
        return Err(rejected(format!("basis index {k} out of range 0..{d}")));
    }
    let mut y = kernel.bias.clone();
    y[k] += 1.0;
    let x = kernel.inverse(&CoefVector { values: y })?;
    Ok(GrayImage {
        width: kernel.n,
        height: kernel.n,
        pixels: normalize_to_gray(x.values()),
    })
}

/// Tile order used by `basis_grid`: DC, then `ac_order`, cut to `top` tiles.
pub fn grid_indices(ac_order: &[usize], top: Option<usize>) -> Vec<usize> {
    let all = std::iter::once(0).chain(ac_order.iter().copied());
    match top {
        Some(t) => all.take(t).collect(),
        None => all.collect(),
    }
}

/// Tiles DC then `ac_order` left to right, top to bottom, with 1-pixel black
/// separators. `top` keeps only the first tiles.
pub fn basis_grid(
    kernel: &AffineOrthoKernel,
    columns: usize,
    ac_order: &[usize],
    top: Option<usize>,
) -> Result<GrayImage> {
    if columns == 0 {
        return Err(rejected("columns must be at least 1"));
    }
    if top == Some(0) {
        return Err(rejected("top must be at least 1"));
    }
    let indices = grid_indices(ac_order, top);
    let tiles = indices
        .par_iter()
        .map(|&k| basis_image(kernel, k))
        .collect::<Result<Vec<_>>>()?;

    let n = kernel.n;
    let rows = tiles.len().div_ceil(columns);
    let mut img = GrayImage::new(columns * n + columns - 1, rows * n + rows.saturating_sub(1));
    for (t, tile) in tiles.iter().enumerate() {
        let (oy, ox) = ((t / columns) * (n + 1), (t % columns) * (n + 1));
        for r in 0..n {
            let dst = (oy + r) * img.width + ox;
            img.pixels[dst..dst + n].copy_from_slice(&tile.pixels[r * n..(r + 1) * n]);
        }
    }
    Ok(img)
}

/// Cuts tile `t` back out of a grid built with the same `n` and `columns`.
pub fn tile(grid: &GrayImage, n: usize, columns: usize, t: usize) -> Result<GrayImage> {
    let (oy, ox) = ((t / columns) * (n + 1), (t % columns) * (n + 1));
    if columns == 0 || t % columns >= columns || ox + n > grid.width || oy + n > grid.height {
        return Err(rejected(format!("tile {t} lies outside the grid")));
    }
    let mut pixels = Vec::with_capacity(n * n);
    for r in 0..n {
        let src = (oy + r) * grid.width + ox;
        pixels.extend_from_slice(&grid.pixels[src..src + n]);
    }
    Ok(GrayImage {
        width: n,
        height: n,
        pixels,
    })
}
