//! Summed-area tables and the constant-time box filter.

use rayon::prelude::*;

use super::ImageBuffer;
use crate::config::normalize_kernel;
use crate::error::{FuseError, Result};

/// Summed-area table over one plane.
///
/// The table is `(width + 1) x (height + 1)` with an all-zero first row and
/// column: entry `(x, y)` holds the sum of every sample strictly above and
/// strictly left of `(x, y)`. The bottom-right entry is the sum of the plane.
#[derive(Debug, Clone)]
pub struct IntegralImage {
    width: usize,
    height: usize,
    table: Vec<f64>,
}

impl IntegralImage {
    pub fn from_plane(plane: &[f32], width: usize, height: usize) -> Self {
        assert_eq!(plane.len(), width * height);
        Self::build(width, height, |i| plane[i] as f64)
    }

    pub fn from_plane_f64(plane: &[f64], width: usize, height: usize) -> Self {
        assert_eq!(plane.len(), width * height);
        Self::build(width, height, |i| plane[i])
    }

    fn build(width: usize, height: usize, sample: impl Fn(usize) -> f64) -> Self {
        let stride = width + 1;
        let mut table = vec![0.0f64; stride * (height + 1)];
        for y in 0..height {
            let mut row_sum = 0.0f64;
            for x in 0..width {
                row_sum += sample(y * width + x);
                table[(y + 1) * stride + x + 1] = table[y * stride + x + 1] + row_sum;
            }
        }
        IntegralImage { width, height, table }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// Raw exclusive-prefix entry, `0 <= x <= width`, `0 <= y <= height`.
    #[inline]
    pub fn entry(&self, x: usize, y: usize) -> f64 {
        self.table[y * (self.width + 1) + x]
    }

    /// Sum over the inclusive rectangle `(0, 0)..=(x, y)`.
    #[inline]
    pub fn prefix_sum(&self, x: usize, y: usize) -> f64 {
        self.entry(x + 1, y + 1)
    }

    /// Sum over the inclusive rectangle `[x0, x1] x [y0, y1]`.
    #[inline]
    pub fn rect_sum(&self, x0: usize, y0: usize, x1: usize, y1: usize) -> f64 {
        debug_assert!(x0 <= x1 && y0 <= y1 && x1 < self.width && y1 < self.height);
        let s = self.width + 1;
        let t = &self.table;
        t[(y1 + 1) * s + x1 + 1] - t[y0 * s + x1 + 1] - t[(y1 + 1) * s + x0] + t[y0 * s + x0]
    }
}

/// One summed-area table per channel.
pub fn integral_image(img: &ImageBuffer) -> Vec<IntegralImage> {
    (0..img.channels())
        .map(|c| IntegralImage::from_plane(&img.plane(c), img.width(), img.height()))
        .collect()
}

/// Windowed mean over a `k x k` window (even `k` rounded up to odd),
/// normalised by the number of in-bounds samples.
pub fn box_filter_plane(plane: &[f32], width: usize, height: usize, k: usize) -> Vec<f32> {
    let wide: Vec<f64> = plane.iter().map(|&v| v as f64).collect();
    box_filter_plane_f64(&wide, width, height, k).into_iter().map(|v| v as f32).collect()
}

/// Double-precision variant of [`box_filter_plane`].
///
/// Evaluated separably with running window sums: a column pass that walks
/// the rows top to bottom, then a row pass. Each output costs O(1) for any
/// `k` and the working set stays a few rows, unlike a full summed-area
/// table.
pub fn box_filter_plane_f64(plane: &[f64], width: usize, height: usize, k: usize) -> Vec<f64> {
    assert_eq!(plane.len(), width * height);
    let r = normalize_kernel(k.max(1)) / 2;
    // vertical window sums, normalised by the in-bounds row count
    let mut vert = vec![0.0f64; width * height];
    let mut acc = vec![0.0f64; width];
    for y in 0..r.min(height) {
        for (a, v) in acc.iter_mut().zip(&plane[y * width..(y + 1) * width]) {
            *a += v;
        }
    }
    for y in 0..height {
        if y + r < height {
            let add = &plane[(y + r) * width..(y + r + 1) * width];
            acc.iter_mut().zip(add).for_each(|(a, v)| *a += v);
        }
        if y > r {
            let sub = &plane[(y - r - 1) * width..(y - r) * width];
            acc.iter_mut().zip(sub).for_each(|(a, v)| *a -= v);
        }
        let rows = ((y + r).min(height - 1) - y.saturating_sub(r) + 1) as f64;
        for (o, a) in vert[y * width..(y + 1) * width].iter_mut().zip(&acc) {
            *o = a / rows;
        }
    }
    let mut out = vec![0.0f64; width * height];
    out.par_chunks_mut(width).zip(vert.par_chunks(width)).for_each(|(row, src)| {
        let mut s: f64 = src[..r.min(width)].iter().sum();
        for x in 0..width {
            if x + r < width {
                s += src[x + r];
            }
            if x > r {
                s -= src[x - r - 1];
            }
            let cols = ((x + r).min(width - 1) - x.saturating_sub(r) + 1) as f64;
            row[x] = s / cols;
        }
    });
    out
}

/// Box filter every channel of `img`. Runtime does not depend on `k`.
pub fn box_filter(img: &ImageBuffer, k: i64) -> Result<ImageBuffer> {
    if k <= 0 {
        return Err(FuseError::Parameter(format!("box filter size must be >= 1, got {k}")));
    }
    let (w, h) = img.dims();
    let planes: Vec<Vec<f32>> = (0..img.channels())
        .map(|c| box_filter_plane(&img.plane(c), w, h, k as usize))
        .collect();
    ImageBuffer::from_planes(w, h, &planes)
}
