//! Regional (block-wise) histogram matching.

use rayon::prelude::*;

use crate::config::FusionConfig;
use crate::error::{check_dims, FuseError, Result};
use crate::imagecore::{BinaryMask, ImageBuffer};

pub const BINS: usize = 256;
/// Blocks with fewer mutually valid pixels are skipped.
pub const MIN_BLOCK_PIXELS: usize = 16;

#[inline]
pub fn bin_of(v: f32) -> usize {
    (v * 255.0).round().clamp(0.0, 255.0) as usize
}

pub fn histogram<'a>(values: impl IntoIterator<Item = &'a f32>) -> [u64; BINS] {
    let mut h = [0u64; BINS];
    for &v in values {
        h[bin_of(v)] += 1;
    }
    h
}

/// CDF-matching lookup: `lut[b]` is the smallest reference bin whose
/// cumulative count reaches the source's cumulative count at `b`. Both
/// histograms must have the same total.
pub fn matching_lut(src: &[u64; BINS], reference: &[u64; BINS]) -> [u8; BINS] {
    let mut lut = [0u8; BINS];
    let (mut cs, mut cr, mut j) = (0u64, reference[0], 0usize);
    for b in 0..BINS {
        cs += src[b];
        while cr < cs && j < BINS - 1 {
            j += 1;
            cr += reference[j];
        }
        lut[b] = j as u8;
    }
    lut
}

/// Block origins along one axis: `0, stride, 2 * stride, ...` below `size`.
pub fn block_starts(size: usize, stride: usize) -> Vec<usize> {
    (0..size).step_by(stride.max(1)).collect()
}

#[derive(Debug, Clone)]
pub struct BlockLut {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
    /// One table per channel.
    pub luts: Vec<[u8; BINS]>,
}

/// Per-block lookup tables in raster block order; skipped blocks are `None`.
pub fn block_luts(src: &ImageBuffer, reference: &ImageBuffer, valid: &BinaryMask, cfg: &FusionConfig) -> Vec<Option<BlockLut>> {
    let (w, h) = src.dims();
    let c = src.channels();
    let block = cfg.rhe_block;
    let mut rects = Vec::new();
    for &y0 in &block_starts(h, cfg.rhe_stride) {
        for &x0 in &block_starts(w, cfg.rhe_stride) {
            rects.push((x0, y0, (x0 + block).min(w), (y0 + block).min(h)));
        }
    }
    let bins = |img: &ImageBuffer| img.data().iter().map(|&v| bin_of(v) as u8).collect::<Vec<u8>>();
    let (bs, br) = (bins(src), bins(reference));
    let valid = valid.bits();
    rects
        .par_iter()
        .map(|&(x0, y0, x1, y1)| {
            let mut hs = vec![[0u64; BINS]; c];
            let mut hr = vec![[0u64; BINS]; c];
            let mut count = 0usize;
            for y in y0..y1 {
                for i in y * w + x0..y * w + x1 {
                    if !valid[i] {
                        continue;
                    }
                    count += 1;
                    for ch in 0..c {
                        hs[ch][bs[i * c + ch] as usize] += 1;
                        hr[ch][br[i * c + ch] as usize] += 1;
                    }
                }
            }
            (count >= MIN_BLOCK_PIXELS).then(|| BlockLut {
                x0,
                y0,
                x1,
                y1,
                luts: (0..c).map(|ch| matching_lut(&hs[ch], &hr[ch])).collect(),
            })
        })
        .collect()
}

/// Match `src` to `reference` block by block over the mutually valid pixels
/// in `valid`, then average the mapped values of every block covering a
/// pixel. Pixels no usable block covers pass through unchanged.
pub fn regional_histogram_match(src: &ImageBuffer, reference: &ImageBuffer, valid: &BinaryMask, cfg: &FusionConfig) -> Result<ImageBuffer> {
    check_dims(src.dims(), reference.dims())?;
    check_dims(src.dims(), valid.dims())?;
    if src.channels() != reference.channels() {
        return Err(FuseError::Parameter("source and reference channel counts differ".into()));
    }
    if cfg.rhe_block == 0 || cfg.rhe_stride == 0 {
        return Err(FuseError::Parameter("block size and stride must be positive".into()));
    }
    let (w, h, c) = (src.width(), src.height(), src.channels());
    let luts = block_luts(src, reference, valid, cfg);
    let (xs, ys) = (block_starts(w, cfg.rhe_stride), block_starts(h, cfg.rhe_stride));
    // blocks covering coordinate i along one axis form a contiguous run of starts
    let covering = |starts: &[usize], i: usize| {
        let hi = starts.partition_point(|&s| s <= i);
        let lo = starts.partition_point(|&s| s + cfg.rhe_block <= i);
        lo..hi
    };
    let xranges: Vec<_> = (0..w).map(|x| covering(&xs, x)).collect();
    let mut out = src.clone();
    out.data_mut().par_chunks_mut(w * c).enumerate().for_each(|(y, row)| {
        let yr = covering(&ys, y);
        let mut acc = vec![0.0f64; c];
        let mut bins = vec![0usize; c];
        for x in 0..w {
            acc.iter_mut().for_each(|a| *a = 0.0);
            let mut n = 0u32;
            for (ch, b) in bins.iter_mut().enumerate() {
                *b = bin_of(src.get(x, y, ch));
            }
            for by in yr.clone() {
                for bx in xranges[x].clone() {
                    let Some(b) = &luts[by * xs.len() + bx] else { continue };
                    n += 1;
                    for ch in 0..c {
                        acc[ch] += b.luts[ch][bins[ch]] as f64 / 255.0;
                    }
                }
            }
            if n > 0 {
                for ch in 0..c {
                    row[x * c + ch] = (acc[ch] / n as f64) as f32;
                }
            }
        }
    });
    Ok(out)
}

/// Chi-square distance between two histograms normalised to unit mass.
pub fn chi_square(a: &[u64; BINS], b: &[u64; BINS]) -> f64 {
    let (sa, sb) = (a.iter().sum::<u64>().max(1) as f64, b.iter().sum::<u64>().max(1) as f64);
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let (p, q) = (x as f64 / sa, y as f64 / sb);
            if p + q > 0.0 { (p - q).powi(2) / (p + q) } else { 0.0 }
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cfg(block: usize, stride: usize) -> FusionConfig {
        FusionConfig { rhe_block: block, rhe_stride: stride, ..Default::default() }
    }

    fn textured(w: usize, h: usize, seed: u64) -> ImageBuffer {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ImageBuffer::from_fn(w, h, 3, |_, _, _| rng.random_range(0.1..0.8))
    }

    #[test]
    fn self_match_is_identity_up_to_binning() {
        let img = textured(90, 70, 1);
        let out = regional_histogram_match(&img, &img, &BinaryMask::full(90, 70), &cfg(40, 15)).unwrap();
        for (a, b) in img.data().iter().zip(out.data()) {
            assert!((a - b).abs() <= 1.0 / 255.0 + 1e-6);
        }
    }

    #[test]
    fn brightness_shift_is_undone() {
        let reference = textured(120, 100, 2);
        let mut src = reference.clone();
        src.data_mut().iter_mut().for_each(|v| *v += 30.0 / 255.0);
        let out = regional_histogram_match(&src, &reference, &BinaryMask::full(120, 100), &cfg(50, 20)).unwrap();
        assert!(out.mean_abs_diff(&reference, None) <= 2.0 / 255.0);
        let max = out.data().iter().zip(reference.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f32::max);
        assert!(max <= 2.0 / 255.0, "{max}");
    }

    #[test]
    fn lut_examples() {
        let mut a = [0u64; BINS];
        let mut b = [0u64; BINS];
        a[10] = 5;
        a[20] = 5;
        b[100] = 5;
        b[200] = 5;
        let lut = matching_lut(&a, &b);
        assert_eq!(lut[10], 100);
        assert_eq!(lut[20], 200);
        assert_eq!(lut[0], 0);
        assert_eq!(lut[255], 200);
        assert!(lut.windows(2).all(|p| p[0] <= p[1]));
    }

    #[test]
    fn sparse_blocks_pass_through() {
        let src = textured(30, 30, 3);
        let reference = ImageBuffer::filled(30, 30, 3, 0.0);
        let mut valid = BinaryMask::new(30, 30);
        for i in 0..10 {
            valid.set(i, 0, true);
        }
        let out = regional_histogram_match(&src, &reference, &valid, &cfg(30, 30)).unwrap();
        assert_eq!(out, src);
    }

    #[test]
    fn block_grid() {
        assert_eq!(block_starts(100, 30), vec![0, 30, 60, 90]);
        assert_eq!(block_starts(1024, 30).len(), 35);
    }

    #[test]
    fn chi_square_shrinks_after_matching() {
        let reference = textured(80, 80, 4);
        let mut src = reference.clone();
        src.data_mut().iter_mut().for_each(|v| *v = (*v + 0.1).min(1.0));
        let out = regional_histogram_match(&src, &reference, &BinaryMask::full(80, 80), &cfg(40, 20)).unwrap();
        let plane = |img: &ImageBuffer| histogram(img.plane(0).iter());
        assert!(chi_square(&plane(&out), &plane(&reference)) < chi_square(&plane(&src), &plane(&reference)));
    }
}
