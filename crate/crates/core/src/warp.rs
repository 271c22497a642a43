//! Backward and forward warping, and the offset-averaged forward warp used
//! to move the wide image into the output view.

use rayon::prelude::*;

use crate::config::FusionConfig;
use crate::error::{check_dims, Result};
use crate::imagecore::{bilinear_sample_into, BinaryMask, FlowField, ImageBuffer};

#[derive(Debug, Clone, PartialEq)]
pub struct WarpResult {
    pub image: ImageBuffer,
    /// Set where a splat landed (forward) or the sample was in range (backward).
    pub validity: BinaryMask,
}

/// `out(p) = src(p + f(p))`, bilinear, clamped at the border. Output grid is the flow's.
pub fn backward_warp(src: &ImageBuffer, f: &FlowField) -> WarpResult {
    let (w, h) = f.dims();
    let c = src.channels();
    let mut image = ImageBuffer::new(w, h, c);
    let mut valid = vec![false; w * h];
    image
        .data_mut()
        .par_chunks_mut(w * c)
        .zip(valid.par_chunks_mut(w))
        .enumerate()
        .for_each(|(y, (row, vrow))| {
            for x in 0..w {
                let i = y * w + x;
                let sx = x as f64 + f.u[i] as f64;
                let sy = y as f64 + f.v[i] as f64;
                vrow[x] = bilinear_sample_into(src, sx, sy, &mut row[x * c..(x + 1) * c]);
            }
        });
    let validity = BinaryMask::from_bits(w, h, valid).expect("sized above");
    WarpResult { image, validity }
}

/// For every destination pixel, the source index whose splat wins it.
///
/// Source `p` lands on `round(p + disp(p) + offset)`. Among several sources
/// landing on the same pixel the one with the largest `priority` wins.
/// Equal priorities go to the smaller displacement, then to the larger
/// raster index. The winner is a pure function of the candidate set, so
/// visiting order does not matter.
///
/// Preferring the smaller displacement keeps isolated pixels whose budget
/// jumped (next to a discontinuity) from overwriting their neighbours with
/// a one-pixel sliver of foreign flow.
pub fn splat_winners(disp: &FlowField, priority: &[f32], offset: (f64, f64)) -> Vec<Option<u32>> {
    let (w, h) = disp.dims();
    assert_eq!(priority.len(), w * h);
    let mut winner: Vec<Option<u32>> = vec![None; w * h];
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let tx = (x as f64 + disp.u[i] as f64 + offset.0 + 0.5).floor();
            let ty = (y as f64 + disp.v[i] as f64 + offset.1 + 0.5).floor();
            if !(tx >= 0.0 && ty >= 0.0 && tx < w as f64 && ty < h as f64) {
                continue;
            }
            let t = ty as usize * w + tx as usize;
            let take = match winner[t] {
                None => true,
                Some(j) => {
                    let (pi, pj) = (priority[i], priority[j as usize]);
                    let di = disp.u[i].hypot(disp.v[i]);
                    let dj = disp.u[j as usize].hypot(disp.v[j as usize]);
                    pi > pj || (pi == pj && (di < dj || (di == dj && i > j as usize)))
                }
            };
            if take {
                winner[t] = Some(i as u32);
            }
        }
    }
    winner
}

/// Per-pixel magnitudes of `f`, the splat priority used throughout the pipeline.
pub fn priority_from_flow(f: &FlowField) -> Vec<f32> {
    (0..f.len()).map(|i| f.magnitude_at(i)).collect()
}

fn forward_warp_image_offset(src: &ImageBuffer, disp: &FlowField, priority: &[f32], offset: (f64, f64)) -> WarpResult {
    let (w, h) = disp.dims();
    let c = src.channels();
    let winners = splat_winners(disp, priority, offset);
    let mut image = ImageBuffer::new(w, h, c);
    let mut bits = vec![false; w * h];
    {
        let out = image.data_mut();
        for (t, win) in winners.iter().enumerate() {
            if let Some(s) = *win {
                let s = s as usize;
                out[t * c..(t + 1) * c].copy_from_slice(&src.data()[s * c..(s + 1) * c]);
                bits[t] = true;
            }
        }
    }
    WarpResult { image, validity: BinaryMask::from_bits(w, h, bits).expect("sized above") }
}

/// Push each pixel of `src` to `round(p + disp(p))`; unhit pixels are invalid.
pub fn forward_warp(src: &ImageBuffer, disp: &FlowField, priority: &[f32]) -> Result<WarpResult> {
    check_dims(disp.dims(), src.dims())?;
    Ok(forward_warp_image_offset(src, disp, priority, (0.0, 0.0)))
}

/// Forward warp of a flow-valued field. Unhit pixels come back with `valid = false`.
pub fn forward_warp_flow(values: &FlowField, disp: &FlowField, priority: &[f32]) -> Result<FlowField> {
    check_dims(disp.dims(), values.dims())?;
    let (w, h) = disp.dims();
    let winners = splat_winners(disp, priority, (0.0, 0.0));
    let mut out = FlowField::zeros(w, h);
    for (t, win) in winners.iter().enumerate() {
        match *win {
            Some(s) => {
                out.u[t] = values.u[s as usize];
                out.v[t] = values.v[s as usize];
                out.valid[t] = true;
            }
            None => out.valid[t] = false,
        }
    }
    Ok(out)
}

/// Average of forward warps over every `(u, v)` pair of the configured offset grid.
///
/// Each output pixel averages the warps in which it was hit, and is invalid
/// only when no warp hit it.
pub fn multi_warp_average(src: &ImageBuffer, disp: &FlowField, priority: &[f32], cfg: &FusionConfig) -> Result<WarpResult> {
    check_dims(disp.dims(), src.dims())?;
    let offsets = cfg.offsets();
    let pairs: Vec<(f64, f64)> = offsets.iter().flat_map(|&v| offsets.iter().map(move |&u| (u, v))).collect();
    let (w, h) = disp.dims();
    let c = src.channels();
    let mut sum = vec![0.0f64; w * h * c];
    let mut count = vec![0u32; w * h];
    for &offset in &pairs {
        let warped = forward_warp_image_offset(src, disp, priority, offset);
        for (t, &hit) in warped.validity.bits().iter().enumerate() {
            if hit {
                count[t] += 1;
                for k in 0..c {
                    sum[t * c + k] += warped.image.data()[t * c + k] as f64;
                }
            }
        }
    }
    let mut image = ImageBuffer::new(w, h, c);
    let out = image.data_mut();
    for t in 0..w * h {
        if count[t] > 0 {
            for k in 0..c {
                out[t * c + k] = (sum[t * c + k] / count[t] as f64) as f32;
            }
        }
    }
    let validity = BinaryMask::from_bits(w, h, count.iter().map(|&n| n > 0).collect()).expect("sized above");
    Ok(WarpResult { image, validity })
}

/// Number of warps `multi_warp_average` performs for `cfg`.
pub fn offset_pair_count(cfg: &FusionConfig) -> usize {
    let n = cfg.offsets().len();
    n * n
}
