//! Tone matching of the warped telephoto image and the two blending steps:
//! occlusion-aware fusion inside the overlap, and compositing the overlap
//! back into the full wide frame.

mod histogram;
mod pyramid;

pub use histogram::{
    bin_of, block_luts, block_starts, chi_square, histogram, matching_lut, regional_histogram_match, BlockLut, BINS,
    MIN_BLOCK_PIXELS,
};
pub use pyramid::{
    blur, collapse, downsample, effective_levels, gaussian_pyramid, laplacian_pyramid, pyramid_blend, upsample, Plane,
};

use crate::config::FusionConfig;
use crate::error::{check_dims, Result};
use crate::imagecore::{check_rect, BinaryMask, ImageBuffer, WeightMap};
use crate::occlusion::soften_mask;

/// Products of the overlap fusion.
#[derive(Debug, Clone)]
pub struct OverlapFusion {
    /// Tone-matched telephoto image.
    pub toned: ImageBuffer,
    /// Weight of the wide image.
    pub weights: WeightMap,
    pub image: ImageBuffer,
}

/// Overlap fusion when the warped wide image has holes. Hole pixels take the
/// tone-matched telephoto value and are excluded from histogram statistics.
pub fn fuse_overlap_masked(
    it_o: &ImageBuffer,
    iw_o: &ImageBuffer,
    occ: &BinaryMask,
    wide_valid: &BinaryMask,
    cfg: &FusionConfig,
) -> Result<OverlapFusion> {
    check_dims(it_o.dims(), iw_o.dims())?;
    check_dims(it_o.dims(), occ.dims())?;
    check_dims(it_o.dims(), wide_valid.dims())?;
    let (w, h) = it_o.dims();
    let stats_mask = occ.not().intersect(wide_valid);
    let toned = regional_histogram_match(it_o, iw_o, &stats_mask, cfg)?;
    let mut wide = iw_o.clone();
    let c = wide.channels();
    for (i, &ok) in wide_valid.bits().iter().enumerate() {
        if !ok {
            wide.data_mut()[i * c..(i + 1) * c].copy_from_slice(&toned.data()[i * c..(i + 1) * c]);
        }
    }
    let weights = soften_mask(occ, cfg.occ_soft_width);
    let image = pyramid_blend(&wide, &toned, &weights, cfg.pyramid_levels.resolve(w, h))?;
    Ok(OverlapFusion { toned, weights, image })
}

/// Overlap result: occluded pixels from the wide view, the rest from the
/// tone-matched telephoto view, softened over `occ_soft_width` pixels.
pub fn fuse_overlap(it_o: &ImageBuffer, iw_o: &ImageBuffer, occ: &BinaryMask, cfg: &FusionConfig) -> Result<ImageBuffer> {
    let full = BinaryMask::full(it_o.width(), it_o.height());
    Ok(fuse_overlap_masked(it_o, iw_o, occ, &full, cfg)?.image)
}

/// Weight of the overlap image in the full frame: 1 deep inside the
/// rectangle, ramping linearly to `1 / width` on its outermost ring along
/// sides that lie inside the frame, 0 outside. Sides on the frame border
/// get no ramp.
pub fn overlap_weight(frame: (usize, usize), rect: (usize, usize, usize, usize), width: usize) -> WeightMap {
    let (fw, fh) = frame;
    let (rx, ry, rw, rh) = rect;
    WeightMap::from_fn(fw, fh, |x, y| {
        if x < rx || y < ry || x >= rx + rw || y >= ry + rh {
            return 0.0;
        }
        if width == 0 {
            return 1.0;
        }
        let mut d = usize::MAX;
        if rx > 0 {
            d = d.min(x - rx);
        }
        if ry > 0 {
            d = d.min(y - ry);
        }
        if rx + rw < fw {
            d = d.min(rx + rw - 1 - x);
        }
        if ry + rh < fh {
            d = d.min(ry + rh - 1 - y);
        }
        if d == usize::MAX { 1.0 } else { ((d + 1) as f32 / width as f32).min(1.0) }
    })
}

/// Place the overlap result into the full wide frame. Pixels outside the
/// rectangle are the wide frame's own values, bit for bit.
pub fn compose_full_view(i_o: &ImageBuffer, wide_full: &ImageBuffer, origin: (usize, usize), cfg: &FusionConfig) -> Result<ImageBuffer> {
    let (fw, fh) = wide_full.dims();
    let rect = (origin.0, origin.1, i_o.width(), i_o.height());
    check_rect(origin.0, origin.1, i_o.width(), i_o.height(), fw, fh)?;
    let mut framed = wide_full.clone();
    framed.paste(i_o, origin.0, origin.1)?;
    let weights = overlap_weight((fw, fh), rect, cfg.overlap_soft_width);
    let mut out = pyramid_blend(&framed, wide_full, &weights, cfg.pyramid_levels.resolve(fw, fh))?;
    let c = out.channels();
    for (i, &wt) in weights.weights().iter().enumerate() {
        if wt == 0.0 {
            out.data_mut()[i * c..(i + 1) * c].copy_from_slice(&wide_full.data()[i * c..(i + 1) * c]);
        }
    }
    Ok(out)
}
