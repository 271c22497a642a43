//! Revision of the telephoto-to-wide backward flow into a flow that places
//! the telephoto image in a mixed view: unchanged at the overlap border,
//! drifting towards a spatially smooth target flow with distance from it.
//!
//! Stages, in pipeline order: [`target_flow`], [`distance_map`],
//! [`clip_flow`], [`transform_flow`] (forward warp plus [`fill_empty`]),
//! and [`warp_tele`].

use crate::config::{FusionConfig, TransitionMode};
use crate::error::{check_dims, FuseError, Result};
use crate::imagecore::{box_filter_plane_f64, BinaryMask, DistanceMap, FlowField, ImageBuffer};
use crate::warp::{backward_warp, forward_warp_flow, priority_from_flow, WarpResult};

/// Box-filtered mask values below this fall back to the plain local mean.
pub const MASK_EPSILON: f64 = 1e-6;

fn require_valid(f: &FlowField, what: &str) -> Result<()> {
    if f.is_fully_valid() {
        Ok(())
    } else {
        Err(FuseError::Parameter(format!("{what} must be valid at every pixel")))
    }
}

/// Smooth target flow and the foreground mask it was derived from.
///
/// `F_M` is the `k`-window mean of `f`; a pixel is foreground when
/// `|f| > |F_M|`. Foreground and background means are box-filtered masked
/// sums over box-filtered masks, each falling back to `F_M` where its mask
/// is (numerically) absent from the window. The target is the box-filtered
/// midpoint of the two.
pub fn target_flow(f: &FlowField, cfg: &FusionConfig) -> Result<(FlowField, BinaryMask)> {
    require_valid(f, "input flow")?;
    let (w, h) = f.dims();
    let k = cfg.kernel_size();
    let n = w * h;
    let u: Vec<f64> = f.u.iter().map(|&x| x as f64).collect();
    let v: Vec<f64> = f.v.iter().map(|&x| x as f64).collect();
    let mean_u = box_filter_plane_f64(&u, w, h, k);
    let mean_v = box_filter_plane_f64(&v, w, h, k);

    let fg: Vec<bool> = (0..n).map(|i| u[i].hypot(v[i]) > mean_u[i].hypot(mean_v[i])).collect();
    let m: Vec<f64> = fg.iter().map(|&b| b as u8 as f64).collect();
    let bg: Vec<f64> = m.iter().map(|x| 1.0 - x).collect();
    let mul = |a: &[f64], b: &[f64]| -> Vec<f64> { a.iter().zip(b).map(|(x, y)| x * y).collect() };

    let box_m = box_filter_plane_f64(&m, w, h, k);
    let box_bg = box_filter_plane_f64(&bg, w, h, k);
    let fg_u = box_filter_plane_f64(&mul(&u, &m), w, h, k);
    let fg_v = box_filter_plane_f64(&mul(&v, &m), w, h, k);
    let bg_u = box_filter_plane_f64(&mul(&u, &bg), w, h, k);
    let bg_v = box_filter_plane_f64(&mul(&v, &bg), w, h, k);

    let mut mid_u = vec![0.0f64; n];
    let mut mid_v = vec![0.0f64; n];
    for i in 0..n {
        let (ffu, ffv) = if box_m[i] < MASK_EPSILON {
            (mean_u[i], mean_v[i])
        } else {
            (fg_u[i] / box_m[i], fg_v[i] / box_m[i])
        };
        let (fbu, fbv) = if box_bg[i] < MASK_EPSILON {
            (mean_u[i], mean_v[i])
        } else {
            (bg_u[i] / box_bg[i], bg_v[i] / box_bg[i])
        };
        mid_u[i] = 0.5 * (ffu + fbu);
        mid_v[i] = 0.5 * (ffv + fbv);
    }
    let star_u = box_filter_plane_f64(&mid_u, w, h, k);
    let star_v = box_filter_plane_f64(&mid_v, w, h, k);
    let fstar = FlowField::from_vecs(
        w,
        h,
        star_u.iter().map(|&x| x as f32).collect(),
        star_v.iter().map(|&x| x as f32).collect(),
        vec![true; n],
    )?;
    Ok((fstar, BinaryMask::from_bits(w, h, fg)?))
}

/// Pixels with a 4-neighbour whose flow magnitude differs by more than `threshold`.
pub fn non_connected_points(f: &FlowField, threshold: f64) -> BinaryMask {
    let (w, h) = f.dims();
    let mag: Vec<f32> = (0..f.len()).map(|i| f.magnitude_at(i)).collect();
    BinaryMask::from_fn(w, h, |x, y| {
        let i = y * w + x;
        let jump = |j: usize| ((mag[i] - mag[j]).abs() as f64) > threshold;
        (x > 0 && jump(i - 1)) || (x + 1 < w && jump(i + 1)) || (y > 0 && jump(i - w)) || (y + 1 < h && jump(i + w))
    })
}

/// Discontinuity-aware distance to the overlap boundary.
///
/// Each pixel casts four axis-aligned rays. A ray that reaches the border
/// without passing a non-connected point contributes its length; a ray
/// that passes one contributes nothing (the pixel is decoupled from that
/// border). The distance is the shortest contributing ray, or
/// `max(width, height)` when all four are blocked. The pixel itself is not
/// part of its rays.
pub fn distance_map(f: &FlowField, cfg: &FusionConfig) -> DistanceMap {
    let (w, h) = f.dims();
    let blockers = non_connected_points(f, cfg.gradient_threshold);
    let nc = blockers.bits();
    // down[i]: a non-connected point lies strictly below i; the other three
    // directions are carried along the final raster pass
    let mut down = vec![false; w * h];
    let mut seen = vec![false; w];
    for y in (0..h).rev() {
        for x in 0..w {
            down[y * w + x] = seen[x];
            seen[x] |= nc[y * w + x];
        }
    }
    let d_max = w.max(h) as f32;
    let mut d = vec![0.0f32; w * h];
    let mut up = vec![false; w];
    let mut right = vec![false; w];
    for y in 0..h {
        let row = &nc[y * w..(y + 1) * w];
        let mut after = false;
        for x in (0..w).rev() {
            right[x] = after;
            after |= row[x];
        }
        let mut left = false;
        for x in 0..w {
            let i = y * w + x;
            let rays = [(left, x), (up[x], y), (right[x], w - 1 - x), (down[i], h - 1 - y)];
            d[i] = rays
                .iter()
                .filter(|(blocked, _)| !blocked)
                .map(|&(_, len)| len as f32)
                .fold(d_max, f32::min);
            left |= row[x];
            up[x] |= row[x];
        }
    }
    DistanceMap::from_vec(w, h, d).expect("distances are non-negative")
}

/// Permitted per-component flow change at a pixel.
#[inline]
pub fn transition_budget(ratio: f64, dist: f32) -> f64 {
    ratio * dist as f64
}

/// Step `x` one ulp towards `target`.
fn step_towards(x: f32, target: f32) -> f32 {
    if x == target || x.is_nan() {
        return x;
    }
    let bits = x.to_bits();
    let next = if (x < target) == (x >= 0.0) { bits + 1 } else { bits - 1 };
    if x == 0.0 {
        return if target > 0.0 { f32::from_bits(1) } else { -f32::from_bits(1) };
    }
    f32::from_bits(next)
}

fn clip_component(base: f32, target: f32, budget: f64) -> f32 {
    let delta = (target as f64 - base as f64).clamp(-budget, budget);
    let mut out = (base as f64 + delta) as f32;
    // rounding to f32 may overshoot the budget by an ulp
    while (out as f64 - base as f64).abs() > budget {
        out = step_towards(out, base);
    }
    out
}

/// Clamp `fstar` into `[f - L, f + L]` per component with `L = ratio * dist`.
///
/// The bound holds exactly when the result is compared against `f` in
/// double precision.
pub fn clip_flow(f: &FlowField, fstar: &FlowField, dist: &DistanceMap, ratio: f64) -> Result<FlowField> {
    check_dims(f.dims(), fstar.dims())?;
    check_dims(f.dims(), dist.dims())?;
    let n = f.len();
    let mut u = Vec::with_capacity(n);
    let mut v = Vec::with_capacity(n);
    for i in 0..n {
        let budget = transition_budget(ratio, dist.values()[i]);
        u.push(clip_component(f.u[i], fstar.u[i], budget));
        v.push(clip_component(f.v[i], fstar.v[i], budget));
    }
    FlowField::from_vecs(f.width(), f.height(), u, v, f.valid.clone())
}

/// Fill invalid pixels from the nearest valid pixel along each of the four
/// axis directions, preferring the candidate with the smallest magnitude
/// (background). Ties resolve left, up, right, down. Repeats until every
/// pixel is valid.
pub fn fill_empty(f: &FlowField) -> Result<FlowField> {
    if !f.valid.iter().any(|&b| b) {
        return Err(FuseError::EmptyFlow);
    }
    let (w, h) = f.dims();
    let n = w * h;
    let mut cur = f.clone();
    const NONE: u32 = u32::MAX;
    while cur.valid.iter().any(|&b| !b) {
        let mut nearest = [vec![NONE; n], vec![NONE; n], vec![NONE; n], vec![NONE; n]];
        for y in 0..h {
            let row = y * w;
            let mut last = NONE;
            for x in 0..w {
                nearest[0][row + x] = last;
                if cur.valid[row + x] {
                    last = (row + x) as u32;
                }
            }
            last = NONE;
            for x in (0..w).rev() {
                nearest[2][row + x] = last;
                if cur.valid[row + x] {
                    last = (row + x) as u32;
                }
            }
        }
        // vertical scans walk rows with one carry per column
        let mut last = vec![NONE; w];
        for y in 0..h {
            for x in 0..w {
                let i = y * w + x;
                nearest[1][i] = last[x];
                if cur.valid[i] {
                    last[x] = i as u32;
                }
            }
        }
        last.fill(NONE);
        for y in (0..h).rev() {
            for x in 0..w {
                let i = y * w + x;
                nearest[3][i] = last[x];
                if cur.valid[i] {
                    last[x] = i as u32;
                }
            }
        }
        let mut next = cur.clone();
        for i in 0..n {
            if cur.valid[i] {
                continue;
            }
            let mut best: Option<(f32, usize)> = None;
            for dir in &nearest {
                let j = dir[i];
                if j == NONE {
                    continue;
                }
                let m = cur.magnitude_at(j as usize);
                if best.is_none_or(|(bm, _)| m < bm) {
                    best = Some((m, j as usize));
                }
            }
            if let Some((_, j)) = best {
                next.u[i] = cur.u[j];
                next.v[i] = cur.v[j];
                next.valid[i] = true;
            }
        }
        cur = next;
    }
    Ok(cur)
}

/// Move every clipped flow value to its revised coordinate and fill the
/// exposed holes, giving the flow that warps the telephoto image into the
/// output view.
///
/// Displacement is `f_hat - f`; collisions go to the larger `|f|`. In
/// [`TransitionMode::Literal`] the stored value is `f_hat`, in
/// [`TransitionMode::ExactRay`] it is `2f - f_hat`.
pub fn transform_flow(f: &FlowField, fhat: &FlowField, mode: TransitionMode) -> Result<FlowField> {
    check_dims(f.dims(), fhat.dims())?;
    let disp = fhat.sub(f);
    let values = match mode {
        TransitionMode::Literal => fhat.clone(),
        TransitionMode::ExactRay => f.sub(&disp),
    };
    let moved = forward_warp_flow(&values, &disp, &priority_from_flow(f))?;
    fill_empty(&moved)
}

/// Telephoto image resampled into the output view.
pub fn warp_tele(tele: &ImageBuffer, fto: &FlowField) -> Result<WarpResult> {
    require_valid(fto, "transformed flow")?;
    Ok(backward_warp(tele, fto))
}

/// All intermediate products of the telephoto transformation.
#[derive(Debug, Clone)]
pub struct ViewTransition {
    pub target: FlowField,
    pub foreground: BinaryMask,
    pub distance: DistanceMap,
    pub clipped: FlowField,
    pub transformed: FlowField,
}

impl ViewTransition {
    pub fn compute(f: &FlowField, cfg: &FusionConfig) -> Result<ViewTransition> {
        let (target, foreground) = target_flow(f, cfg)?;
        let distance = distance_map(f, cfg);
        let clipped = clip_flow(f, &target, &distance, cfg.ratio)?;
        let transformed = transform_flow(f, &clipped, cfg.transition)?;
        Ok(ViewTransition { target, foreground, distance, clipped, transformed })
    }

    /// `max(|f_hat - f| - ratio * dist)` over both components; never positive.
    pub fn bound_excess(&self, f: &FlowField, ratio: f64) -> f64 {
        clip_bound_excess(f, &self.clipped, &self.distance, ratio)
    }
}

pub fn clip_bound_excess(f: &FlowField, fhat: &FlowField, dist: &DistanceMap, ratio: f64) -> f64 {
    let mut worst = f64::NEG_INFINITY;
    for i in 0..f.len() {
        let budget = transition_budget(ratio, dist.values()[i]);
        let du = (fhat.u[i] as f64 - f.u[i] as f64).abs();
        let dv = (fhat.v[i] as f64 - f.v[i] as f64).abs();
        worst = worst.max(du - budget).max(dv - budget);
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn small_cfg(k: usize) -> FusionConfig {
        FusionConfig { kernel: k, ..Default::default() }
    }

    #[test]
    fn constant_flow_is_fixed_point() {
        let f = FlowField::constant(30, 20, 3.0, -1.5);
        let (fstar, m) = target_flow(&f, &small_cfg(7)).unwrap();
        assert!(fstar.u.iter().all(|&x| (x - 3.0).abs() < 1e-6));
        assert!(fstar.v.iter().all(|&x| (x + 1.5).abs() < 1e-6));
        assert_eq!(m.count(), 0, "equal magnitudes are background");
    }

    #[test]
    fn all_foreground_window_uses_mean_fallback() {
        // a lone foreground column; windows away from it see no foreground
        let f = FlowField::from_fn(40, 5, |x, _| if x == 0 { (10.0, 0.0) } else { (1.0, 0.0) });
        let (fstar, m) = target_flow(&f, &small_cfg(3)).unwrap();
        assert!(m.get(0, 2));
        assert!(!m.get(1, 2));
        // far from the column both branches are the background mean
        assert!((fstar.u[2 * 40 + 30] - 1.0).abs() < 1e-6);
        assert!(fstar.u.iter().all(|x| x.is_finite()));
    }

    #[test]
    fn target_rejects_invalid_input() {
        let mut f = FlowField::zeros(4, 4);
        f.valid[3] = false;
        assert!(target_flow(&f, &small_cfg(3)).is_err());
    }

    #[test]
    fn smooth_grid_distance_matches_border_distance() {
        let f = FlowField::constant(5, 5, 1.0, 1.0);
        let d = distance_map(&f, &FusionConfig::default());
        assert_eq!(d.get(2, 2), 2.0);
        assert_eq!(d.get(0, 0), 0.0);
        assert_eq!(d, DistanceMap::nearest_border(5, 5));
    }

    #[test]
    fn floating_object_is_decoupled() {
        let f = FlowField::from_fn(9, 9, |x, y| {
            if (3..=5).contains(&x) && (3..=5).contains(&y) { (20.0, 0.0) } else { (0.0, 0.0) }
        });
        let d = distance_map(&f, &FusionConfig::default());
        assert_eq!(d.get(4, 4), 9.0);
        assert_eq!(DistanceMap::nearest_border(9, 9).get(4, 4), 4.0);
    }

    #[test]
    fn object_touching_bottom_uses_downward_ray() {
        // column band x in 8..12 from row 4 to the bottom of a 20x30 grid
        let f = FlowField::from_fn(20, 30, |x, y| if (8..12).contains(&x) && y >= 4 { (15.0, 0.0) } else { (0.0, 0.0) });
        let d = distance_map(&f, &FusionConfig::default());
        // (10, 10): left/right/up blocked by the band's outline, down ray free
        assert_eq!(d.get(10, 10), 19.0);
        assert!(d.get(10, 10) > DistanceMap::nearest_border(20, 30).get(10, 10));
    }

    #[test]
    fn clip_examples() {
        let f = FlowField::constant(1, 1, 10.0, 0.0);
        let dist = DistanceMap::from_vec(1, 1, vec![300.0]).unwrap();
        let out = clip_flow(&f, &FlowField::constant(1, 1, 4.0, 0.0), &dist, 0.01).unwrap();
        assert!((out.u[0] - 7.0).abs() < 1e-6);
        let out = clip_flow(&f, &FlowField::constant(1, 1, 9.5, 0.0), &dist, 0.01).unwrap();
        assert_eq!(out.u[0], 9.5);
        let zero = DistanceMap::from_vec(1, 1, vec![0.0]).unwrap();
        let out = clip_flow(&f, &FlowField::constant(1, 1, -3.0, 8.0), &zero, 0.01).unwrap();
        assert_eq!(out.get(0, 0), (10.0, 0.0));
    }

    #[test]
    fn clip_bound_is_exact_under_rounding() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let (w, h) = (64, 64);
        let f = FlowField::from_fn(w, h, |_, _| (rng.random_range(-40.0..40.0), rng.random_range(-40.0..40.0)));
        let fstar = FlowField::from_fn(w, h, |_, _| (rng.random_range(-40.0..40.0), rng.random_range(-40.0..40.0)));
        let d: Vec<f32> = (0..w * h).map(|_| rng.random_range(0..700) as f32).collect();
        let dist = DistanceMap::from_vec(w, h, d).unwrap();
        for ratio in [0.01, 0.013, 0.1, 0.0] {
            let fhat = clip_flow(&f, &fstar, &dist, ratio).unwrap();
            assert!(clip_bound_excess(&f, &fhat, &dist, ratio) <= 0.0);
        }
    }

    #[test]
    fn fill_uniform_background() {
        let mut f = FlowField::constant(7, 7, 2.0, 1.0);
        for y in 2..5 {
            for x in 2..5 {
                f.valid[y * 7 + x] = false;
                f.set(x, y, 99.0, 99.0);
            }
        }
        let out = fill_empty(&f).unwrap();
        assert!(out.is_fully_valid());
        assert!((0..49).all(|i| out.get(i % 7, i / 7) == (2.0, 1.0)));
    }

    #[test]
    fn fill_prefers_background() {
        let mut f = FlowField::from_fn(9, 1, |x, _| if x < 4 { (20.0, 0.0) } else { (2.0, 0.0) });
        f.valid[4] = false;
        f.valid[5] = false;
        let out = fill_empty(&f).unwrap();
        assert_eq!(out.get(4, 0), (2.0, 0.0));
        assert_eq!(out.get(5, 0), (2.0, 0.0));
    }

    #[test]
    fn fill_no_holes_identity_and_empty_error() {
        let f = FlowField::constant(3, 3, 1.0, 2.0);
        assert_eq!(fill_empty(&f).unwrap(), f);
        let mut e = FlowField::zeros(2, 2);
        e.valid = vec![false; 4];
        assert!(matches!(fill_empty(&e), Err(FuseError::EmptyFlow)));
    }

    #[test]
    fn fill_reaches_isolated_corner() {
        // only one valid pixel: needs two sweeps
        let mut f = FlowField::constant(4, 3, 0.0, 0.0);
        f.valid = vec![false; 12];
        f.valid[0] = true;
        f.set(0, 0, 5.0, -1.0);
        let out = fill_empty(&f).unwrap();
        assert!(out.is_fully_valid());
        assert!((0..12).all(|i| (out.u[i], out.v[i]) == (5.0, -1.0)));
    }

    #[test]
    fn identity_transition() {
        let f = FlowField::from_fn(12, 10, |x, y| ((x % 3) as f32, (y % 2) as f32 * 0.5));
        let out = transform_flow(&f, &f, TransitionMode::Literal).unwrap();
        assert_eq!(out, f);
    }

    #[test]
    fn constant_target_gives_constant_output() {
        let f = FlowField::from_fn(30, 20, |x, _| if (10..20).contains(&x) { (-6.0, 0.0) } else { (-2.0, 0.0) });
        let fhat = FlowField::constant(30, 20, -4.0, 0.0);
        let out = transform_flow(&f, &fhat, TransitionMode::Literal).unwrap();
        assert!(out.u.iter().all(|&u| u == -4.0));
        assert!(out.v.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn exact_ray_mode_stores_mirrored_value() {
        let f = FlowField::constant(10, 3, -5.0, 0.0);
        let fhat = FlowField::constant(10, 3, -4.0, 0.0);
        let out = transform_flow(&f, &fhat, TransitionMode::ExactRay).unwrap();
        assert!(out.u.iter().all(|&u| u == -6.0));
    }

    #[test]
    fn tele_warp_identity_and_translation() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let tele = ImageBuffer::from_fn(10, 8, 3, |_, _, _| rng.random::<f32>());
        assert_eq!(warp_tele(&tele, &FlowField::zeros(10, 8)).unwrap().image, tele);
        let out = warp_tele(&tele, &FlowField::constant(10, 8, 2.0, 1.0)).unwrap().image;
        for y in 0..7 {
            for x in 0..8 {
                assert_eq!(out.pixel(x, y), tele.pixel(x + 2, y + 1));
            }
        }
    }

    #[test]
    fn boundary_ring_unchanged() {
        let f = FlowField::from_fn(40, 30, |x, y| {
            if (12..28).contains(&x) && (8..22).contains(&y) { (-20.0, -3.0) } else { (-4.0, 0.0) }
        });
        let vt = ViewTransition::compute(&f, &small_cfg(21)).unwrap();
        for y in 0..30 {
            for x in 0..40 {
                if x == 0 || y == 0 || x == 39 || y == 29 {
                    assert_eq!(vt.clipped.get(x, y), f.get(x, y));
                }
            }
        }
        assert!(vt.bound_excess(&f, 0.01) <= 0.0);
    }
}
