//! Occlusion detection from a single backward flow, and mask softening.

use crate::config::FusionConfig;
use crate::imagecore::{box_filter_plane_f64, BinaryMask, FlowField, WeightMap};

/// Neighbours towards which a foreground edge can hide background, as `(dy, dx)`.
const LEFT_UP_NEIGHBOURS: [(isize, isize); 5] = [(-1, -1), (-1, 0), (-1, 1), (0, -1), (1, -1)];

/// Occluded pixels of the wide view under backward flow `f`.
///
/// A pixel is foreground when its flow magnitude exceeds the `k`-window mean
/// magnitude. For each foreground pixel with a background neighbour to the
/// left or above, the flow difference `(du, dv)` to that neighbour spans a
/// rectangle reaching `round(|du|)` columns left and `round(|dv|)` rows up;
/// background pixels inside any such rectangle are occluded. Foreground
/// pixels are never marked.
pub fn compute_occlusion(f: &FlowField, cfg: &FusionConfig) -> BinaryMask {
    let (w, h) = f.dims();
    let n = w * h;
    let k = cfg.kernel_size();
    let mag: Vec<f64> = (0..n).map(|i| f.magnitude_at(i) as f64).collect();
    let mean = box_filter_plane_f64(&mag, w, h, k);
    let fg: Vec<bool> = (0..n).map(|i| mag[i] > mean[i]).collect();

    // 2D difference array over (w + 1) x (h + 1)
    let stride = w + 1;
    let mut diff = vec![0i32; stride * (h + 1)];
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            if !fg[i] {
                continue;
            }
            for &(dy, dx) in &LEFT_UP_NEIGHBOURS {
                let (ny, nx) = (y as isize + dy, x as isize + dx);
                if ny < 0 || nx < 0 || ny >= h as isize || nx >= w as isize {
                    continue;
                }
                let j = ny as usize * w + nx as usize;
                if fg[j] {
                    continue;
                }
                let du = (f.u[i] - f.u[j]).abs().round() as usize;
                let dv = (f.v[i] - f.v[j]).abs().round() as usize;
                if du == 0 && dv == 0 {
                    continue;
                }
                let (x0, y0) = (x.saturating_sub(du), y.saturating_sub(dv));
                let (x1, y1) = (x + 1, y + 1);
                diff[y0 * stride + x0] += 1;
                diff[y0 * stride + x1] -= 1;
                diff[y1 * stride + x0] -= 1;
                diff[y1 * stride + x1] += 1;
            }
        }
    }
    for y in 0..=h {
        for x in 1..=w {
            diff[y * stride + x] += diff[y * stride + x - 1];
        }
    }
    for y in 1..=h {
        for x in 0..=w {
            diff[y * stride + x] += diff[(y - 1) * stride + x];
        }
    }
    BinaryMask::from_fn(w, h, |x, y| !fg[y * w + x] && diff[y * stride + x] > 0)
}

/// Percentage of the frame covered by `m`.
pub fn occlusion_area_pct(m: &BinaryMask) -> f64 {
    100.0 * m.count() as f64 / (m.width() * m.height()).max(1) as f64
}

/// One-dimensional squared Euclidean distance transform of a sampled function.
fn edt_1d(f: &[f64], out: &mut [f64], v: &mut [usize], z: &mut [f64]) {
    let n = f.len();
    let mut k = 0usize;
    v[0] = 0;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    for q in 1..n {
        if f[q].is_infinite() {
            continue;
        }
        loop {
            let p = v[k];
            if f[p].is_infinite() {
                // nothing finite yet; replace
                v[k] = q;
                z[k + 1] = f64::INFINITY;
                break;
            }
            let s = ((f[q] + (q * q) as f64) - (f[p] + (p * p) as f64)) / (2.0 * (q as f64 - p as f64));
            if s <= z[k] {
                if k == 0 {
                    v[0] = q;
                    z[1] = f64::INFINITY;
                    break;
                }
                k -= 1;
                continue;
            }
            k += 1;
            v[k] = q;
            z[k] = s;
            z[k + 1] = f64::INFINITY;
            break;
        }
    }
    let mut k = 0usize;
    for (q, o) in out.iter_mut().enumerate() {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let p = v[k];
        let d = q as f64 - p as f64;
        *o = if f[p].is_infinite() { f64::INFINITY } else { d * d + f[p] };
    }
}

/// Euclidean distance from every pixel to the nearest set pixel of `mask`
/// (`+inf` if the mask is empty).
pub fn distance_to_mask(mask: &BinaryMask) -> Vec<f64> {
    let (w, h) = mask.dims();
    let mut g: Vec<f64> = mask.bits().iter().map(|&b| if b { 0.0 } else { f64::INFINITY }).collect();
    let len = w.max(h);
    let mut col = vec![0.0; len];
    let mut out = vec![0.0; len];
    let mut v = vec![0usize; len];
    let mut z = vec![0.0; len + 1];
    for x in 0..w {
        for y in 0..h {
            col[y] = g[y * w + x];
        }
        edt_1d(&col[..h], &mut out[..h], &mut v, &mut z);
        for y in 0..h {
            g[y * w + x] = out[y];
        }
    }
    for y in 0..h {
        let row = &mut g[y * w..(y + 1) * w];
        col[..w].copy_from_slice(row);
        edt_1d(&col[..w], &mut out[..w], &mut v, &mut z);
        row.copy_from_slice(&out[..w]);
    }
    g.iter().map(|d| d.sqrt()).collect()
}

/// Weight 1 on the mask, falling linearly to 0 over `width` pixels of
/// Euclidean distance outside it.
pub fn soften_mask(mask: &BinaryMask, width: usize) -> WeightMap {
    let (w, h) = mask.dims();
    if width == 0 {
        return WeightMap::from_fn(w, h, |x, y| mask.get(x, y) as u8 as f32);
    }
    let d = distance_to_mask(mask);
    let wf = width as f64;
    WeightMap::from_fn(w, h, |x, y| (1.0 - d[y * w + x] / wf).max(0.0) as f32)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(k: usize) -> FusionConfig {
        FusionConfig { kernel: k, ..Default::default() }
    }

    fn rect_scene(w: usize, h: usize, rect: (usize, usize, usize, usize), fg: (f32, f32), bg: (f32, f32)) -> FlowField {
        let (rx, ry, rw, rh) = rect;
        FlowField::from_fn(w, h, |x, y| if x >= rx && x < rx + rw && y >= ry && y < ry + rh { fg } else { bg })
    }

    #[test]
    fn constant_flow_has_no_occlusion() {
        assert_eq!(compute_occlusion(&FlowField::constant(40, 30, -7.0, 3.0), &cfg(11)).count(), 0);
    }

    #[test]
    fn horizontal_band_on_left_side() {
        let f = rect_scene(100, 60, (40, 20, 30, 20), (-20.0, 0.0), (0.0, 0.0));
        let occ = compute_occlusion(&f, &cfg(61));
        for y in 0..60 {
            for x in 0..100 {
                let expect = (20..40).contains(&y) && (20..40).contains(&x);
                assert_eq!(occ.get(x, y), expect, "({x}, {y})");
            }
        }
    }

    #[test]
    fn diagonal_flow_marks_rectangle_up_left() {
        let f = rect_scene(100, 100, (50, 50, 20, 20), (-6.0, -4.0), (0.0, 0.0));
        let occ = compute_occlusion(&f, &cfg(81));
        assert!(occ.get(45, 47));
        assert!(occ.get(44, 60));
        assert!(occ.get(60, 46));
        assert!(!occ.get(43, 60));
        assert!(!occ.get(60, 45));
        assert!(!occ.get(72, 60), "right side never occluded");
        assert!(!occ.get(55, 55), "foreground never occluded");
    }

    #[test]
    fn matches_literal_rectangle_union() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(21);
        for _ in 0..20 {
            let (w, h) = (rng.random_range(5..40), rng.random_range(5..40));
            let f = FlowField::from_fn(w, h, |_, _| {
                if rng.random_bool(0.3) { (rng.random_range(-9.0..0.0), rng.random_range(-4.0..4.0)) } else { (0.0, 0.0) }
            });
            let c = cfg(7);
            let got = compute_occlusion(&f, &c);
            let mag: Vec<f64> = (0..w * h).map(|i| f.magnitude_at(i) as f64).collect();
            let mean = box_filter_plane_f64(&mag, w, h, 7);
            let fg = |x: usize, y: usize| mag[y * w + x] > mean[y * w + x];
            let mut want = BinaryMask::new(w, h);
            for y in 0..h {
                for x in 0..w {
                    if !fg(x, y) {
                        continue;
                    }
                    for (dy, dx) in LEFT_UP_NEIGHBOURS {
                        let (ny, nx) = (y as isize + dy, x as isize + dx);
                        if ny < 0 || nx < 0 || ny >= h as isize || nx >= w as isize || fg(nx as usize, ny as usize) {
                            continue;
                        }
                        let (a, b) = (f.get(x, y), f.get(nx as usize, ny as usize));
                        let du = (a.0 - b.0).abs().round() as isize;
                        let dv = (a.1 - b.1).abs().round() as isize;
                        for yy in (y as isize - dv).max(0)..=y as isize {
                            for xx in (x as isize - du).max(0)..=x as isize {
                                if !fg(xx as usize, yy as usize) {
                                    want.set(xx as usize, yy as usize, true);
                                }
                            }
                        }
                    }
                }
            }
            assert_eq!(got, want);
        }
    }

    #[test]
    fn area_percentages() {
        assert_eq!(occlusion_area_pct(&BinaryMask::full(7, 3)), 100.0);
        assert_eq!(occlusion_area_pct(&BinaryMask::new(7, 3)), 0.0);
        let band = BinaryMask::from_fn(1024, 1024, |x, y| x < 20 && y < 300);
        assert!((occlusion_area_pct(&band) - 0.572).abs() < 5e-4);
    }

    #[test]
    fn weight_softening() {
        let mut m = BinaryMask::new(40, 5);
        m.set(10, 2, true);
        let wm = soften_mask(&m, 15);
        assert_eq!(wm.get(10, 2), 1.0);
        assert!((wm.get(17, 2) - (1.0 - 7.0 / 15.0)).abs() < 1e-6);
        assert_eq!(wm.get(26, 2), 0.0);
        assert_eq!(wm.get(25, 2), 0.0);
        assert!(wm.get(24, 2) > 0.0);
        let empty = soften_mask(&BinaryMask::new(8, 8), 15);
        assert!(empty.weights().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn edt_matches_brute_force() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for _ in 0..10 {
            let (w, h) = (rng.random_range(1..30), rng.random_range(1..30));
            let m = BinaryMask::from_fn(w, h, |_, _| rng.random::<f64>() < 0.05);
            let d = distance_to_mask(&m);
            for y in 0..h {
                for x in 0..w {
                    let mut best = f64::INFINITY;
                    for qy in 0..h {
                        for qx in 0..w {
                            if m.get(qx, qy) {
                                best = best.min(((x as f64 - qx as f64).powi(2) + (y as f64 - qy as f64).powi(2)).sqrt());
                            }
                        }
                    }
                    let got = d[y * w + x];
                    assert!(got == best || (got - best).abs() < 1e-9, "{got} vs {best}");
                }
            }
        }
    }
}
