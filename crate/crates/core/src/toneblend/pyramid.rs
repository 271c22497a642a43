//! Gaussian/Laplacian pyramids with the 5-tap binomial kernel.

use rayon::prelude::*;

use crate::error::{check_dims, FuseError, Result};
use crate::imagecore::{ImageBuffer, WeightMap};

const KERNEL: [f32; 5] = [1.0 / 16.0, 4.0 / 16.0, 6.0 / 16.0, 4.0 / 16.0, 1.0 / 16.0];

/// Single-channel plane.
#[derive(Debug, Clone, PartialEq)]
pub struct Plane {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

impl Plane {
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Plane {
        debug_assert_eq!(data.len(), width * height);
        Plane { width, height, data }
    }
}

#[inline]
fn clamp_idx(i: isize, n: usize) -> usize {
    i.clamp(0, n as isize - 1) as usize
}

/// Separable 5-tap blur with replicated borders.
pub fn blur(p: &Plane) -> Plane {
    let (w, h) = (p.width, p.height);
    let mut tmp = vec![0.0f32; w * h];
    tmp.par_chunks_mut(w).enumerate().for_each(|(y, row)| {
        let src = &p.data[y * w..(y + 1) * w];
        for (x, o) in row.iter_mut().enumerate() {
            let mut s = 0.0;
            for (k, &c) in KERNEL.iter().enumerate() {
                s += c * src[clamp_idx(x as isize + k as isize - 2, w)];
            }
            *o = s;
        }
    });
    let mut out = vec![0.0f32; w * h];
    out.par_chunks_mut(w).enumerate().for_each(|(y, row)| {
        for (x, o) in row.iter_mut().enumerate() {
            let mut s = 0.0;
            for (k, &c) in KERNEL.iter().enumerate() {
                s += c * tmp[clamp_idx(y as isize + k as isize - 2, h) * w + x];
            }
            *o = s;
        }
    });
    Plane::new(w, h, out)
}

/// Blur, then keep even samples. Odd sizes round up.
pub fn downsample(p: &Plane) -> Plane {
    let b = blur(p);
    let (w, h) = (p.width.div_ceil(2), p.height.div_ceil(2));
    let mut data = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            data[y * w + x] = b.data[2 * y * p.width + 2 * x];
        }
    }
    Plane::new(w, h, data)
}

/// Zero-insertion followed by the kernel scaled by 4, evaluated in
/// polyphase form. Borders replicate the coarse samples, so constants stay
/// constant.
pub fn upsample(p: &Plane, width: usize, height: usize) -> Plane {
    let (cw, ch) = (p.width, p.height);
    // even outputs take taps (1, 6, 1)/8 around the coarse sample, odd ones (4, 4)/8
    let interp = |get: &dyn Fn(isize) -> f32, i: usize| -> f32 {
        let c = (i / 2) as isize;
        if i % 2 == 0 {
            (get(c - 1) + 6.0 * get(c) + get(c + 1)) / 8.0
        } else {
            (4.0 * get(c) + 4.0 * get(c + 1)) / 8.0
        }
    };
    let mut tmp = vec![0.0f32; width * ch];
    tmp.par_chunks_mut(width).enumerate().for_each(|(y, row)| {
        let src = &p.data[y * cw..(y + 1) * cw];
        let get = |i: isize| src[clamp_idx(i, cw)];
        for (x, o) in row.iter_mut().enumerate() {
            *o = interp(&get, x);
        }
    });
    let mut out = vec![0.0f32; width * height];
    out.par_chunks_mut(width).enumerate().for_each(|(y, row)| {
        for (x, o) in row.iter_mut().enumerate() {
            let get = |i: isize| tmp[clamp_idx(i, ch) * width + x];
            *o = interp(&get, y);
        }
    });
    Plane::new(width, height, out)
}

/// Number of levels actually built for a grid: stop once a side reaches 1.
pub fn effective_levels(width: usize, height: usize, levels: usize) -> usize {
    let (mut w, mut h, mut n) = (width, height, 1);
    while n < levels && w > 1 && h > 1 {
        w = w.div_ceil(2);
        h = h.div_ceil(2);
        n += 1;
    }
    n
}

pub fn gaussian_pyramid(p: &Plane, levels: usize) -> Vec<Plane> {
    let levels = effective_levels(p.width, p.height, levels);
    let mut out = vec![p.clone()];
    for _ in 1..levels {
        let next = downsample(out.last().unwrap());
        out.push(next);
    }
    out
}

/// Band-pass levels followed by the coarsest Gaussian level.
pub fn laplacian_pyramid(p: &Plane, levels: usize) -> Vec<Plane> {
    let g = gaussian_pyramid(p, levels);
    let mut out = Vec::with_capacity(g.len());
    for i in 0..g.len() - 1 {
        let up = upsample(&g[i + 1], g[i].width, g[i].height);
        let data = g[i].data.iter().zip(&up.data).map(|(a, b)| a - b).collect();
        out.push(Plane::new(g[i].width, g[i].height, data));
    }
    out.push(g.last().unwrap().clone());
    out
}

pub fn collapse(pyr: &[Plane]) -> Plane {
    let mut cur = pyr.last().unwrap().clone();
    for band in pyr[..pyr.len() - 1].iter().rev() {
        let up = upsample(&cur, band.width, band.height);
        let data = band.data.iter().zip(&up.data).map(|(a, b)| a + b).collect();
        cur = Plane::new(band.width, band.height, data);
    }
    cur
}

/// Multi-band blend; `w = 1` selects `a`, `w = 0` selects `b`.
///
/// The result is clamped to the joint value range of the inputs, which
/// removes the small over- and undershoot band-pass mixing can produce.
pub fn pyramid_blend(a: &ImageBuffer, b: &ImageBuffer, w: &WeightMap, levels: usize) -> Result<ImageBuffer> {
    if levels == 0 {
        return Err(FuseError::Parameter("pyramid levels must be >= 1".into()));
    }
    check_dims(a.dims(), b.dims())?;
    check_dims(a.dims(), w.dims())?;
    if a.channels() != b.channels() {
        return Err(FuseError::Parameter(format!(
            "channel count mismatch: {} vs {}",
            a.channels(),
            b.channels()
        )));
    }
    let (width, height) = a.dims();
    let gw = gaussian_pyramid(&Plane::new(width, height, w.weights().to_vec()), levels);
    let (lo, hi) = a
        .data()
        .iter()
        .chain(b.data())
        .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let mut planes = Vec::with_capacity(a.channels());
    for c in 0..a.channels() {
        let la = laplacian_pyramid(&Plane::new(width, height, a.plane(c)), levels);
        let lb = laplacian_pyramid(&Plane::new(width, height, b.plane(c)), levels);
        let mixed: Vec<Plane> = la
            .iter()
            .zip(&lb)
            .zip(&gw)
            .map(|((pa, pb), pw)| {
                let data = pa
                    .data
                    .iter()
                    .zip(&pb.data)
                    .zip(&pw.data)
                    .map(|((x, y), wt)| wt * x + (1.0 - wt) * y)
                    .collect();
                Plane::new(pa.width, pa.height, data)
            })
            .collect();
        let out = collapse(&mixed);
        planes.push(out.data.into_iter().map(|v| v.clamp(lo, hi)).collect());
    }
    ImageBuffer::from_planes(width, height, &planes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_plane(w: usize, h: usize, seed: u64) -> Plane {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Plane::new(w, h, (0..w * h).map(|_| rng.random::<f32>()).collect())
    }

    #[test]
    fn reconstruction_identity() {
        for (w, h) in [(37, 23), (64, 64), (1, 9), (2, 2)] {
            let p = random_plane(w, h, 3);
            let back = collapse(&laplacian_pyramid(&p, 5));
            for (a, b) in p.data.iter().zip(&back.data) {
                assert!((a - b).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn constants_survive_resampling() {
        let p = Plane::new(7, 5, vec![0.25; 35]);
        assert!(blur(&p).data.iter().all(|&v| (v - 0.25).abs() < 1e-7));
        assert!(downsample(&p).data.iter().all(|&v| (v - 0.25).abs() < 1e-7));
        assert!(upsample(&p, 13, 10).data.iter().all(|&v| (v - 0.25).abs() < 1e-7));
    }

    #[test]
    fn pyramid_sizes_round_up() {
        let g = gaussian_pyramid(&random_plane(21, 10, 1), 4);
        let dims: Vec<_> = g.iter().map(|p| (p.width, p.height)).collect();
        assert_eq!(dims, vec![(21, 10), (11, 5), (6, 3), (3, 2)]);
        assert_eq!(effective_levels(4, 4, 8), 3);
    }

    #[test]
    fn zero_levels_rejected() {
        let a = ImageBuffer::new(4, 4, 1);
        assert!(pyramid_blend(&a, &a, &WeightMap::constant(4, 4, 1.0), 0).is_err());
    }

    #[test]
    fn unit_and_zero_weights_select_inputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let a = ImageBuffer::from_fn(40, 30, 3, |_, _, _| rng.random::<f32>());
        let b = ImageBuffer::from_fn(40, 30, 3, |_, _, _| rng.random::<f32>());
        let one = pyramid_blend(&a, &b, &WeightMap::constant(40, 30, 1.0), 4).unwrap();
        let zero = pyramid_blend(&a, &b, &WeightMap::constant(40, 30, 0.0), 4).unwrap();
        for i in 0..a.data().len() {
            assert!((one.data()[i] - a.data()[i]).abs() < 1e-6);
            assert!((zero.data()[i] - b.data()[i]).abs() < 1e-6);
        }
    }
}
