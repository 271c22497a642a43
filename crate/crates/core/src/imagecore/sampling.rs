use rayon::prelude::*;

use super::{FlowField, ImageBuffer};

/// Bilinear interpolation at `(x, y)`, writing one value per channel into `out`.
///
/// Coordinates outside `[0, w-1] x [0, h-1]` are clamped to the edge. The
/// return value is `false` when clamping happened.
#[inline]
pub fn bilinear_sample_into(img: &ImageBuffer, x: f64, y: f64, out: &mut [f32]) -> bool {
    let (w, h) = img.dims();
    let max_x = (w - 1) as f64;
    let max_y = (h - 1) as f64;
    let in_range = (0.0..=max_x).contains(&x) && (0.0..=max_y).contains(&y);
    let xc = if x.is_nan() { 0.0 } else { x.clamp(0.0, max_x) };
    let yc = if y.is_nan() { 0.0 } else { y.clamp(0.0, max_y) };
    let x0 = xc.floor() as usize;
    let y0 = yc.floor() as usize;
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let fx = (xc - x0 as f64) as f32;
    let fy = (yc - y0 as f64) as f32;
    let c = img.channels();
    let data = img.data();
    let (i00, i10, i01, i11) = ((y0 * w + x0) * c, (y0 * w + x1) * c, (y1 * w + x0) * c, (y1 * w + x1) * c);
    for (k, o) in out.iter_mut().enumerate().take(c) {
        let top = data[i00 + k] * (1.0 - fx) + data[i10 + k] * fx;
        let bottom = data[i01 + k] * (1.0 - fx) + data[i11 + k] * fx;
        *o = top * (1.0 - fy) + bottom * fy;
    }
    in_range
}

pub fn bilinear_sample(img: &ImageBuffer, x: f64, y: f64) -> Vec<f32> {
    let mut out = vec![0.0; img.channels()];
    bilinear_sample_into(img, x, y, &mut out);
    out
}

/// Per-pixel Euclidean length of the flow vectors.
pub fn flow_magnitude(f: &FlowField) -> ImageBuffer {
    let data = (0..f.len()).map(|i| f.magnitude_at(i)).collect();
    ImageBuffer::from_vec(f.width(), f.height(), 1, data).expect("magnitude of a finite flow is finite")
}

/// Resample to `width x height` with pixel-centre alignment.
pub fn resize_bilinear(img: &ImageBuffer, width: usize, height: usize) -> ImageBuffer {
    if img.dims() == (width, height) {
        return img.clone();
    }
    let c = img.channels();
    let sx = img.width() as f64 / width as f64;
    let sy = img.height() as f64 / height as f64;
    let mut out = ImageBuffer::new(width, height, c);
    out.data_mut().par_chunks_mut(width * c).enumerate().for_each(|(y, row)| {
        let src_y = (y as f64 + 0.5) * sy - 0.5;
        for x in 0..width {
            let src_x = (x as f64 + 0.5) * sx - 0.5;
            bilinear_sample_into(img, src_x, src_y, &mut row[x * c..(x + 1) * c]);
        }
    });
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn lattice_points_are_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let img = ImageBuffer::from_fn(5, 4, 3, |_, _, _| rng.random::<f32>());
        for y in 0..4 {
            for x in 0..5 {
                let s = bilinear_sample(&img, x as f64, y as f64);
                assert_eq!(s.as_slice(), img.pixel(x, y));
            }
        }
    }

    #[test]
    fn midpoint() {
        let img = ImageBuffer::from_vec(2, 1, 1, vec![0.0, 1.0]).unwrap();
        assert_eq!(bilinear_sample(&img, 0.5, 0.0), vec![0.5]);
    }

    #[test]
    fn matches_four_term_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let img = ImageBuffer::from_fn(4, 4, 1, |_, _, _| rng.random::<f32>());
        for _ in 0..200 {
            let x: f64 = rng.random_range(0.0..3.0);
            let y: f64 = rng.random_range(0.0..3.0);
            let (x0, y0) = (x.floor() as usize, y.floor() as usize);
            let (a, b) = (x - x0 as f64, y - y0 as f64);
            let p = |xx: usize, yy: usize| img.get(xx, yy, 0) as f64;
            let expected = (1.0 - a) * (1.0 - b) * p(x0, y0)
                + a * (1.0 - b) * p(x0 + 1, y0)
                + (1.0 - a) * b * p(x0, y0 + 1)
                + a * b * p(x0 + 1, y0 + 1);
            let got = bilinear_sample(&img, x, y)[0] as f64;
            assert!((got - expected).abs() < 1e-6, "{got} vs {expected}");
        }
    }

    #[test]
    fn out_of_range_clamps_and_reports() {
        let img = ImageBuffer::from_fn(3, 3, 1, |x, y, _| (x + 3 * y) as f32);
        let mut out = [0.0];
        assert!(!bilinear_sample_into(&img, -2.0, 1.0, &mut out));
        assert_eq!(out[0], img.get(0, 1, 0));
        assert!(!bilinear_sample_into(&img, 1.0, 7.5, &mut out));
        assert_eq!(out[0], img.get(1, 2, 0));
        assert!(bilinear_sample_into(&img, 2.0, 2.0, &mut out));
    }

    #[test]
    fn magnitudes() {
        let f = FlowField::constant(3, 2, 3.0, 4.0);
        assert!(flow_magnitude(&f).data().iter().all(|&m| m == 5.0));
        assert!(flow_magnitude(&FlowField::zeros(2, 2)).data().iter().all(|&m| m == 0.0));
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let g = FlowField::from_fn(6, 6, |_, _| (rng.random_range(-9.0..9.0), rng.random_range(-9.0..9.0)));
        let m = flow_magnitude(&g);
        for i in 0..g.len() {
            let e = ((g.u[i] as f64).powi(2) + (g.v[i] as f64).powi(2)).sqrt();
            assert!((m.data()[i] as f64 - e).abs() < 1e-5);
        }
    }

    #[test]
    fn resize_identity_and_constant() {
        let img = ImageBuffer::filled(8, 6, 3, 0.25);
        let small = resize_bilinear(&img, 4, 3);
        assert!(small.data().iter().all(|&v| (v - 0.25).abs() < 1e-7));
        assert_eq!(resize_bilinear(&img, 8, 6), img);
    }
}
