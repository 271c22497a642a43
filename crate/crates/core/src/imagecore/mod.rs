//! Raster types shared by every stage, plus integral-image filtering and
//! sampling primitives.
//!
//! Samples are `f32` in `[0, 1]`; 8-bit conversion happens only in
//! [`crate::flowio`]. Flow displacements are in pixels, `u` horizontal
//! (columns) and `v` vertical (rows).

mod integral;
mod sampling;

pub use integral::{box_filter, box_filter_plane, box_filter_plane_f64, integral_image, IntegralImage};
pub use sampling::{bilinear_sample, bilinear_sample_into, flow_magnitude, resize_bilinear};

use crate::error::{FuseError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ImageBuffer {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f32>,
}

impl ImageBuffer {
    pub fn new(width: usize, height: usize, channels: usize) -> Self {
        Self::filled(width, height, channels, 0.0)
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: f32) -> Self {
        assert!(width >= 1 && height >= 1, "image dimensions must be >= 1");
        assert!(channels == 1 || channels == 3, "channels must be 1 or 3");
        ImageBuffer { width, height, channels, data: vec![value; width * height * channels] }
    }

    /// Build from interleaved row-major samples.
    pub fn from_vec(width: usize, height: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(FuseError::Parameter("image dimensions must be >= 1".into()));
        }
        if channels != 1 && channels != 3 {
            return Err(FuseError::Parameter(format!("unsupported channel count {channels}")));
        }
        let expected = width
            .checked_mul(height)
            .and_then(|n| n.checked_mul(channels))
            .ok_or_else(|| FuseError::Parameter("image dimensions overflow".into()))?;
        if data.len() != expected {
            return Err(FuseError::Parameter(format!(
                "sample count {} does not match {width}x{height}x{channels}",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(FuseError::Parameter("image samples must be finite".into()));
        }
        Ok(ImageBuffer { width, height, channels, data })
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f32,
    ) -> Self {
        let mut img = Self::new(width, height, channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    img.data[(y * width + x) * channels + c] = f(x, y, c);
                }
            }
        }
        img
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: usize, v: f32) {
        self.data[(y * self.width + x) * self.channels + c] = v;
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> &[f32] {
        let i = (y * self.width + x) * self.channels;
        &self.data[i..i + self.channels]
    }

    /// One channel as a contiguous plane.
    pub fn plane(&self, c: usize) -> Vec<f32> {
        self.data.iter().skip(c).step_by(self.channels).copied().collect()
    }

    pub fn from_planes(width: usize, height: usize, planes: &[Vec<f32>]) -> Result<Self> {
        let channels = planes.len();
        let mut data = vec![0.0; width * height * channels];
        for (c, p) in planes.iter().enumerate() {
            if p.len() != width * height {
                return Err(FuseError::Parameter("plane size mismatch".into()));
            }
            for (i, &v) in p.iter().enumerate() {
                data[i * channels + c] = v;
            }
        }
        Self::from_vec(width, height, channels, data)
    }

    pub fn crop(&self, x0: usize, y0: usize, width: usize, height: usize) -> Result<Self> {
        check_rect(x0, y0, width, height, self.width, self.height)?;
        let c = self.channels;
        let mut data = Vec::with_capacity(width * height * c);
        for y in y0..y0 + height {
            let start = (y * self.width + x0) * c;
            data.extend_from_slice(&self.data[start..start + width * c]);
        }
        Ok(ImageBuffer { width, height, channels: c, data })
    }

    /// Copy `src` into this image with its top-left corner at `(x0, y0)`.
    pub fn paste(&mut self, src: &ImageBuffer, x0: usize, y0: usize) -> Result<()> {
        check_rect(x0, y0, src.width, src.height, self.width, self.height)?;
        if src.channels != self.channels {
            return Err(FuseError::Parameter("channel count mismatch".into()));
        }
        let c = self.channels;
        for y in 0..src.height {
            let d = ((y0 + y) * self.width + x0) * c;
            let s = y * src.width * c;
            self.data[d..d + src.width * c].copy_from_slice(&src.data[s..s + src.width * c]);
        }
        Ok(())
    }

    /// Replicate a single-channel image to three channels; three-channel input is returned as is.
    pub fn to_rgb(&self) -> ImageBuffer {
        if self.channels == 3 {
            return self.clone();
        }
        let data = self.data.iter().flat_map(|&v| [v, v, v]).collect();
        ImageBuffer { width: self.width, height: self.height, channels: 3, data }
    }

    pub fn clamp01(&mut self) {
        for v in &mut self.data {
            *v = v.clamp(0.0, 1.0);
        }
    }

    /// Mean absolute difference over pixels where `mask` is set (all pixels if `None`).
    pub fn mean_abs_diff(&self, other: &ImageBuffer, mask: Option<&BinaryMask>) -> f64 {
        assert_eq!(self.dims(), other.dims());
        assert_eq!(self.channels, other.channels);
        let c = self.channels;
        let mut sum = 0.0f64;
        let mut n = 0usize;
        for i in 0..self.width * self.height {
            if mask.is_some_and(|m| !m.bits()[i]) {
                continue;
            }
            for k in 0..c {
                sum += (self.data[i * c + k] as f64 - other.data[i * c + k] as f64).abs();
            }
            n += c;
        }
        if n == 0 {
            0.0
        } else {
            sum / n as f64
        }
    }
}

pub(crate) fn check_rect(
    x: usize,
    y: usize,
    width: usize,
    height: usize,
    frame_width: usize,
    frame_height: usize,
) -> Result<()> {
    let fits = width >= 1
        && height >= 1
        && x.checked_add(width).is_some_and(|r| r <= frame_width)
        && y.checked_add(height).is_some_and(|b| b <= frame_height);
    if fits {
        Ok(())
    } else {
        Err(FuseError::RectOutOfBounds { x, y, width, height, frame_width, frame_height })
    }
}

/// Dense displacement field with per-pixel validity.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    width: usize,
    height: usize,
    pub u: Vec<f32>,
    pub v: Vec<f32>,
    pub valid: Vec<bool>,
}

impl FlowField {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self::constant(width, height, 0.0, 0.0)
    }

    pub fn constant(width: usize, height: usize, u: f32, v: f32) -> Self {
        assert!(width >= 1 && height >= 1, "flow dimensions must be >= 1");
        let n = width * height;
        FlowField { width, height, u: vec![u; n], v: vec![v; n], valid: vec![true; n] }
    }

    pub fn from_vecs(width: usize, height: usize, u: Vec<f32>, v: Vec<f32>, valid: Vec<bool>) -> Result<Self> {
        let n = width
            .checked_mul(height)
            .ok_or_else(|| FuseError::Parameter("flow dimensions overflow".into()))?;
        if width == 0 || height == 0 || u.len() != n || v.len() != n || valid.len() != n {
            return Err(FuseError::Parameter(format!("flow buffers do not match {width}x{height}")));
        }
        if (0..n).any(|i| valid[i] && !(u[i].is_finite() && v[i].is_finite())) {
            return Err(FuseError::Parameter("valid flow vectors must be finite".into()));
        }
        Ok(FlowField { width, height, u, v, valid })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> (f32, f32)) -> Self {
        let mut out = Self::zeros(width, height);
        for y in 0..height {
            for x in 0..width {
                let (u, v) = f(x, y);
                out.u[y * width + x] = u;
                out.v[y * width + x] = v;
            }
        }
        out
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> (f32, f32) {
        let i = y * self.width + x;
        (self.u[i], self.v[i])
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, u: f32, v: f32) {
        let i = y * self.width + x;
        self.u[i] = u;
        self.v[i] = v;
    }

    #[inline]
    pub fn magnitude_at(&self, i: usize) -> f32 {
        self.u[i].hypot(self.v[i])
    }

    pub fn is_fully_valid(&self) -> bool {
        self.valid.iter().all(|&b| b)
    }

    pub fn validity(&self) -> BinaryMask {
        BinaryMask { width: self.width, height: self.height, bits: self.valid.clone() }
    }

    /// Componentwise `self - other`; valid where both are valid.
    pub fn sub(&self, other: &FlowField) -> FlowField {
        assert_eq!(self.dims(), other.dims());
        let n = self.len();
        FlowField {
            width: self.width,
            height: self.height,
            u: (0..n).map(|i| self.u[i] - other.u[i]).collect(),
            v: (0..n).map(|i| self.v[i] - other.v[i]).collect(),
            valid: (0..n).map(|i| self.valid[i] && other.valid[i]).collect(),
        }
    }

    pub fn crop(&self, x0: usize, y0: usize, width: usize, height: usize) -> Result<FlowField> {
        check_rect(x0, y0, width, height, self.width, self.height)?;
        let mut out = FlowField::zeros(width, height);
        for y in 0..height {
            for x in 0..width {
                let s = (y0 + y) * self.width + x0 + x;
                let d = y * width + x;
                out.u[d] = self.u[s];
                out.v[d] = self.v[s];
                out.valid[d] = self.valid[s];
            }
        }
        Ok(out)
    }

    /// Largest absolute difference between 4-neighbours over both components.
    pub fn max_neighbor_jump(&self) -> f32 {
        let (w, h) = self.dims();
        let mut m = 0.0f32;
        for y in 0..h {
            for x in 0..w {
                let i = y * w + x;
                if x + 1 < w {
                    m = m.max((self.u[i] - self.u[i + 1]).abs()).max((self.v[i] - self.v[i + 1]).abs());
                }
                if y + 1 < h {
                    m = m.max((self.u[i] - self.u[i + w]).abs()).max((self.v[i] - self.v[i + w]).abs());
                }
            }
        }
        m
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl BinaryMask {
    pub fn new(width: usize, height: usize) -> Self {
        BinaryMask { width, height, bits: vec![false; width * height] }
    }

    pub fn full(width: usize, height: usize) -> Self {
        BinaryMask { width, height, bits: vec![true; width * height] }
    }

    pub fn from_bits(width: usize, height: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != width * height {
            return Err(FuseError::Parameter(format!("mask bits do not match {width}x{height}")));
        }
        Ok(BinaryMask { width, height, bits })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut bits = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                bits.push(f(x, y));
            }
        }
        BinaryMask { width, height, bits }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn bits_mut(&mut self) -> &mut [bool] {
        &mut self.bits
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, b: bool) {
        self.bits[y * self.width + x] = b;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn union(&self, other: &BinaryMask) -> BinaryMask {
        assert_eq!(self.dims(), other.dims());
        let bits = self.bits.iter().zip(&other.bits).map(|(&a, &b)| a || b).collect();
        BinaryMask { width: self.width, height: self.height, bits }
    }

    pub fn intersect(&self, other: &BinaryMask) -> BinaryMask {
        assert_eq!(self.dims(), other.dims());
        let bits = self.bits.iter().zip(&other.bits).map(|(&a, &b)| a && b).collect();
        BinaryMask { width: self.width, height: self.height, bits }
    }

    pub fn not(&self) -> BinaryMask {
        BinaryMask { width: self.width, height: self.height, bits: self.bits.iter().map(|b| !b).collect() }
    }

    /// Intersection over union; two empty masks score 1.
    pub fn iou(&self, other: &BinaryMask) -> f64 {
        assert_eq!(self.dims(), other.dims());
        let (mut inter, mut uni) = (0usize, 0usize);
        for (&a, &b) in self.bits.iter().zip(&other.bits) {
            inter += (a && b) as usize;
            uni += (a || b) as usize;
        }
        if uni == 0 {
            1.0
        } else {
            inter as f64 / uni as f64
        }
    }

    /// Chebyshev dilation by `r` pixels.
    pub fn dilate(&self, r: usize) -> BinaryMask {
        let (w, h) = self.dims();
        let mut rows = vec![false; w * h];
        for y in 0..h {
            for x in 0..w {
                if self.bits[y * w + x] {
                    for xx in x.saturating_sub(r)..=(x + r).min(w - 1) {
                        rows[y * w + xx] = true;
                    }
                }
            }
        }
        let mut out = vec![false; w * h];
        for y in 0..h {
            for x in 0..w {
                if rows[y * w + x] {
                    for yy in y.saturating_sub(r)..=(y + r).min(h - 1) {
                        out[yy * w + x] = true;
                    }
                }
            }
        }
        BinaryMask { width: w, height: h, bits: out }
    }

    /// 0/1 single-channel image.
    pub fn to_image(&self) -> ImageBuffer {
        let data = self.bits.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
        ImageBuffer { width: self.width, height: self.height, channels: 1, data }
    }
}

/// Soft blend weights in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMap {
    width: usize,
    height: usize,
    w: Vec<f32>,
}

impl WeightMap {
    pub fn constant(width: usize, height: usize, value: f32) -> Self {
        WeightMap { width, height, w: vec![value.clamp(0.0, 1.0); width * height] }
    }

    pub fn from_vec(width: usize, height: usize, w: Vec<f32>) -> Result<Self> {
        if w.len() != width * height {
            return Err(FuseError::Parameter(format!("weights do not match {width}x{height}")));
        }
        if w.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(FuseError::Parameter("weights must lie in [0, 1]".into()));
        }
        Ok(WeightMap { width, height, w })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f32) -> Self {
        let mut w = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                w.push(f(x, y).clamp(0.0, 1.0));
            }
        }
        WeightMap { width, height, w }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn weights(&self) -> &[f32] {
        &self.w
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.w[y * self.width + x]
    }

    pub fn to_image(&self) -> ImageBuffer {
        ImageBuffer { width: self.width, height: self.height, channels: 1, data: self.w.clone() }
    }
}

/// Per-pixel distance (in pixels) to the overlap boundary.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMap {
    width: usize,
    height: usize,
    d: Vec<f32>,
}

impl DistanceMap {
    pub fn from_vec(width: usize, height: usize, d: Vec<f32>) -> Result<Self> {
        if d.len() != width * height {
            return Err(FuseError::Parameter(format!("distances do not match {width}x{height}")));
        }
        if d.iter().any(|v| !(*v >= 0.0)) {
            return Err(FuseError::Parameter("distances must be non-negative".into()));
        }
        Ok(DistanceMap { width, height, d })
    }

    /// Plain distance to the nearest of the four borders.
    pub fn nearest_border(width: usize, height: usize) -> Self {
        let mut d = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                let m = x.min(y).min(width - 1 - x).min(height - 1 - y);
                d.push(m as f32);
            }
        }
        DistanceMap { width, height, d }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn values(&self) -> &[f32] {
        &self.d
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.d[y * self.width + x]
    }

    pub fn max_value(&self) -> f32 {
        self.d.iter().copied().fold(0.0, f32::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn image_rejects_bad_buffers() {
        assert!(ImageBuffer::from_vec(2, 2, 1, vec![0.0; 3]).is_err());
        assert!(ImageBuffer::from_vec(2, 2, 2, vec![0.0; 8]).is_err());
        assert!(ImageBuffer::from_vec(0, 2, 1, vec![]).is_err());
        assert!(ImageBuffer::from_vec(1, 1, 1, vec![f32::NAN]).is_err());
        assert!(ImageBuffer::from_vec(2, 1, 3, vec![0.5; 6]).is_ok());
    }

    #[test]
    fn crop_and_paste() {
        let img = ImageBuffer::from_fn(6, 5, 3, |x, y, c| (x + 10 * y + 100 * c) as f32);
        let part = img.crop(2, 1, 3, 2).unwrap();
        assert_eq!(part.get(0, 0, 1), img.get(2, 1, 1));
        assert_eq!(part.get(2, 1, 2), img.get(4, 2, 2));
        assert!(img.crop(4, 4, 3, 2).is_err());
        let mut canvas = ImageBuffer::new(6, 5, 3);
        canvas.paste(&part, 2, 1).unwrap();
        assert_eq!(canvas.get(4, 2, 0), img.get(4, 2, 0));
        assert_eq!(canvas.get(0, 0, 0), 0.0);
    }

    #[test]
    fn planes_round_trip() {
        let img = ImageBuffer::from_fn(4, 3, 3, |x, y, c| (x * 7 + y * 3 + c) as f32 / 40.0);
        let planes: Vec<_> = (0..3).map(|c| img.plane(c)).collect();
        assert_eq!(ImageBuffer::from_planes(4, 3, &planes).unwrap(), img);
    }

    #[test]
    fn mask_iou_and_dilate() {
        let a = BinaryMask::from_fn(5, 5, |x, y| x == 2 && y == 2);
        let d = a.dilate(1);
        assert_eq!(d.count(), 9);
        assert!((a.iou(&d) - 1.0 / 9.0).abs() < 1e-12);
        assert_eq!(BinaryMask::new(3, 3).iou(&BinaryMask::new(3, 3)), 1.0);
    }

    #[test]
    fn nearest_border_distance() {
        let d = DistanceMap::nearest_border(5, 5);
        assert_eq!(d.get(2, 2), 2.0);
        assert_eq!(d.get(0, 3), 0.0);
        assert_eq!(d.get(1, 3), 1.0);
    }

    #[test]
    fn weights_validated() {
        assert!(WeightMap::from_vec(1, 2, vec![0.5, 1.5]).is_err());
        assert!(WeightMap::from_vec(1, 2, vec![0.5, 1.0]).is_ok());
    }
}
