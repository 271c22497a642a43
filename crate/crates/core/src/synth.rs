//! Layered synthetic scenes with analytic flow and occlusion, plus a
//! brute-force coverage oracle for occlusion detection.
//!
//! A scene is a textured background plus rectangular fronto-parallel
//! layers, each with its own disparity. The telephoto camera sits up and to
//! the left of the wide one, so layer `l` appears in the telephoto image
//! shifted by `-d_l` and the backward flow on the wide grid is `-d_l`.
//! Larger `|d|` means nearer.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::config::parse_key_values;
use crate::error::{FuseError, Result};
use crate::imagecore::{BinaryMask, FlowField, ImageBuffer};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TextureKind {
    /// Smoothly interpolated lattice noise.
    Noise,
    Checker,
    Gradient,
}

impl FromStr for TextureKind {
    type Err = FuseError;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "noise" => Ok(TextureKind::Noise),
            "checker" => Ok(TextureKind::Checker),
            "gradient" => Ok(TextureKind::Gradient),
            other => Err(FuseError::Scene(format!("unknown texture {other:?}"))),
        }
    }
}

impl fmt::Display for TextureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TextureKind::Noise => "noise",
            TextureKind::Checker => "checker",
            TextureKind::Gradient => "gradient",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Texture {
    pub kind: TextureKind,
    pub seed: u64,
    /// Feature size in pixels (lattice cell, checker square, gradient period).
    pub scale: f64,
    pub lo: f32,
    pub hi: f32,
}

impl Texture {
    pub fn noise(seed: u64, scale: f64) -> Texture {
        Texture { kind: TextureKind::Noise, seed, scale, lo: 0.1, hi: 0.9 }
    }

    /// Value of channel `c` at continuous layer coordinate `(x, y)`.
    pub fn sample(&self, x: f64, y: f64, c: usize) -> f32 {
        let s = self.scale.max(1e-6);
        let t = match self.kind {
            TextureKind::Noise => {
                // two octaves keep the texture matchable at several scales
                let a = value_noise(self.seed, c, x / s, y / s);
                let b = value_noise(self.seed ^ 0x9e37_79b9, c, 2.0 * x / s, 2.0 * y / s);
                0.7 * a + 0.3 * b
            }
            TextureKind::Checker => {
                let on = ((x / s).floor() as i64 + (y / s).floor() as i64).rem_euclid(2) == 1;
                let tint = hash01(self.seed, c as i64, 0, 7);
                if on { 0.75 + 0.25 * tint } else { 0.25 * tint }
            }
            TextureKind::Gradient => {
                let phase = hash01(self.seed, c as i64, 1, 3) * std::f64::consts::TAU;
                0.5 + 0.5 * ((x + 0.7 * y) / s * std::f64::consts::TAU + phase).sin()
            }
        };
        self.lo + (self.hi - self.lo) * t as f32
    }
}

fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Lattice hash in `[0, 1)`.
fn hash01(seed: u64, c: i64, ix: i64, iy: i64) -> f64 {
    let mut h = mix64(seed.wrapping_add(0x9e37_79b9_7f4a_7c15));
    h = mix64(h ^ (c as u64).wrapping_mul(0x2545_f491_4f6c_dd1d));
    h = mix64(h ^ (ix as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
    h = mix64(h ^ (iy as u64).wrapping_mul(0xc2b2_ae3d_27d4_eb4f));
    (h >> 11) as f64 / (1u64 << 53) as f64
}

fn value_noise(seed: u64, c: usize, x: f64, y: f64) -> f64 {
    let (fx, fy) = (x.floor(), y.floor());
    let (ix, iy) = (fx as i64, fy as i64);
    let smooth = |t: f64| t * t * (3.0 - 2.0 * t);
    let (tx, ty) = (smooth(x - fx), smooth(y - fy));
    let c = c as i64;
    let v00 = hash01(seed, c, ix, iy);
    let v10 = hash01(seed, c, ix + 1, iy);
    let v01 = hash01(seed, c, ix, iy + 1);
    let v11 = hash01(seed, c, ix + 1, iy + 1);
    let top = v00 + (v10 - v00) * tx;
    let bottom = v01 + (v11 - v01) * tx;
    top + (bottom - top) * ty
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    /// `(x, y, width, height)` in wide-view pixels.
    pub rect: (usize, usize, usize, usize),
    pub disparity: (f32, f32),
    pub texture: Texture,
}

impl Layer {
    fn contains(&self, x: f64, y: f64) -> bool {
        let (rx, ry, rw, rh) = self.rect;
        x >= rx as f64 && y >= ry as f64 && x < (rx + rw) as f64 && y < (ry + rh) as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub width: usize,
    pub height: usize,
    pub background: Texture,
    pub background_disparity: (f32, f32),
    pub layers: Vec<Layer>,
    /// Added to the wide image after contrast scaling.
    pub brightness: f32,
    pub contrast: f32,
    pub noise_sigma: f32,
    pub blur_sigma: f32,
    /// Seed of the sensor noise.
    pub seed: u64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        SceneSpec {
            width: 256,
            height: 256,
            background: Texture::noise(1, 12.0),
            background_disparity: (0.0, 0.0),
            layers: Vec::new(),
            brightness: 0.0,
            contrast: 1.0,
            noise_sigma: 0.0,
            blur_sigma: 1.5,
            seed: 0,
        }
    }
}

fn parse_pair(v: &str) -> Result<(f32, f32)> {
    let parts: Vec<&str> = v.split(',').map(str::trim).collect();
    match parts.as_slice() {
        [a, b] => Ok((
            a.parse().map_err(|_| FuseError::Scene(format!("bad number {a:?}")))?,
            b.parse().map_err(|_| FuseError::Scene(format!("bad number {b:?}")))?,
        )),
        _ => Err(FuseError::Scene(format!("expected two comma-separated values, got {v:?}"))),
    }
}

fn parse_rect(v: &str) -> Result<(usize, usize, usize, usize)> {
    let parts: Vec<usize> = v
        .split(',')
        .map(|s| s.trim().parse().map_err(|_| FuseError::Scene(format!("bad rect {v:?}"))))
        .collect::<Result<_>>()?;
    match parts.as_slice() {
        &[x, y, w, h] => Ok((x, y, w, h)),
        _ => Err(FuseError::Scene(format!("rect needs X,Y,W,H, got {v:?}"))),
    }
}

fn parse_num<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.trim().parse().map_err(|_| FuseError::Scene(format!("bad value for {key}: {v:?}")))
}

fn set_texture(t: &mut Texture, field: &str, key: &str, v: &str) -> Result<()> {
    match field {
        "texture" => t.kind = v.parse()?,
        "seed" => t.seed = parse_num(key, v)?,
        "scale" => t.scale = parse_num(key, v)?,
        "lo" => t.lo = parse_num(key, v)?,
        "hi" => t.hi = parse_num(key, v)?,
        _ => return Err(FuseError::Scene(format!("unknown key {key}"))),
    }
    Ok(())
}

impl SceneSpec {
    /// Parse `key=value` lines. Layers use `layerN.` prefixes, the
    /// background `bg.`; see [`SceneSpec::to_text`] for the full key set.
    pub fn parse(text: &str) -> Result<SceneSpec> {
        let mut spec = SceneSpec::default();
        let mut layers: Vec<Option<Layer>> = Vec::new();
        for (key, v) in parse_key_values(text).map_err(|e| FuseError::Scene(e.to_string()))? {
            if let Some(rest) = key.strip_prefix("layer") {
                let (idx, field) = rest
                    .split_once('.')
                    .ok_or_else(|| FuseError::Scene(format!("malformed layer key {key}")))?;
                let idx: usize = parse_num(&key, idx)?;
                if layers.len() <= idx {
                    layers.resize(idx + 1, None);
                }
                let layer = layers[idx].get_or_insert(Layer {
                    rect: (0, 0, 1, 1),
                    disparity: (0.0, 0.0),
                    texture: Texture::noise(idx as u64 + 100, 8.0),
                });
                match field {
                    "rect" => layer.rect = parse_rect(&v)?,
                    "disparity" => layer.disparity = parse_pair(&v)?,
                    f => set_texture(&mut layer.texture, f, &key, &v)?,
                }
                continue;
            }
            if let Some(field) = key.strip_prefix("bg.") {
                if field == "disparity" {
                    spec.background_disparity = parse_pair(&v)?;
                } else {
                    set_texture(&mut spec.background, field, &key, &v)?;
                }
                continue;
            }
            match key.as_str() {
                "width" => spec.width = parse_num(&key, &v)?,
                "height" => spec.height = parse_num(&key, &v)?,
                "brightness" => spec.brightness = parse_num(&key, &v)?,
                "contrast" => spec.contrast = parse_num(&key, &v)?,
                "noise_sigma" => spec.noise_sigma = parse_num(&key, &v)?,
                "blur_sigma" => spec.blur_sigma = parse_num(&key, &v)?,
                "seed" => spec.seed = parse_num(&key, &v)?,
                _ => return Err(FuseError::Scene(format!("unknown key {key}"))),
            }
        }
        spec.layers = layers
            .into_iter()
            .enumerate()
            .map(|(i, l)| l.ok_or_else(|| FuseError::Scene(format!("layer{i} missing"))))
            .collect::<Result<_>>()?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let tex = |s: &mut String, p: &str, t: &Texture| {
            s.push_str(&format!(
                "{p}.texture={}\n{p}.seed={}\n{p}.scale={}\n{p}.lo={}\n{p}.hi={}\n",
                t.kind, t.seed, t.scale, t.lo, t.hi
            ));
        };
        s.push_str(&format!("width={}\nheight={}\nseed={}\n", self.width, self.height, self.seed));
        s.push_str(&format!(
            "brightness={}\ncontrast={}\nnoise_sigma={}\nblur_sigma={}\n",
            self.brightness, self.contrast, self.noise_sigma, self.blur_sigma
        ));
        tex(&mut s, "bg", &self.background);
        s.push_str(&format!("bg.disparity={},{}\n", self.background_disparity.0, self.background_disparity.1));
        for (i, l) in self.layers.iter().enumerate() {
            let p = format!("layer{i}");
            let (x, y, w, h) = l.rect;
            s.push_str(&format!("{p}.rect={x},{y},{w},{h}\n{p}.disparity={},{}\n", l.disparity.0, l.disparity.1));
            tex(&mut s, &p, &l.texture);
        }
        s
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(FuseError::Scene("empty frame".into()));
        }
        let limit = self.width.min(self.height) as f32 / 4.0;
        let check_d = |d: (f32, f32)| -> Result<()> {
            if d.0.hypot(d.1) < limit {
                Ok(())
            } else {
                Err(FuseError::Scene(format!("disparity {d:?} exceeds {limit}")))
            }
        };
        check_d(self.background_disparity)?;
        for (i, l) in self.layers.iter().enumerate() {
            let (x, y, w, h) = l.rect;
            if w == 0 || h == 0 || x + w > self.width || y + h > self.height {
                return Err(FuseError::Scene(format!("layer{i} rect {:?} outside frame", l.rect)));
            }
            check_d(l.disparity)?;
        }
        if self.blur_sigma < 0.0 || self.noise_sigma < 0.0 || self.contrast <= 0.0 {
            return Err(FuseError::Scene("blur, noise and contrast must be non-negative".into()));
        }
        Ok(())
    }

    /// Layers nearest first, the background last.
    fn depth_order(&self) -> Vec<Layer> {
        let mut all = self.layers.clone();
        all.sort_by(|a, b| {
            let (ma, mb) = (a.disparity.0.hypot(a.disparity.1), b.disparity.0.hypot(b.disparity.1));
            mb.total_cmp(&ma)
        });
        all.push(Layer {
            rect: (0, 0, self.width, self.height),
            disparity: self.background_disparity,
            texture: self.background,
        });
        all
    }
}

#[derive(Debug, Clone)]
pub struct Scene {
    pub wide: ImageBuffer,
    /// Wide view before blur, tone change and noise.
    pub wide_clean: ImageBuffer,
    pub tele: ImageBuffer,
    pub gt_flow: FlowField,
    pub gt_occ: BinaryMask,
}

/// Separable Gaussian blur with replicated borders.
pub fn gaussian_blur(img: &ImageBuffer, sigma: f32) -> ImageBuffer {
    if sigma <= 0.0 {
        return img.clone();
    }
    let r = (3.0 * sigma).ceil() as isize;
    let mut k: Vec<f32> = (-r..=r).map(|i| (-(i * i) as f32 / (2.0 * sigma * sigma)).exp()).collect();
    let total: f32 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= total);
    let (w, h) = img.dims();
    let planes: Vec<Vec<f32>> = (0..img.channels())
        .map(|c| {
            let p = img.plane(c);
            let mut tmp = vec![0.0f32; w * h];
            tmp.par_chunks_mut(w).enumerate().for_each(|(y, row)| {
                for (x, o) in row.iter_mut().enumerate() {
                    *o = k
                        .iter()
                        .enumerate()
                        .map(|(j, &kw)| kw * p[y * w + (x as isize + j as isize - r).clamp(0, w as isize - 1) as usize])
                        .sum();
                }
            });
            let mut out = vec![0.0f32; w * h];
            out.par_chunks_mut(w).enumerate().for_each(|(y, row)| {
                for (x, o) in row.iter_mut().enumerate() {
                    *o = k
                        .iter()
                        .enumerate()
                        .map(|(j, &kw)| kw * tmp[(y as isize + j as isize - r).clamp(0, h as isize - 1) as usize * w + x])
                        .sum();
                }
            });
            out
        })
        .collect();
    ImageBuffer::from_planes(w, h, &planes).expect("planes match")
}

fn render<F>(width: usize, height: usize, layers: &[Layer], pick: F) -> ImageBuffer
where
    F: Fn(&Layer, f64, f64) -> Option<(f64, f64)> + Sync,
{
    let mut img = ImageBuffer::new(width, height, 3);
    img.data_mut().par_chunks_mut(width * 3).enumerate().for_each(|(y, row)| {
        for x in 0..width {
            let (px, py) = (x as f64, y as f64);
            let hit = layers.iter().find_map(|l| pick(l, px, py).map(|at| (l, at)));
            if let Some((l, (sx, sy))) = hit {
                for c in 0..3 {
                    row[x * 3 + c] = l.texture.sample(sx, sy, c);
                }
            }
        }
    });
    img
}

/// Render the pair with analytic flow and occlusion.
pub fn generate_scene(spec: &SceneSpec) -> Result<Scene> {
    spec.validate()?;
    let (w, h) = (spec.width, spec.height);
    let order = spec.depth_order();

    let wide_clean = render(w, h, &order, |l, x, y| l.contains(x, y).then_some((x, y)));
    let tele = render(w, h, &order, |l, x, y| {
        let (sx, sy) = (x + l.disparity.0 as f64, y + l.disparity.1 as f64);
        l.contains(sx, sy).then_some((sx, sy))
    });

    let mut gt_flow = FlowField::zeros(w, h);
    let mut gt_occ = BinaryMask::new(w, h);
    for y in 0..h {
        for x in 0..w {
            let (px, py) = (x as f64, y as f64);
            let li = order.iter().position(|l| l.contains(px, py)).expect("background covers frame");
            let d = order[li].disparity;
            gt_flow.set(x, y, -d.0, -d.1);
            // hidden when a nearer layer's telephoto footprint covers p - d
            let (tx, ty) = (px - d.0 as f64, py - d.1 as f64);
            let hidden = order[..li]
                .iter()
                .filter(|m| m.disparity.0.hypot(m.disparity.1) > d.0.hypot(d.1))
                .any(|m| m.contains(tx + m.disparity.0 as f64, ty + m.disparity.1 as f64));
            gt_occ.set(x, y, hidden);
        }
    }

    let mut wide = gaussian_blur(&wide_clean, spec.blur_sigma);
    let normal = Normal::new(0.0f32, spec.noise_sigma.max(0.0)).map_err(|e| FuseError::Scene(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    for v in wide.data_mut() {
        let mut t = *v * spec.contrast + spec.brightness;
        if spec.noise_sigma > 0.0 {
            t += normal.sample(&mut rng);
        }
        *v = t.clamp(0.0, 1.0);
    }
    Ok(Scene { wide, wide_clean, tele, gt_flow, gt_occ })
}

/// Seeded scene of `size x size` pixels: a textured background with small
/// disparity and one to three interior objects whose disparity exceeds the
/// background's by 10 to 24 pixels. Objects keep `size / 8` pixels from the
/// frame and 40 pixels from each other.
pub fn random_scene(seed: u64, size: usize) -> SceneSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bg = (rng.random_range(2.0..8.0f32).round(), rng.random_range(0.0..3.0f32).round());
    let count = rng.random_range(1..=3usize);
    let margin = size / 8;
    let mut layers: Vec<Layer> = Vec::new();
    for _ in 0..200 {
        if layers.len() == count {
            break;
        }
        let w = rng.random_range(size / 8..size / 3);
        let h = rng.random_range(size / 8..size / 3);
        let x = rng.random_range(margin..size - margin - w);
        let y = rng.random_range(margin..size - margin - h);
        let apart = layers.iter().all(|l| {
            let (lx, ly, lw, lh) = l.rect;
            x + w + 40 < lx || lx + lw + 40 < x || y + h + 40 < ly || ly + lh + 40 < y
        });
        if !apart {
            continue;
        }
        let diff = rng.random_range(10.0..=24.0f32);
        let angle = rng.random_range(0.0..0.6f32);
        let d = ((bg.0 + diff * angle.cos()).round(), (bg.1 + diff * angle.sin()).round());
        let texture = Texture {
            kind: if rng.random_bool(0.3) { TextureKind::Checker } else { TextureKind::Noise },
            seed: seed.wrapping_mul(31).wrapping_add(layers.len() as u64),
            scale: rng.random_range(6.0..14.0),
            lo: 0.05,
            hi: 0.95,
        };
        layers.push(Layer { rect: (x, y, w, h), disparity: d, texture });
    }
    SceneSpec {
        width: size,
        height: size,
        background: Texture::noise(seed.wrapping_add(1000), rng.random_range(10.0..24.0)),
        background_disparity: bg,
        layers,
        brightness: 0.02,
        contrast: 0.95,
        noise_sigma: 0.01,
        blur_sigma: 1.5,
        seed,
    }
}

/// Wide frame of `frame` size around a rendered scene placed at `origin`.
/// The surround continues the background texture through the same blur and
/// tone model (without noise).
pub fn wide_frame(spec: &SceneSpec, scene: &Scene, frame: (usize, usize), origin: (usize, usize)) -> Result<ImageBuffer> {
    let (fw, fh) = frame;
    let (ox, oy) = origin;
    if ox + spec.width > fw || oy + spec.height > fh {
        return Err(FuseError::Scene("scene does not fit in the frame".into()));
    }
    let clean = ImageBuffer::from_fn(fw, fh, 3, |x, y, c| {
        spec.background.sample(x as f64 - ox as f64, y as f64 - oy as f64, c)
    });
    let mut out = gaussian_blur(&clean, spec.blur_sigma);
    for v in out.data_mut() {
        *v = (*v * spec.contrast + spec.brightness).clamp(0.0, 1.0);
    }
    out.paste(&scene.wide, ox, oy)?;
    Ok(out)
}

/// Slack on the depth comparison, in flow-magnitude units.
pub const ORACLE_DEPTH_SLACK: f32 = 0.5;

/// Coverage-based occlusion: every wide pixel is projected into the
/// telephoto grid along its flow and splatted onto the surrounding integer
/// pixels with its flow magnitude as nearness. A pixel is occluded when the
/// telephoto sample it reads was claimed by something clearly nearer.
pub fn occlusion_oracle(f: &FlowField) -> BinaryMask {
    let (w, h) = f.dims();
    let mut zbuf = vec![f32::NEG_INFINITY; w * h];
    for y in 0..h {
        for x in 0..w {
            let (u, v) = f.get(x, y);
            let z = f.magnitude_at(y * w + x);
            let (tx, ty) = (x as f32 + u, y as f32 + v);
            for sy in [ty.floor(), ty.ceil()] {
                for sx in [tx.floor(), tx.ceil()] {
                    if sx < 0.0 || sy < 0.0 || sx >= w as f32 || sy >= h as f32 {
                        continue;
                    }
                    let j = sy as usize * w + sx as usize;
                    zbuf[j] = zbuf[j].max(z);
                }
            }
        }
    }
    BinaryMask::from_fn(w, h, |x, y| {
        let (u, v) = f.get(x, y);
        let (tx, ty) = ((x as f32 + u).round(), (y as f32 + v).round());
        if tx < 0.0 || ty < 0.0 || tx >= w as f32 || ty >= h as f32 {
            return false;
        }
        zbuf[ty as usize * w + tx as usize] > f.magnitude_at(y * w + x) + ORACLE_DEPTH_SLACK
    })
}
