//! Tunable constants for the fusion pipeline and their key=value file form.

use std::fmt;
use std::str::FromStr;

use crate::error::{FuseError, Result};

/// Number of pyramid levels used by the blending stages.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PyramidLevels {
    /// `floor(log2(min(h, w))) - 3`, clamped to `[3, 8]`.
    Auto,
    Fixed(usize),
}

impl PyramidLevels {
    pub fn resolve(self, width: usize, height: usize) -> usize {
        match self {
            PyramidLevels::Fixed(n) => n,
            PyramidLevels::Auto => {
                let m = width.min(height).max(1);
                let log2 = (usize::BITS - 1 - m.leading_zeros()) as i64;
                (log2 - 3).clamp(3, 8) as usize
            }
        }
    }
}

impl FromStr for PyramidLevels {
    type Err = FuseError;

    fn from_str(s: &str) -> Result<Self> {
        if s.eq_ignore_ascii_case("auto") {
            return Ok(PyramidLevels::Auto);
        }
        s.parse::<usize>()
            .map(PyramidLevels::Fixed)
            .map_err(|_| FuseError::Parameter(format!("pyramid_levels: expected integer or 'auto', got '{s}'")))
    }
}

impl fmt::Display for PyramidLevels {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PyramidLevels::Auto => write!(f, "auto"),
            PyramidLevels::Fixed(n) => write!(f, "{n}"),
        }
    }
}

/// How a revised flow value is stored at its displaced coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TransitionMode {
    /// Store the clipped flow itself at the displaced coordinate.
    Literal,
    /// Store `2f - f_hat`, so the displaced pixel samples the same telephoto ray.
    ExactRay,
}

impl FromStr for TransitionMode {
    type Err = FuseError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "literal" => Ok(TransitionMode::Literal),
            "exact-ray" | "exact_ray" => Ok(TransitionMode::ExactRay),
            other => Err(FuseError::Parameter(format!(
                "transition: expected 'literal' or 'exact-ray', got '{other}'"
            ))),
        }
    }
}

impl fmt::Display for TransitionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TransitionMode::Literal => write!(f, "literal"),
            TransitionMode::ExactRay => write!(f, "exact-ray"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusionConfig {
    /// Box filter extent in pixels; even values are rounded up to the next odd.
    pub kernel: usize,
    /// Allowed flow change per pixel of distance to the overlap boundary.
    pub ratio: f64,
    /// Flow magnitude jump (pixels) that marks a non-connected point.
    pub gradient_threshold: f64,
    pub rhe_block: usize,
    pub rhe_stride: usize,
    /// Linear ramp width around occluded regions.
    pub occ_soft_width: usize,
    /// Inward ramp width at the overlap rectangle border.
    pub overlap_soft_width: usize,
    pub offset_start: f64,
    pub offset_end: f64,
    pub offset_step: f64,
    pub pyramid_levels: PyramidLevels,
    pub transition: TransitionMode,
}

impl Default for FusionConfig {
    fn default() -> Self {
        FusionConfig {
            kernel: 600,
            ratio: 0.01,
            gradient_threshold: 3.0,
            rhe_block: 200,
            rhe_stride: 30,
            occ_soft_width: 15,
            overlap_soft_width: 100,
            offset_start: -0.5,
            offset_end: 0.5,
            offset_step: 0.2,
            pyramid_levels: PyramidLevels::Auto,
            transition: TransitionMode::Literal,
        }
    }
}

impl FusionConfig {
    /// Kernel extent actually used: odd, at least 1.
    pub fn kernel_size(&self) -> usize {
        normalize_kernel(self.kernel)
    }

    /// Sub-pixel offsets applied along each axis by the multi-warp average.
    pub fn offsets(&self) -> Vec<f64> {
        offset_grid(self.offset_start, self.offset_end, self.offset_step)
    }

    pub fn validate(&self) -> Result<()> {
        if self.kernel == 0 {
            return Err(FuseError::Parameter("kernel must be >= 1".into()));
        }
        if !(self.ratio >= 0.0 && self.ratio.is_finite()) {
            return Err(FuseError::Parameter(format!("ratio must be finite and >= 0, got {}", self.ratio)));
        }
        if !(self.gradient_threshold >= 0.0) {
            return Err(FuseError::Parameter("grad_threshold must be >= 0".into()));
        }
        if self.rhe_block == 0 || self.rhe_stride == 0 {
            return Err(FuseError::Parameter("rhe_block and rhe_stride must be >= 1".into()));
        }
        if self.rhe_stride > self.rhe_block {
            return Err(FuseError::Parameter(format!(
                "rhe_stride ({}) must not exceed rhe_block ({})",
                self.rhe_stride, self.rhe_block
            )));
        }
        if !(self.offset_step > 0.0) || self.offset_end < self.offset_start {
            return Err(FuseError::Parameter("offset grid needs step > 0 and end >= start".into()));
        }
        if let PyramidLevels::Fixed(0) = self.pyramid_levels {
            return Err(FuseError::Parameter("pyramid_levels must be >= 1".into()));
        }
        Ok(())
    }

    /// Apply one `key=value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: FromStr>(key: &str, value: &str) -> Result<T> {
            value
                .parse::<T>()
                .map_err(|_| FuseError::Parameter(format!("{key}: cannot parse '{value}'")))
        }
        match key {
            "kernel" => self.kernel = num(key, value)?,
            "ratio" => self.ratio = num(key, value)?,
            "grad_threshold" | "gradient_threshold" => self.gradient_threshold = num(key, value)?,
            "rhe_block" => self.rhe_block = num(key, value)?,
            "rhe_stride" => self.rhe_stride = num(key, value)?,
            "occ_soft" | "occ_soft_width" => self.occ_soft_width = num(key, value)?,
            "overlap_soft" | "overlap_soft_width" => self.overlap_soft_width = num(key, value)?,
            "offset_start" => self.offset_start = num(key, value)?,
            "offset_end" => self.offset_end = num(key, value)?,
            "offset_step" => self.offset_step = num(key, value)?,
            "pyramid_levels" => self.pyramid_levels = value.parse()?,
            "transition" => self.transition = value.parse()?,
            _ => return Err(FuseError::Parameter(format!("unknown config key '{key}'"))),
        }
        Ok(())
    }

    /// Parse `key=value` lines; `#` starts a comment. Unknown keys are errors.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (key, value) in parse_key_values(text)? {
            self.set(&key, &value)?;
        }
        Ok(())
    }
}

/// Split `key=value` lines, dropping blanks and `#` comments.
pub fn parse_key_values(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = match raw.find('#') {
            Some(i) => &raw[..i],
            None => raw,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| {
            FuseError::Parameter(format!("line {}: expected key=value, got '{}'", lineno + 1, raw.trim()))
        })?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

pub fn normalize_kernel(k: usize) -> usize {
    if k % 2 == 0 {
        k + 1
    } else {
        k
    }
}

pub fn offset_grid(start: f64, end: f64, step: f64) -> Vec<f64> {
    if !(step > 0.0) || end < start {
        return vec![start];
    }
    let n = ((end - start) / step + 1e-9).floor() as usize + 1;
    (0..n).map(|i| start + i as f64 * step).collect()
}
