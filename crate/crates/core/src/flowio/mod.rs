//! Image and flow-field file I/O, plus a classical flow estimator used when
//! no precomputed flow is supplied.
//!
//! Images are PNG or binary PNM (PPM/PGM); samples are converted to `[0, 1]`
//! on read and rounded back to 8 bits on write. Flow files use the
//! Middlebury `.flo` layout: the float `202021.25` (bytes `PIEH`), `i32`
//! width, `i32` height, then row-major interleaved `(u, v)` pairs, all
//! little-endian.

mod estimate;

pub use estimate::{estimate_flow_diagnostic, DiagnosticParams};

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use image::{DynamicImage, ImageFormat};

use crate::error::{FuseError, Result};
use crate::imagecore::{FlowField, ImageBuffer};

/// Sanity-check float at the start of every `.flo` file.
pub const FLO_MAGIC: f32 = 202021.25;
/// Vectors with a component beyond this magnitude are treated as unknown.
pub const FLO_UNKNOWN_THRESHOLD: f32 = 1e9;
const FLO_UNKNOWN_VALUE: f32 = 1e10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FlowFileHeader {
    pub width: i32,
    pub height: i32,
}

impl FlowFileHeader {
    pub fn parse(bytes: &[u8]) -> std::result::Result<Self, String> {
        if bytes.len() < 12 {
            return Err(format!("header needs 12 bytes, file has {}", bytes.len()));
        }
        let magic = f32::from_le_bytes(bytes[0..4].try_into().unwrap());
        if magic != FLO_MAGIC {
            return Err(format!("bad magic {:?}, expected \"PIEH\"", &bytes[0..4]));
        }
        let width = i32::from_le_bytes(bytes[4..8].try_into().unwrap());
        let height = i32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if width <= 0 || height <= 0 {
            return Err(format!("non-positive dimensions {width}x{height}"));
        }
        Ok(FlowFileHeader { width, height })
    }

    pub fn to_bytes(self) -> [u8; 12] {
        let mut out = [0u8; 12];
        out[0..4].copy_from_slice(&FLO_MAGIC.to_le_bytes());
        out[4..8].copy_from_slice(&self.width.to_le_bytes());
        out[8..12].copy_from_slice(&self.height.to_le_bytes());
        out
    }
}

fn format_from_path(path: &Path) -> Result<ImageFormat> {
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase())
        .unwrap_or_default();
    match ext.as_str() {
        "png" => Ok(ImageFormat::Png),
        "ppm" | "pgm" | "pnm" => Ok(ImageFormat::Pnm),
        other => Err(FuseError::UnsupportedFormat(format!(
            "{}: extension '{other}' (expected png, ppm or pgm)",
            path.display()
        ))),
    }
}

fn io_err(path: &Path, source: std::io::Error) -> FuseError {
    FuseError::Io { path: path.to_path_buf(), source }
}

fn format_err(path: &Path, reason: impl Into<String>) -> FuseError {
    FuseError::Format { path: path.to_path_buf(), reason: reason.into() }
}

pub fn read_image(path: impl AsRef<Path>) -> Result<ImageBuffer> {
    let path = path.as_ref();
    let format = format_from_path(path)?;
    let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
    let decoded = image::load_from_memory_with_format(&bytes, format).map_err(|e| format_err(path, e.to_string()))?;
    let (w, h) = (decoded.width() as usize, decoded.height() as usize);
    let gray = matches!(
        decoded,
        DynamicImage::ImageLuma8(_) | DynamicImage::ImageLuma16(_) | DynamicImage::ImageLumaA8(_) | DynamicImage::ImageLumaA16(_)
    );
    let is16 = matches!(
        decoded,
        DynamicImage::ImageLuma16(_) | DynamicImage::ImageLumaA16(_) | DynamicImage::ImageRgb16(_) | DynamicImage::ImageRgba16(_)
    );
    let data: Vec<f32> = match (gray, is16) {
        (true, false) => decoded.to_luma8().into_raw().into_iter().map(|v| v as f32 / 255.0).collect(),
        (true, true) => decoded.to_luma16().into_raw().into_iter().map(|v| v as f32 / 65535.0).collect(),
        (false, false) => decoded.to_rgb8().into_raw().into_iter().map(|v| v as f32 / 255.0).collect(),
        (false, true) => decoded.to_rgb16().into_raw().into_iter().map(|v| v as f32 / 65535.0).collect(),
    };
    ImageBuffer::from_vec(w, h, if gray { 1 } else { 3 }, data).map_err(|e| format_err(path, e.to_string()))
}

#[inline]
fn to_u8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn write_image(path: impl AsRef<Path>, img: &ImageBuffer) -> Result<()> {
    let path = path.as_ref();
    let format = format_from_path(path)?;
    let (w, h) = (img.width() as u32, img.height() as u32);
    let raw: Vec<u8> = img.data().iter().map(|&v| to_u8(v)).collect();
    let dynamic = if img.channels() == 1 {
        DynamicImage::ImageLuma8(image::GrayImage::from_raw(w, h, raw).expect("buffer size"))
    } else {
        if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("pgm")) {
            return Err(FuseError::UnsupportedFormat(format!("{}: PGM holds one channel", path.display())));
        }
        DynamicImage::ImageRgb8(image::RgbImage::from_raw(w, h, raw).expect("buffer size"))
    };
    dynamic.save_with_format(path, format).map_err(|e| match e {
        image::ImageError::IoError(io) => io_err(path, io),
        other => format_err(path, other.to_string()),
    })
}

/// Write a plane of non-negative values as a 16-bit PGM, `sample = round(v * scale)`.
pub fn write_gray16(path: impl AsRef<Path>, width: usize, height: usize, values: &[f32], scale: f32) -> Result<()> {
    let path = path.as_ref();
    let raw: Vec<u16> = values.iter().map(|&v| (v * scale).round().clamp(0.0, 65535.0) as u16).collect();
    let img = image::ImageBuffer::<image::Luma<u16>, Vec<u16>>::from_raw(width as u32, height as u32, raw)
        .ok_or_else(|| FuseError::Parameter("plane size mismatch".into()))?;
    DynamicImage::ImageLuma16(img).save_with_format(path, ImageFormat::Pnm).map_err(|e| match e {
        image::ImageError::IoError(io) => io_err(path, io),
        other => format_err(path, other.to_string()),
    })
}

pub fn decode_flow(bytes: &[u8]) -> std::result::Result<FlowField, String> {
    let header = FlowFileHeader::parse(bytes)?;
    let (w, h) = (header.width as usize, header.height as usize);
    let expected = w
        .checked_mul(h)
        .and_then(|n| n.checked_mul(8))
        .and_then(|n| n.checked_add(12))
        .ok_or_else(|| "dimensions overflow".to_string())?;
    if bytes.len() != expected {
        return Err(format!("payload is {} bytes, {w}x{h} needs {}", bytes.len() - 12, expected - 12));
    }
    let n = w * h;
    let (mut u, mut v, mut valid) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
    for px in bytes[12..].chunks_exact(8) {
        let a = f32::from_le_bytes(px[0..4].try_into().unwrap());
        let b = f32::from_le_bytes(px[4..8].try_into().unwrap());
        let ok = a.is_finite() && b.is_finite() && a.abs() <= FLO_UNKNOWN_THRESHOLD && b.abs() <= FLO_UNKNOWN_THRESHOLD;
        u.push(if ok { a } else { 0.0 });
        v.push(if ok { b } else { 0.0 });
        valid.push(ok);
    }
    FlowField::from_vecs(w, h, u, v, valid).map_err(|e| e.to_string())
}

pub fn encode_flow(f: &FlowField) -> Vec<u8> {
    let header = FlowFileHeader { width: f.width() as i32, height: f.height() as i32 };
    let mut out = Vec::with_capacity(12 + f.len() * 8);
    out.extend_from_slice(&header.to_bytes());
    for i in 0..f.len() {
        let (a, b) = if f.valid[i] { (f.u[i], f.v[i]) } else { (FLO_UNKNOWN_VALUE, FLO_UNKNOWN_VALUE) };
        out.extend_from_slice(&a.to_le_bytes());
        out.extend_from_slice(&b.to_le_bytes());
    }
    out
}

pub fn read_flow(path: impl AsRef<Path>) -> Result<FlowField> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
    decode_flow(&bytes).map_err(|reason| format_err(path, reason))
}

pub fn write_flow(path: impl AsRef<Path>, f: &FlowField) -> Result<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = BufWriter::new(file);
    w.write_all(&encode_flow(f)).and_then(|_| w.flush()).map_err(|e| io_err(path, e))
}
