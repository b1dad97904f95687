//! On-disk formats.
//!
//! `.2dgs` layout, all little-endian:
//!
//! ```text
//! offset  size  field
//!      0     4  magic "F2GS"
//!      4     2  version (u16) = 1
//!      6     4  width (u32)
//!     10     4  height (u32)
//!     14     4  count K (u32)
//!     18    10  reserved, zero
//!     28  32·K  K records of 8 × f32: mu_x mu_y log_s_x log_s_y theta r g b
//! ```
//!
//! Raw heatmaps are `width (u32), height (u32)` followed by `width·height`
//! f32 values. Checkpoints are a JSON manifest plus a sibling blob of f32
//! tensors (`<manifest>.bin`).

use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use image::{DynamicImage, ImageFormat};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gsmodel::{Gaussian2D, GaussianSet, PARAMS_PER_GAUSSIAN};
use crate::init::Heatmap;
use crate::raster::ImageBuffer;
use crate::scalar::Real;

pub const GS_MAGIC: [u8; 4] = *b"F2GS";
pub const GS_VERSION: u16 = 1;
pub const GS_HEADER_LEN: usize = 28;
pub const GS_RECORD_LEN: usize = PARAMS_PER_GAUSSIAN * 4;

#[derive(Debug, Error)]
pub enum CodecError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("bad magic {found:?}, expected \"F2GS\"")]
    BadMagic { found: [u8; 4] },
    #[error("unsupported version {found}, expected {GS_VERSION}")]
    UnsupportedVersion { found: u16 },
    #[error("truncated stream: expected {expected} bytes, got {actual}")]
    Truncated { expected: usize, actual: usize },
    #[error("trailing data: expected {expected} bytes, got {actual}")]
    TrailingData { expected: usize, actual: usize },
    #[error("record {index}: {reason}")]
    Invalid { index: usize, reason: String },
    #[error("unsupported image format: {0}")]
    UnsupportedFormat(String),
    #[error("unsupported bit depth: {0} (only 8-bit images are accepted)")]
    UnsupportedDepth(String),
    #[error("decode failure: {0}")]
    Decode(String),
    #[error("checkpoint manifest: {0}")]
    Manifest(String),
}

pub fn gs_file_len(k: usize) -> usize {
    GS_HEADER_LEN + GS_RECORD_LEN * k
}

/// Writes a set and returns the number of bytes written.
pub fn write_gs<T: Real, W: Write>(set: &GaussianSet<T>, mut sink: W) -> Result<usize, CodecError> {
    let mut buf = Vec::with_capacity(gs_file_len(set.len()));
    buf.extend_from_slice(&GS_MAGIC);
    buf.extend_from_slice(&GS_VERSION.to_le_bytes());
    buf.extend_from_slice(&to_u32(set.width)?.to_le_bytes());
    buf.extend_from_slice(&to_u32(set.height)?.to_le_bytes());
    buf.extend_from_slice(&to_u32(set.len())?.to_le_bytes());
    buf.extend_from_slice(&[0u8; 10]);
    for v in set.to_flat() {
        buf.extend_from_slice(&(v.wide() as f32).to_le_bytes());
    }
    sink.write_all(&buf)?;
    Ok(buf.len())
}

fn to_u32(v: usize) -> Result<u32, CodecError> {
    u32::try_from(v).map_err(|_| CodecError::Invalid {
        index: 0,
        reason: format!("value {v} does not fit in u32"),
    })
}

/// Reads and validates a set written by [`write_gs`].
pub fn read_gs<T: Real, R: Read>(mut source: R) -> Result<GaussianSet<T>, CodecError> {
    let mut bytes = Vec::new();
    source.read_to_end(&mut bytes)?;
    decode_gs(&bytes)
}

pub fn decode_gs<T: Real>(bytes: &[u8]) -> Result<GaussianSet<T>, CodecError> {
    if bytes.len() < GS_HEADER_LEN {
        if bytes.len() >= 4 && bytes[..4] != GS_MAGIC {
            return Err(CodecError::BadMagic {
                found: bytes[..4].try_into().unwrap(),
            });
        }
        return Err(CodecError::Truncated {
            expected: GS_HEADER_LEN,
            actual: bytes.len(),
        });
    }
    let magic: [u8; 4] = bytes[0..4].try_into().unwrap();
    if magic != GS_MAGIC {
        return Err(CodecError::BadMagic { found: magic });
    }
    let version = u16::from_le_bytes(bytes[4..6].try_into().unwrap());
    if version != GS_VERSION {
        return Err(CodecError::UnsupportedVersion { found: version });
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as usize;
    let (width, height, count) = (u32_at(6), u32_at(10), u32_at(14));
    let expected = gs_file_len(count);
    if bytes.len() < expected {
        return Err(CodecError::Truncated {
            expected,
            actual: bytes.len(),
        });
    }
    if bytes.len() > expected {
        return Err(CodecError::TrailingData {
            expected,
            actual: bytes.len(),
        });
    }
    let flat: Vec<T> = bytes[GS_HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| T::of(f32::from_le_bytes(c.try_into().unwrap()) as f64))
        .collect();
    let set = GaussianSet::from_flat(width, height, &flat);
    validate_records(&set)?;
    Ok(set)
}

fn validate_records<T: Real>(set: &GaussianSet<T>) -> Result<(), CodecError> {
    let (w, h) = (T::of_usize(set.width), T::of_usize(set.height));
    for (index, g) in set.gaussians.iter().enumerate() {
        let invalid = |reason: String| CodecError::Invalid { index, reason };
        if !g.is_finite() {
            return Err(invalid("non-finite parameter".into()));
        }
        if g.mu[0] < T::zero() || g.mu[0] >= w || g.mu[1] < T::zero() || g.mu[1] >= h {
            return Err(invalid(format!(
                "position ({}, {}) outside image bounds [0, {}) x [0, {})",
                g.mu[0], g.mu[1], set.width, set.height
            )));
        }
        if g.color.iter().any(|&c| c < T::zero() || c > T::one()) {
            return Err(invalid(format!("colour {:?} outside [0, 1]", g.color)));
        }
    }
    Ok(())
}

pub fn save_gs<T: Real>(set: &GaussianSet<T>, path: &Path) -> Result<usize, CodecError> {
    let f = BufWriter::new(File::create(path)?);
    write_gs(set, f)
}

pub fn load_gs<T: Real>(path: &Path) -> Result<GaussianSet<T>, CodecError> {
    read_gs(BufReader::new(File::open(path)?))
}

/// Writes the raw heatmap format.
pub fn write_heatmap_raw<T: Real, W: Write>(h: &Heatmap<T>, mut sink: W) -> Result<(), CodecError> {
    let mut buf = Vec::with_capacity(8 + 4 * h.values.len());
    buf.extend_from_slice(&to_u32(h.width)?.to_le_bytes());
    buf.extend_from_slice(&to_u32(h.height)?.to_le_bytes());
    for v in &h.values {
        buf.extend_from_slice(&(v.wide() as f32).to_le_bytes());
    }
    sink.write_all(&buf)?;
    Ok(())
}

pub fn read_heatmap_raw<T: Real, R: Read>(mut source: R) -> Result<Heatmap<T>, CodecError> {
    let mut bytes = Vec::new();
    source.read_to_end(&mut bytes)?;
    if bytes.len() < 8 {
        return Err(CodecError::Truncated {
            expected: 8,
            actual: bytes.len(),
        });
    }
    let w = u32::from_le_bytes(bytes[0..4].try_into().unwrap()) as usize;
    let h = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let expected = 8 + 4 * w * h;
    if bytes.len() != expected {
        return Err(if bytes.len() < expected {
            CodecError::Truncated {
                expected,
                actual: bytes.len(),
            }
        } else {
            CodecError::TrailingData {
                expected,
                actual: bytes.len(),
            }
        });
    }
    let values = bytes[8..]
        .chunks_exact(4)
        .map(|c| T::of(f32::from_le_bytes(c.try_into().unwrap()) as f64))
        .collect();
    Ok(Heatmap::from_values(w, h, values))
}

/// Quantises `[0, 1]` to 8 bits with round-half-up.
#[inline]
pub fn quantize_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0 + 0.5).floor() as u8
}

/// Single-channel PNG preview, values ×255 rounded.
pub fn save_heatmap_png<T: Real>(h: &Heatmap<T>, path: &Path) -> Result<(), CodecError> {
    let pixels: Vec<u8> = h.values.iter().map(|v| quantize_u8(v.wide())).collect();
    let img = image::GrayImage::from_raw(h.width as u32, h.height as u32, pixels)
        .ok_or_else(|| CodecError::Decode("heatmap buffer size".into()))?;
    img.save_with_format(path, ImageFormat::Png)
        .map_err(|e| CodecError::Decode(e.to_string()))
}

fn image_format(path: &Path) -> Result<ImageFormat, CodecError> {
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase())
        .unwrap_or_default();
    match ext.as_str() {
        "png" => Ok(ImageFormat::Png),
        "ppm" | "pnm" => Ok(ImageFormat::Pnm),
        other => Err(CodecError::UnsupportedFormat(format!(
            "extension {other:?} (expected .png or .ppm)"
        ))),
    }
}

/// Loads an 8-bit PNG or PPM into `[0, 1]` floats (channel value / 255).
/// Grey images load with one channel, colour images with three; alpha is
/// dropped.
pub fn load_image<T: Real>(path: &Path) -> Result<ImageBuffer<T>, CodecError> {
    let bytes = fs::read(path)?;
    let format = image::guess_format(&bytes).map_err(|e| CodecError::UnsupportedFormat(e.to_string()))?;
    if !matches!(format, ImageFormat::Png | ImageFormat::Pnm) {
        return Err(CodecError::UnsupportedFormat(format!("{format:?}")));
    }
    let img = image::load_from_memory_with_format(&bytes, format).map_err(|e| CodecError::Decode(e.to_string()))?;
    dynamic_to_buffer(img)
}

fn dynamic_to_buffer<T: Real>(img: DynamicImage) -> Result<ImageBuffer<T>, CodecError> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let (channels, raw) = match img {
        DynamicImage::ImageLuma8(b) => (1, b.into_raw()),
        DynamicImage::ImageLumaA8(_) => (1, img.to_luma8().into_raw()),
        DynamicImage::ImageRgb8(b) => (3, b.into_raw()),
        DynamicImage::ImageRgba8(_) => (3, img.to_rgb8().into_raw()),
        other => return Err(CodecError::UnsupportedDepth(format!("{:?}", other.color()))),
    };
    let data = raw.into_iter().map(|v| T::of(v as f64 / 255.0)).collect();
    ImageBuffer::from_data(w, h, channels, data).map_err(|e| CodecError::Decode(e.to_string()))
}

/// Saves as PNG or binary PPM depending on the extension.
pub fn save_image<T: Real>(img: &ImageBuffer<T>, path: &Path) -> Result<(), CodecError> {
    let format = image_format(path)?;
    let bytes: Vec<u8> = img.data.iter().map(|v| quantize_u8(v.wide())).collect();
    let (w, h) = (img.width as u32, img.height as u32);
    let dynamic = match img.channels {
        1 => DynamicImage::ImageLuma8(
            image::GrayImage::from_raw(w, h, bytes).ok_or_else(|| CodecError::Decode("size".into()))?,
        ),
        3 => DynamicImage::ImageRgb8(
            image::RgbImage::from_raw(w, h, bytes).ok_or_else(|| CodecError::Decode("size".into()))?,
        ),
        c => return Err(CodecError::UnsupportedFormat(format!("{c} channels"))),
    };
    if format == ImageFormat::Pnm && img.channels == 1 {
        // P6 is colour-only.
        return save_image(&img.to_rgb(), path);
    }
    dynamic
        .save_with_format(path, format)
        .map_err(|e| CodecError::Decode(e.to_string()))
}

/// One named f32 tensor inside a checkpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorRecord {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
    len: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
struct Manifest {
    format: String,
    version: u32,
    kind: String,
    step: u64,
    #[serde(default)]
    meta: serde_json::Value,
    blob: String,
    tensors: Vec<TensorEntry>,
}

const CHECKPOINT_FORMAT: &str = "gsimage-checkpoint";

/// Contents of a checkpoint: a model kind tag, the training step, free-form
/// metadata and the tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub kind: String,
    pub step: u64,
    pub meta: serde_json::Value,
    pub tensors: Vec<TensorRecord>,
}

impl Checkpoint {
    pub fn tensor(&self, name: &str) -> Option<&TensorRecord> {
        self.tensors.iter().find(|t| t.name == name)
    }
}

pub fn checkpoint_blob_path(manifest: &Path) -> PathBuf {
    let mut s = manifest.as_os_str().to_owned();
    s.push(".bin");
    PathBuf::from(s)
}

pub fn save_checkpoint(ckpt: &Checkpoint, manifest_path: &Path) -> Result<(), CodecError> {
    let blob_path = checkpoint_blob_path(manifest_path);
    let mut entries = Vec::with_capacity(ckpt.tensors.len());
    let mut blob = Vec::new();
    let mut offset = 0;
    for t in &ckpt.tensors {
        let expected: usize = t.shape.iter().product();
        if expected != t.data.len() {
            return Err(CodecError::Manifest(format!(
                "tensor {} has {} values but shape {:?}",
                t.name,
                t.data.len(),
                t.shape
            )));
        }
        for v in &t.data {
            blob.extend_from_slice(&v.to_le_bytes());
        }
        entries.push(TensorEntry {
            name: t.name.clone(),
            shape: t.shape.clone(),
            offset,
            len: t.data.len(),
        });
        offset += t.data.len();
    }
    let manifest = Manifest {
        format: CHECKPOINT_FORMAT.into(),
        version: 1,
        kind: ckpt.kind.clone(),
        step: ckpt.step,
        meta: ckpt.meta.clone(),
        blob: blob_path
            .file_name()
            .and_then(|n| n.to_str())
            .unwrap_or_default()
            .to_string(),
        tensors: entries,
    };
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| CodecError::Manifest(e.to_string()))?;
    fs::write(&blob_path, blob)?;
    fs::write(manifest_path, text + "\n")?;
    Ok(())
}

pub fn load_checkpoint(manifest_path: &Path) -> Result<Checkpoint, CodecError> {
    let text = fs::read_to_string(manifest_path)?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| CodecError::Manifest(e.to_string()))?;
    if manifest.format != CHECKPOINT_FORMAT || manifest.version != 1 {
        return Err(CodecError::Manifest(format!(
            "unsupported checkpoint {} v{}",
            manifest.format, manifest.version
        )));
    }
    let blob_path = manifest_path
        .parent()
        .unwrap_or_else(|| Path::new("."))
        .join(&manifest.blob);
    let blob = fs::read(&blob_path)?;
    let mut tensors = Vec::with_capacity(manifest.tensors.len());
    for e in manifest.tensors {
        let end = (e.offset + e.len) * 4;
        if end > blob.len() {
            return Err(CodecError::Truncated {
                expected: end,
                actual: blob.len(),
            });
        }
        if e.shape.iter().product::<usize>() != e.len {
            return Err(CodecError::Manifest(format!("tensor {} shape/len mismatch", e.name)));
        }
        let data = blob[e.offset * 4..end]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        tensors.push(TensorRecord {
            name: e.name,
            shape: e.shape,
            data,
        });
    }
    Ok(Checkpoint {
        kind: manifest.kind,
        step: manifest.step,
        meta: manifest.meta,
        tensors,
    })
}

/// Assembles a set from explicit per-Gaussian records (used by tests and
/// tools that build files by hand).
pub fn set_from_records<T: Real>(width: usize, height: usize, records: &[[f32; 8]]) -> GaussianSet<T> {
    let c = |v: f32| T::of(v as f64);
    GaussianSet::new(
        width,
        height,
        records
            .iter()
            .map(|r| {
                Gaussian2D::new(
                    [c(r[0]), c(r[1])],
                    [c(r[2]), c(r[3])],
                    c(r[4]),
                    [c(r[5]), c(r[6]), c(r[7])],
                )
            })
            .collect(),
    )
}
