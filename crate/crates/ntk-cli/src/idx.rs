//! Reader and writer for the IDX binary container used by classic image
//! datasets: a big-endian magic word, big-endian `u32` dimensions, then raw
//! unsigned bytes. Pixels are mapped to `[0, 1]` grayscale on read and
//! quantized back to bytes on write.

use anyhow::{bail, Context, Result};
use ntk_core::ImageSignal;
use std::fs;
use std::path::Path;

/// Magic word of an IDX file holding a rank-3 tensor of unsigned bytes
/// (image stacks).
pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
/// Magic word of an IDX file holding a rank-1 tensor of unsigned bytes
/// (label vectors).
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// An image corpus paired with its labels, loaded from a pair of IDX files.
#[derive(Debug, Clone)]
pub struct MnistCorpus {
    images: Vec<ImageSignal>,
    labels: Vec<u8>,
}

impl MnistCorpus {
    /// Load images and labels from IDX files, checking that the counts
    /// agree.
    pub fn load(images_path: &Path, labels_path: &Path) -> Result<Self> {
        let images = read_idx_images(images_path)?;
        let labels = read_idx_labels(labels_path)?;
        if images.len() != labels.len() {
            bail!(
                "image/label count mismatch: {} images in {} but {} labels in {}",
                images.len(),
                images_path.display(),
                labels.len(),
                labels_path.display()
            );
        }
        Ok(Self { images, labels })
    }

    /// Pair already-loaded images and labels, checking that the counts
    /// agree.
    pub fn from_parts(images: Vec<ImageSignal>, labels: Vec<u8>) -> Result<Self> {
        if images.len() != labels.len() {
            bail!("image/label count mismatch: {} images, {} labels", images.len(), labels.len());
        }
        Ok(Self { images, labels })
    }

    pub fn images(&self) -> &[ImageSignal] {
        &self.images
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }
}

fn read_u32_be(bytes: &[u8], offset: usize, what: &str, path: &Path) -> Result<u32> {
    let end = offset + 4;
    if bytes.len() < end {
        bail!(
            "truncated IDX file {}: need {} bytes for {}, found {}",
            path.display(),
            end,
            what,
            bytes.len()
        );
    }
    Ok(u32::from_be_bytes([
        bytes[offset],
        bytes[offset + 1],
        bytes[offset + 2],
        bytes[offset + 3],
    ]))
}

/// Read a stack of grayscale images from an IDX file. Every byte pixel is
/// scaled to `[0, 1]`, producing single-channel signals.
pub fn read_idx_images(path: &Path) -> Result<Vec<ImageSignal>> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    let magic = read_u32_be(&bytes, 0, "magic word", path)?;
    if magic != IDX_IMAGES_MAGIC {
        bail!(
            "{} is not an IDX image file: magic 0x{magic:08x}, expected 0x{IDX_IMAGES_MAGIC:08x}",
            path.display()
        );
    }
    let count = read_u32_be(&bytes, 4, "image count", path)? as usize;
    let rows = read_u32_be(&bytes, 8, "row count", path)? as usize;
    let cols = read_u32_be(&bytes, 12, "column count", path)? as usize;
    let expected = 16 + count * rows * cols;
    if bytes.len() != expected {
        bail!(
            "truncated IDX image file {}: {} images of {}x{} need {} bytes, found {}",
            path.display(),
            count,
            rows,
            cols,
            expected,
            bytes.len()
        );
    }
    let mut images = Vec::with_capacity(count);
    for i in 0..count {
        let start = 16 + i * rows * cols;
        let data = bytes[start..start + rows * cols]
            .iter()
            .map(|&b| f64::from(b) / 255.0)
            .collect();
        images.push(
            ImageSignal::from_gray(rows, cols, data)
                .map_err(|e| anyhow::anyhow!("image {i} in {}: {e}", path.display()))?,
        );
    }
    Ok(images)
}

/// Read a label vector from an IDX file.
pub fn read_idx_labels(path: &Path) -> Result<Vec<u8>> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    let magic = read_u32_be(&bytes, 0, "magic word", path)?;
    if magic != IDX_LABELS_MAGIC {
        bail!(
            "{} is not an IDX label file: magic 0x{magic:08x}, expected 0x{IDX_LABELS_MAGIC:08x}",
            path.display()
        );
    }
    let count = read_u32_be(&bytes, 4, "label count", path)? as usize;
    let expected = 8 + count;
    if bytes.len() != expected {
        bail!(
            "truncated IDX label file {}: {} labels need {} bytes, found {}",
            path.display(),
            count,
            expected,
            bytes.len()
        );
    }
    Ok(bytes[8..].to_vec())
}

/// Write single-channel images as an IDX byte file, quantizing each pixel
/// with `round(v * 255)` clamped to `[0, 255]`. All images must share one
/// shape and have one channel.
pub fn write_idx_images(path: &Path, images: &[ImageSignal]) -> Result<()> {
    let (rows, cols) = match images.first() {
        Some(img) => (img.height(), img.width()),
        None => bail!("refusing to write an IDX image file with zero images"),
    };
    let mut bytes = Vec::with_capacity(16 + images.len() * rows * cols);
    bytes.extend_from_slice(&IDX_IMAGES_MAGIC.to_be_bytes());
    bytes.extend_from_slice(&(images.len() as u32).to_be_bytes());
    bytes.extend_from_slice(&(rows as u32).to_be_bytes());
    bytes.extend_from_slice(&(cols as u32).to_be_bytes());
    for (i, img) in images.iter().enumerate() {
        if img.height() != rows || img.width() != cols || img.channels() != 1 {
            bail!(
                "image {i} has shape {}x{}x{}, expected {rows}x{cols}x1",
                img.height(),
                img.width(),
                img.channels()
            );
        }
        bytes.extend(
            img.data()
                .iter()
                .map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8),
        );
    }
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

/// Write labels as an IDX byte file.
pub fn write_idx_labels(path: &Path, labels: &[u8]) -> Result<()> {
    let mut bytes = Vec::with_capacity(8 + labels.len());
    bytes.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    bytes.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    bytes.extend_from_slice(labels);
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}
