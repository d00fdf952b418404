//! Strict parser for the big-endian IDX files used by MNIST.
//!
//! Images: magic `0x00000803`, count, rows, cols (all u32), then
//! `count * rows * cols` unsigned bytes. Labels: magic `0x00000801`, count,
//! then `count` unsigned bytes. Gzip is not handled here.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use super::Dataset;
use crate::error::{Error, Result};
use crate::matrix::Matrix;

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

const MNIST_CLASSES: usize = 10;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxImages {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    /// `count * rows * cols` pixels, image-major.
    pub pixels: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxLabels {
    pub labels: Vec<u8>,
}

fn format_err(offset: usize, reason: impl Into<String>) -> Error {
    Error::Format {
        offset,
        reason: reason.into(),
    }
}

fn read_u32(bytes: &[u8], offset: usize, field: &str) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| format_err(bytes.len(), format!("truncated header: missing {field}")))
}

fn check_magic(bytes: &[u8], want: u32, what: &str) -> Result<()> {
    let magic = read_u32(bytes, 0, "magic number")?;
    if magic != want {
        return Err(format_err(
            0,
            format!("bad magic 0x{magic:08x} for {what} file, expected 0x{want:08x}"),
        ));
    }
    Ok(())
}

fn body(bytes: &[u8], start: usize, len: usize) -> Result<&[u8]> {
    let end = start
        .checked_add(len)
        .ok_or_else(|| format_err(start, "declared payload size overflows"))?;
    if bytes.len() < end {
        return Err(format_err(
            bytes.len(),
            format!("truncated payload: expected {end} bytes, file has {}", bytes.len()),
        ));
    }
    if bytes.len() > end {
        return Err(format_err(
            end,
            format!("{} trailing bytes after payload", bytes.len() - end),
        ));
    }
    Ok(&bytes[start..end])
}

pub fn parse_images(bytes: &[u8]) -> Result<IdxImages> {
    check_magic(bytes, IMAGES_MAGIC, "images")?;
    let count = read_u32(bytes, 4, "image count")? as usize;
    let rows = read_u32(bytes, 8, "row count")? as usize;
    let cols = read_u32(bytes, 12, "column count")? as usize;
    let len = count
        .checked_mul(rows)
        .and_then(|v| v.checked_mul(cols))
        .ok_or_else(|| format_err(4, "image dimensions overflow"))?;
    let pixels = body(bytes, 16, len)?.to_vec();
    Ok(IdxImages {
        count,
        rows,
        cols,
        pixels,
    })
}

pub fn parse_labels(bytes: &[u8]) -> Result<IdxLabels> {
    check_magic(bytes, LABELS_MAGIC, "labels")?;
    let count = read_u32(bytes, 4, "label count")? as usize;
    let labels = body(bytes, 8, count)?.to_vec();
    Ok(IdxLabels { labels })
}

/// Builds an MNIST dataset: pixels scaled to `[0, 1]`, digits `0..=9` mapped
/// to labels `1..=10`, `M = 1`.
pub fn mnist_dataset(images_bytes: &[u8], labels_bytes: &[u8]) -> Result<Dataset> {
    let images = parse_images(images_bytes)?;
    let labels = parse_labels(labels_bytes)?;
    if labels.labels.len() != images.count {
        // offset of the count field in the labels file
        return Err(format_err(
            4,
            format!(
                "labels file holds {} entries but images file holds {}",
                labels.labels.len(),
                images.count
            ),
        ));
    }
    if images.count == 0 {
        return Err(format_err(4, "empty dataset"));
    }
    if let Some(i) = labels.labels.iter().position(|&l| l as usize >= MNIST_CLASSES) {
        return Err(format_err(8 + i, format!("label {} is not a digit", labels.labels[i])));
    }
    let d = images.rows * images.cols;
    let data = images.pixels.iter().map(|&p| f64::from(p) / 255.0).collect();
    let features = Matrix::new(images.count, d, data)?;
    let ys = labels.labels.iter().map(|&l| l as usize + 1).collect();
    Dataset::new(features, ys, MNIST_CLASSES, 1.0)
}

/// Serializes images in IDX layout. Used to produce fixtures.
pub fn encode_images(count: u32, rows: u32, cols: u32, pixels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + pixels.len());
    for v in [IMAGES_MAGIC, count, rows, cols] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend_from_slice(pixels);
    out
}

pub fn encode_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}
