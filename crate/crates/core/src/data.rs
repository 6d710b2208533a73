//! Dataset readers and image export.
//!
//! # IDX (MNIST)
//!
//! All header integers are big-endian `u32`.
//!
//! ```text
//! images: 0x00000803 | count | rows | cols | count*rows*cols bytes (row-major)
//! labels: 0x00000801 | count | count bytes, each in 0..=9
//! ```
//!
//! # CIFAR-10 binary
//!
//! A batch file is a sequence of 3073-byte records: one label byte, then
//! 1024 red, 1024 green and 1024 blue bytes, each plane row-major 32x32.
//! Planes map to input maps 0, 1, 2 in stored order.
//!
//! Files whose name ends in `.gz` are transparently gunzipped.
//!
//! # Graymap output
//!
//! [`write_grayscale_image`] writes binary PGM (`P5`, maxval 255). Counts are
//! rescaled linearly so the maximum count maps to 255 (`round(255·c/max)`);
//! an all-zero grid stays black.

use std::fs;
use std::io::Read;
use std::path::Path;

use flate2::read::GzDecoder;

use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::tensor::Shape3;

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;
pub const CIFAR_RECORD: usize = 1 + 3 * 1024;
pub const CLASSES: usize = 10;

/// A raw intensity image, channel planes stored consecutively.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Image {
    shape: Shape3,
    pixels: Vec<u8>,
}

impl Image {
    pub fn new(channels: usize, rows: usize, cols: usize, pixels: Vec<u8>) -> Result<Self> {
        let shape = Shape3::new(channels, rows, cols);
        if shape.is_empty() || pixels.len() != shape.len() {
            return Err(Error::shape(format!(
                "image {shape} needs {} pixels, got {}",
                shape.len(),
                pixels.len()
            )));
        }
        Ok(Image { shape, pixels })
    }

    pub fn shape(&self) -> Shape3 {
        self.shape
    }

    pub fn channels(&self) -> usize {
        self.shape.maps
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn channel(&self, c: usize) -> &[u8] {
        let p = self.shape.plane();
        &self.pixels[c * p..(c + 1) * p]
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dataset {
    images: Vec<Image>,
    labels: Vec<u8>,
}

impl Dataset {
    pub fn new(images: Vec<Image>, labels: Vec<u8>) -> Result<Self> {
        if images.len() != labels.len() {
            return Err(Error::shape(format!(
                "{} images but {} labels",
                images.len(),
                labels.len()
            )));
        }
        if let Some(first) = images.first() {
            if !matches!(first.channels(), 1 | 3) {
                return Err(Error::shape(format!("{} channels; expected 1 or 3", first.channels())));
            }
            if images.iter().any(|im| im.shape() != first.shape()) {
                return Err(Error::shape("images of mixed geometry"));
            }
        }
        if let Some(&bad) = labels.iter().find(|&&l| l as usize >= CLASSES) {
            return Err(Error::shape(format!("label {bad} out of range")));
        }
        Ok(Dataset { images, labels })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn images(&self) -> &[Image] {
        &self.images
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn get(&self, i: usize) -> Option<(&Image, u8)> {
        Some((self.images.get(i)?, *self.labels.get(i)?))
    }

    pub fn shape(&self) -> Option<Shape3> {
        self.images.first().map(Image::shape)
    }

    /// The first `n` items in stored order.
    pub fn head(&self, n: usize) -> Dataset {
        self.slice(0, n)
    }

    /// Items `start..end` in stored order, clamped to the dataset.
    pub fn slice(&self, start: usize, end: usize) -> Dataset {
        let end = end.min(self.len());
        let start = start.min(end);
        Dataset {
            images: self.images[start..end].to_vec(),
            labels: self.labels[start..end].to_vec(),
        }
    }
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    let raw = fs::read(path).map_err(|e| Error::io(path, e))?;
    if path.extension().is_some_and(|e| e == "gz") {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice())
            .read_to_end(&mut out)
            .map_err(|e| Error::format(path, format!("gzip: {e}")))?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn be_u32(bytes: &[u8], at: usize, path: &Path) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::format(path, "truncated header"))
}

/// Parse an IDX image file already in memory.
pub fn parse_idx_images(bytes: &[u8], path: &Path) -> Result<Vec<Image>> {
    let magic = be_u32(bytes, 0, path)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::format(path, format!("bad magic {magic:#010x}")));
    }
    let count = be_u32(bytes, 4, path)? as usize;
    let rows = be_u32(bytes, 8, path)? as usize;
    let cols = be_u32(bytes, 12, path)? as usize;
    if rows == 0 || cols == 0 {
        return Err(Error::format(path, "zero image dimension"));
    }
    let plane = rows
        .checked_mul(cols)
        .ok_or_else(|| Error::format(path, "image dimensions overflow"))?;
    let need = count
        .checked_mul(plane)
        .and_then(|n| n.checked_add(16))
        .ok_or_else(|| Error::format(path, "declared size overflows"))?;
    if bytes.len() < need {
        return Err(Error::format(
            path,
            format!(
                "truncated payload: header declares {count} images ({need} bytes), file has {}",
                bytes.len()
            ),
        ));
    }
    if bytes.len() > need {
        return Err(Error::format(path, format!("{} trailing bytes", bytes.len() - need)));
    }
    bytes[16..]
        .chunks_exact(plane)
        .map(|px| Image::new(1, rows, cols, px.to_vec()))
        .collect()
}

/// Parse an IDX label file already in memory.
pub fn parse_idx_labels(bytes: &[u8], path: &Path) -> Result<Vec<u8>> {
    let magic = be_u32(bytes, 0, path)?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::format(path, format!("bad magic {magic:#010x}")));
    }
    let count = be_u32(bytes, 4, path)? as usize;
    let body = &bytes[8..];
    if body.len() != count {
        return Err(Error::format(
            path,
            format!("header declares {count} labels, file has {}", body.len()),
        ));
    }
    if let Some(pos) = body.iter().position(|&l| l as usize >= CLASSES) {
        return Err(Error::format(
            path,
            format!("label {} at index {pos} out of range 0..=9", body[pos]),
        ));
    }
    Ok(body.to_vec())
}

/// Parse concatenated CIFAR-10 records.
pub fn parse_cifar10(bytes: &[u8], path: &Path) -> Result<(Vec<Image>, Vec<u8>)> {
    if bytes.is_empty() || bytes.len() % CIFAR_RECORD != 0 {
        return Err(Error::format(
            path,
            format!("size {} is not a positive multiple of {CIFAR_RECORD}", bytes.len()),
        ));
    }
    let mut images = Vec::with_capacity(bytes.len() / CIFAR_RECORD);
    let mut labels = Vec::with_capacity(images.capacity());
    for (i, rec) in bytes.chunks_exact(CIFAR_RECORD).enumerate() {
        if rec[0] as usize >= CLASSES {
            return Err(Error::format(
                path,
                format!("record {i}: label {} out of range", rec[0]),
            ));
        }
        labels.push(rec[0]);
        images.push(Image::new(3, 32, 32, rec[1..].to_vec())?);
    }
    Ok((images, labels))
}

pub fn read_idx_images(path: impl AsRef<Path>) -> Result<Vec<Image>> {
    let path = path.as_ref();
    parse_idx_images(&read_bytes(path)?, path)
}

pub fn read_idx_labels(path: impl AsRef<Path>) -> Result<Vec<u8>> {
    let path = path.as_ref();
    parse_idx_labels(&read_bytes(path)?, path)
}

/// Load an IDX image/label pair as one dataset.
pub fn read_idx_dataset(images: impl AsRef<Path>, labels: impl AsRef<Path>) -> Result<Dataset> {
    let imgs = read_idx_images(images.as_ref())?;
    let labs = read_idx_labels(labels.as_ref())?;
    if imgs.len() != labs.len() {
        return Err(Error::format(
            labels.as_ref(),
            format!("{} labels for {} images", labs.len(), imgs.len()),
        ));
    }
    Dataset::new(imgs, labs)
}

/// Load and concatenate CIFAR-10 batch files in the given order.
pub fn read_cifar10<P: AsRef<Path>>(paths: &[P]) -> Result<Dataset> {
    let mut images = Vec::new();
    let mut labels = Vec::new();
    for p in paths {
        let p = p.as_ref();
        let (im, lb) = parse_cifar10(&read_bytes(p)?, p)?;
        images.extend(im);
        labels.extend(lb);
    }
    Dataset::new(images, labels)
}

/// Deterministic shuffled prefix of size `n`.
pub fn take_subset(dataset: &Dataset, n: usize, seed: u64) -> Result<Dataset> {
    if n == 0 || n > dataset.len() {
        return Err(Error::InvalidParam(format!(
            "subset size {n} outside 1..={}",
            dataset.len()
        )));
    }
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    RngStream::new(seed).shuffle(&mut order);
    order.truncate(n);
    Ok(Dataset {
        images: order.iter().map(|&i| dataset.images[i].clone()).collect(),
        labels: order.iter().map(|&i| dataset.labels[i]).collect(),
    })
}

/// Linear rescale of counts to 0..=255 (max maps to 255).
pub fn rescale_counts(counts: &[u32]) -> Vec<u8> {
    let max = counts.iter().copied().max().unwrap_or(0);
    if max == 0 {
        return vec![0; counts.len()];
    }
    counts
        .iter()
        .map(|&c| ((c as f64) * 255.0 / max as f64).round() as u8)
        .collect()
}

/// Write a count grid as a binary PGM after linear rescale.
pub fn write_grayscale_image(counts: &[u32], rows: usize, cols: usize, path: impl AsRef<Path>) -> Result<()> {
    if counts.len() != rows * cols {
        return Err(Error::shape(format!(
            "{} counts for a {rows}x{cols} image",
            counts.len()
        )));
    }
    write_pgm(&rescale_counts(counts), rows, cols, path)
}

/// Write raw 0..=255 bytes as a binary PGM.
pub fn write_pgm(pixels: &[u8], rows: usize, cols: usize, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if pixels.len() != rows * cols {
        return Err(Error::shape(format!(
            "{} pixels for a {rows}x{cols} image",
            pixels.len()
        )));
    }
    let mut out = format!("P5\n{cols} {rows}\n255\n").into_bytes();
    out.extend_from_slice(pixels);
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Read a binary PGM written by [`write_pgm`]; returns `(rows, cols, pixels)`.
pub fn read_pgm(path: impl AsRef<Path>) -> Result<(usize, usize, Vec<u8>)> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::format(path, "truncated PGM header"));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    pos += 1;
    if fields[0] != "P5" || fields[3] != "255" {
        return Err(Error::format(path, "not an 8-bit binary PGM"));
    }
    let parse = |s: &str| s.parse::<usize>().map_err(|_| Error::format(path, "bad PGM dimension"));
    let (cols, rows) = (parse(&fields[1])?, parse(&fields[2])?);
    let body = bytes.get(pos..).unwrap_or(&[]);
    if body.len() != rows * cols {
        return Err(Error::format(path, "PGM payload size mismatch"));
    }
    Ok((rows, cols, body.to_vec()))
}
