//! IDX container used by the MNIST distribution.
//!
//! Layout (all integers big-endian `u32`):
//!
//! ```text
//! images: magic 0x00000803 | count | rows | cols | count*rows*cols u8
//! labels: magic 0x00000801 | count | count u8
//! ```
//!
//! Readers accept raw or gzip-wrapped streams (detected by the `1f 8b`
//! prefix). Bytes past the declared payload are tolerated and reported.

use std::io::{self, Read, Write};

use flate2::read::GzDecoder;
use thiserror::Error;

use crate::error::{Error, Result};
use crate::image::GrayImage;

pub const IMAGE_MAGIC: u32 = 0x0000_0803;
pub const LABEL_MAGIC: u32 = 0x0000_0801;
const GZIP_PREFIX: [u8; 2] = [0x1f, 0x8b];

#[derive(Debug, Error)]
pub enum IdxError {
    #[error("bad magic number: expected {expected:#010x}, found {found:#010x}")]
    BadMagic { expected: u32, found: u32 },
    #[error("truncated IDX stream: needed {needed} bytes, found {available}")]
    Truncated { needed: usize, available: usize },
    #[error("invalid IDX header: {0}")]
    InvalidHeader(String),
    #[error("label {value} at index {index} is outside 0..=9")]
    LabelOutOfRange { index: usize, value: u8 },
    #[error("I/O error: {0}")]
    Io(#[from] io::Error),
}

/// An ordered collection of equally sized images.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageSet {
    rows: usize,
    cols: usize,
    images: Vec<GrayImage>,
}

impl ImageSet {
    pub fn new(rows: usize, cols: usize, images: Vec<GrayImage>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::invalid("image set dimensions must be positive"));
        }
        if let Some(img) = images.iter().find(|i| i.dims() != (rows, cols)) {
            return Err(Error::DimMismatch {
                left: (rows, cols),
                right: img.dims(),
            });
        }
        Ok(Self { rows, cols, images })
    }

    /// Builds a set from a non-empty list, taking dims from the first image.
    pub fn from_images(images: Vec<GrayImage>) -> Result<Self> {
        let (rows, cols) = images
            .first()
            .map(GrayImage::dims)
            .ok_or_else(|| Error::invalid("cannot infer dims of an empty image list"))?;
        Self::new(rows, cols, images)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn images(&self) -> &[GrayImage] {
        &self.images
    }

    pub fn get(&self, i: usize) -> Option<&GrayImage> {
        self.images.get(i)
    }

    pub fn into_images(self) -> Vec<GrayImage> {
        self.images
    }

    /// Subset in the order given by `indices`.
    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            images: indices.iter().map(|&i| self.images[i].clone()).collect(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct LabelSet {
    labels: Vec<u8>,
}

impl LabelSet {
    pub fn new(labels: Vec<u8>) -> Self {
        Self { labels }
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        }
    }
}

/// A decoded value plus the number of bytes found after its payload.
#[derive(Clone, Debug)]
pub struct Decoded<T> {
    pub value: T,
    pub trailing_bytes: usize,
}

fn slurp<R: Read>(mut r: R) -> Result<Vec<u8>, IdxError> {
    let mut raw = Vec::new();
    r.read_to_end(&mut raw)?;
    if raw.starts_with(&GZIP_PREFIX) {
        let mut out = Vec::new();
        GzDecoder::new(&raw[..]).read_to_end(&mut out)?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn be_u32(buf: &[u8], at: usize) -> Result<u32, IdxError> {
    buf.get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or(IdxError::Truncated {
            needed: at + 4,
            available: buf.len(),
        })
}

fn check_magic(found: u32, expected: u32) -> Result<(), IdxError> {
    if found == expected {
        Ok(())
    } else {
        Err(IdxError::BadMagic { expected, found })
    }
}

fn payload(buf: &[u8], header: usize, len: usize) -> Result<(&[u8], usize), IdxError> {
    let end = header
        .checked_add(len)
        .ok_or_else(|| IdxError::InvalidHeader("declared payload size overflows".to_string()))?;
    if buf.len() < end {
        return Err(IdxError::Truncated {
            needed: end,
            available: buf.len(),
        });
    }
    Ok((&buf[header..end], buf.len() - end))
}

/// Reads an image file, returning the set and the trailing byte count.
pub fn read_images_detailed<R: Read>(r: R) -> Result<Decoded<ImageSet>, IdxError> {
    let buf = slurp(r)?;
    check_magic(be_u32(&buf, 0)?, IMAGE_MAGIC)?;
    let count = be_u32(&buf, 4)? as usize;
    let rows = be_u32(&buf, 8)? as usize;
    let cols = be_u32(&buf, 12)? as usize;
    if rows == 0 || cols == 0 {
        return Err(IdxError::InvalidHeader(format!("image dimensions {rows}x{cols}")));
    }
    let per_image = rows
        .checked_mul(cols)
        .ok_or_else(|| IdxError::InvalidHeader("image size overflows".to_string()))?;
    let total = count
        .checked_mul(per_image)
        .ok_or_else(|| IdxError::InvalidHeader("payload size overflows".to_string()))?;
    let (data, trailing_bytes) = payload(&buf, 16, total)?;
    let images = data
        .chunks_exact(per_image)
        .map(|chunk| GrayImage::from_bytes(cols, rows, chunk).expect("chunk length matches image size"))
        .collect();
    Ok(Decoded {
        value: ImageSet { rows, cols, images },
        trailing_bytes,
    })
}

/// Reads an image file; trailing bytes are logged as a warning.
pub fn read_images<R: Read>(r: R) -> Result<ImageSet, IdxError> {
    let decoded = read_images_detailed(r)?;
    if decoded.trailing_bytes > 0 {
        log::warn!(
            "ignoring {} trailing bytes after IDX image payload",
            decoded.trailing_bytes
        );
    }
    Ok(decoded.value)
}

pub fn write_images<W: Write>(set: &ImageSet, mut w: W) -> Result<(), IdxError> {
    let count = u32::try_from(set.len()).map_err(|_| IdxError::InvalidHeader("too many images".to_string()))?;
    let mut header = Vec::with_capacity(16);
    header.extend_from_slice(&IMAGE_MAGIC.to_be_bytes());
    header.extend_from_slice(&count.to_be_bytes());
    header.extend_from_slice(&(set.rows as u32).to_be_bytes());
    header.extend_from_slice(&(set.cols as u32).to_be_bytes());
    w.write_all(&header)?;
    for img in &set.images {
        w.write_all(&img.to_bytes())?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a label file. With `mnist` set, any label above 9 is an error.
pub fn read_labels_detailed<R: Read>(r: R, mnist: bool) -> Result<Decoded<LabelSet>, IdxError> {
    let buf = slurp(r)?;
    check_magic(be_u32(&buf, 0)?, LABEL_MAGIC)?;
    let count = be_u32(&buf, 4)? as usize;
    let (data, trailing_bytes) = payload(&buf, 8, count)?;
    if mnist {
        if let Some((index, &value)) = data.iter().enumerate().find(|(_, &v)| v > 9) {
            return Err(IdxError::LabelOutOfRange { index, value });
        }
    }
    Ok(Decoded {
        value: LabelSet::new(data.to_vec()),
        trailing_bytes,
    })
}

pub fn read_labels<R: Read>(r: R, mnist: bool) -> Result<LabelSet, IdxError> {
    let decoded = read_labels_detailed(r, mnist)?;
    if decoded.trailing_bytes > 0 {
        log::warn!(
            "ignoring {} trailing bytes after IDX label payload",
            decoded.trailing_bytes
        );
    }
    Ok(decoded.value)
}

pub fn write_labels<W: Write>(set: &LabelSet, mut w: W) -> Result<(), IdxError> {
    let count = u32::try_from(set.len()).map_err(|_| IdxError::InvalidHeader("too many labels".to_string()))?;
    w.write_all(&LABEL_MAGIC.to_be_bytes())?;
    w.write_all(&count.to_be_bytes())?;
    w.write_all(&set.labels)?;
    w.flush()?;
    Ok(())
}
