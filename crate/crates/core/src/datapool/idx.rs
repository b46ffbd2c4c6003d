//! IDX container reader (the MNIST family): big-endian magic, big-endian
//! u32 dimensions, then unsigned bytes.

use std::io::Read;

use crate::error::{Error, Result};

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Clone, PartialEq)]
pub struct IdxImages {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    /// Pixels divided by 255, one row-major image after another.
    pub pixels: Vec<f32>,
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf).map_err(|e| Error::format("idx", format!("truncated header: {e}")))?;
    Ok(u32::from_be_bytes(buf))
}

fn read_payload(r: &mut impl Read, len: usize) -> Result<Vec<u8>> {
    let mut data = vec![0u8; len];
    r.read_exact(&mut data)
        .map_err(|_| Error::format("idx", format!("payload shorter than the {len} bytes the header declares")))?;
    Ok(data)
}

pub fn read_images(mut r: impl Read) -> Result<IdxImages> {
    let magic = read_u32(&mut r)?;
    if magic != IMAGES_MAGIC {
        return Err(Error::format("idx", format!("image magic {magic:#010x}, expected {IMAGES_MAGIC:#010x}")));
    }
    let count = read_u32(&mut r)? as usize;
    let rows = read_u32(&mut r)? as usize;
    let cols = read_u32(&mut r)? as usize;
    let bytes = read_payload(&mut r, count * rows * cols)?;
    Ok(IdxImages { count, rows, cols, pixels: bytes.into_iter().map(|b| b as f32 / 255.0).collect() })
}

pub fn read_labels(mut r: impl Read) -> Result<Vec<u8>> {
    let magic = read_u32(&mut r)?;
    if magic != LABELS_MAGIC {
        return Err(Error::format("idx", format!("label magic {magic:#010x}, expected {LABELS_MAGIC:#010x}")));
    }
    let count = read_u32(&mut r)? as usize;
    read_payload(&mut r, count)
}

/// Encodes raw bytes as an IDX image file. Used by tests and the synthetic
/// dataset exporter.
pub fn write_images(count: usize, rows: usize, cols: usize, bytes: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + bytes.len());
    for v in [IMAGES_MAGIC, count as u32, rows as u32, cols as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend_from_slice(bytes);
    out
}

pub fn write_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_count_drives_record_count() {
        let bytes = write_images(3, 2, 2, &[0, 255, 51, 102, 0, 0, 0, 0, 255, 255, 255, 255]);
        let imgs = read_images(&bytes[..]).unwrap();
        assert_eq!((imgs.count, imgs.rows, imgs.cols), (3, 2, 2));
        assert_eq!(imgs.pixels[1], 1.0);
        assert!((imgs.pixels[2] - 0.2).abs() < 1e-7);
    }

    #[test]
    fn wrong_magic_is_format_error() {
        let mut bytes = write_labels(&[1, 2]);
        bytes[3] = 0x03;
        assert!(matches!(read_labels(&bytes[..]), Err(Error::Format { .. })));
    }

    #[test]
    fn truncated_payload_is_format_error() {
        let bytes = write_images(2, 2, 2, &[0; 5]);
        assert!(matches!(read_images(&bytes[..]), Err(Error::Format { .. })));
    }
}
