use std::path::Path;

use super::{read_file, ImageDataset, Provenance, Split};
use crate::error::{Error, Result};

pub const IMAGE_MAGIC: u32 = 0x0000_0803;
pub const LABEL_MAGIC: u32 = 0x0000_0801;

fn format_err(path: &Path, offset: usize, message: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        offset: offset as u64,
        message: message.into(),
    }
}

fn be_u32(bytes: &[u8], offset: usize, path: &Path, what: &str) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| format_err(path, bytes.len(), format!("truncated header, missing {what}")))
}

fn check_magic(bytes: &[u8], path: &Path, expected: u32) -> Result<()> {
    let magic = be_u32(bytes, 0, path, "magic number")?;
    if magic != expected {
        return Err(format_err(
            path,
            0,
            format!("bad magic 0x{magic:08x}, expected 0x{expected:08x}"),
        ));
    }
    Ok(())
}

fn payload<'a>(bytes: &'a [u8], start: usize, len: usize, path: &Path) -> Result<&'a [u8]> {
    let end = start + len;
    if bytes.len() < end {
        return Err(format_err(
            path,
            bytes.len(),
            format!("truncated payload, expected {len} bytes from offset {start}"),
        ));
    }
    if bytes.len() > end {
        return Err(format_err(path, end, format!("{} trailing bytes", bytes.len() - end)));
    }
    Ok(&bytes[start..end])
}

/// Reads an IDX image file and its label file; pixels are scaled by 1/255.
pub fn load_mnist(images: &Path, labels: &Path) -> Result<ImageDataset> {
    let img = read_file(images)?;
    check_magic(&img, images, IMAGE_MAGIC)?;
    let count = be_u32(&img, 4, images, "image count")? as usize;
    let rows = be_u32(&img, 8, images, "row count")? as usize;
    let cols = be_u32(&img, 12, images, "column count")? as usize;
    if rows == 0 || cols == 0 {
        return Err(format_err(images, 8, format!("degenerate image size {rows}x{cols}")));
    }
    let raw = payload(&img, 16, count * rows * cols, images)?;

    let lab = read_file(labels)?;
    check_magic(&lab, labels, LABEL_MAGIC)?;
    let label_count = be_u32(&lab, 4, labels, "label count")? as usize;
    if label_count != count {
        return Err(format_err(
            labels,
            4,
            format!(
                "count mismatch: {label_count} labels for {count} images in {}",
                images.display()
            ),
        ));
    }
    let label_bytes = payload(&lab, 8, count, labels)?;
    if let Some(pos) = label_bytes.iter().position(|&l| l > 9) {
        return Err(format_err(
            labels,
            8 + pos,
            format!("label {} outside [0, 9]", label_bytes[pos]),
        ));
    }

    let pixels = raw.iter().map(|&b| b as f32 / 255.0).collect();
    ImageDataset::new(
        rows,
        cols,
        pixels,
        Some(label_bytes.to_vec()),
        Provenance::Mnist,
        Split::Train,
    )
}
