//! Reader for the big-endian IDX format used by MNIST.

use std::fs;
use std::path::Path;

use crate::error::OptimizeeError;

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Clone, PartialEq)]
pub struct IdxImages {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    /// Row-major pixels scaled to `[0, 1]`, one image after another.
    pub pixels: Vec<f64>,
}

fn bad(path: &Path, reason: impl Into<String>) -> OptimizeeError {
    OptimizeeError::Idx {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

fn read_u32(bytes: &[u8], at: usize) -> Option<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
}

fn read_file(path: &Path) -> Result<Vec<u8>, OptimizeeError> {
    fs::read(path).map_err(|source| OptimizeeError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn parse_images(bytes: &[u8], path: &Path) -> Result<IdxImages, OptimizeeError> {
    let magic = read_u32(bytes, 0).ok_or_else(|| bad(path, "missing header"))?;
    if magic != IMAGES_MAGIC {
        return Err(bad(path, format!("images magic {magic:#010x}")));
    }
    let dims: Vec<usize> = (0..3)
        .map(|i| read_u32(bytes, 4 + 4 * i).map(|v| v as usize))
        .collect::<Option<_>>()
        .ok_or_else(|| bad(path, "truncated header"))?;
    let (count, rows, cols) = (dims[0], dims[1], dims[2]);
    let body = &bytes[16..];
    if body.len() != count * rows * cols {
        return Err(bad(
            path,
            format!(
                "expected {} pixel bytes, found {}",
                count * rows * cols,
                body.len()
            ),
        ));
    }
    Ok(IdxImages {
        count,
        rows,
        cols,
        pixels: body.iter().map(|&b| f64::from(b) / 255.0).collect(),
    })
}

pub fn parse_labels(bytes: &[u8], path: &Path) -> Result<Vec<u8>, OptimizeeError> {
    let magic = read_u32(bytes, 0).ok_or_else(|| bad(path, "missing header"))?;
    if magic != LABELS_MAGIC {
        return Err(bad(path, format!("labels magic {magic:#010x}")));
    }
    let count = read_u32(bytes, 4).ok_or_else(|| bad(path, "truncated header"))? as usize;
    let body = &bytes[8..];
    if body.len() != count {
        return Err(bad(
            path,
            format!("expected {count} labels, found {}", body.len()),
        ));
    }
    Ok(body.to_vec())
}

pub fn read_images(path: &Path) -> Result<IdxImages, OptimizeeError> {
    parse_images(&read_file(path)?, path)
}

pub fn read_labels(path: &Path) -> Result<Vec<u8>, OptimizeeError> {
    parse_labels(&read_file(path)?, path)
}
