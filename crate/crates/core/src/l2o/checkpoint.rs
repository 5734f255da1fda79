//! Flat binary checkpoint for [`L2OParams`].
//!
//! Layout, all integers and reals little-endian 64-bit:
//!
//! ```text
//! "L2O1"                      4-byte magic
//! hidden_size: u64
//! preprocess_p: f64
//! output_scale: f64
//! 6 x { rows: u64, cols: u64, rows*cols f64 row-major }
//! ```
//!
//! Tensors appear in [`TENSOR_NAMES`](super::TENSOR_NAMES) order:
//! `lstm1.weight, lstm1.bias, lstm2.weight, lstm2.bias, proj.weight, proj.bias`.

use std::fs;
use std::path::Path;

use super::{tensor_shapes, L2OParams, NUM_TENSORS};
use crate::autodiff::Matrix;
use crate::error::CheckpointError;

pub const MAGIC: &[u8; 4] = b"L2O1";

pub fn encode(phi: &L2OParams) -> Vec<u8> {
    let mut out = Vec::with_capacity(28 + 8 * (phi.num_params() + 2 * NUM_TENSORS));
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(phi.hidden() as u64).to_le_bytes());
    out.extend_from_slice(&phi.preprocess_p.to_le_bytes());
    out.extend_from_slice(&phi.output_scale.to_le_bytes());
    for t in phi.tensors() {
        out.extend_from_slice(&(t.rows() as u64).to_le_bytes());
        out.extend_from_slice(&(t.cols() as u64).to_le_bytes());
        for x in t.data() {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl Reader<'_> {
    fn word(&mut self) -> Result<[u8; 8], CheckpointError> {
        let b = self
            .bytes
            .get(self.at..self.at + 8)
            .ok_or(CheckpointError::Truncated)?;
        self.at += 8;
        Ok(b.try_into().expect("slice of length 8"))
    }

    fn u64(&mut self) -> Result<u64, CheckpointError> {
        self.word().map(u64::from_le_bytes)
    }

    fn f64(&mut self) -> Result<f64, CheckpointError> {
        self.word().map(f64::from_le_bytes)
    }
}

pub fn decode(bytes: &[u8]) -> Result<L2OParams, CheckpointError> {
    if bytes.len() < 4 {
        return Err(CheckpointError::Truncated);
    }
    if &bytes[..4] != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let mut r = Reader { bytes, at: 4 };
    let hidden = r.u64()? as usize;
    if hidden == 0 {
        return Err(CheckpointError::Shape {
            index: 0,
            expected: (1, 1),
            got: (0, 0),
        });
    }
    let preprocess_p = r.f64()?;
    let output_scale = r.f64()?;
    let shapes = tensor_shapes(hidden);
    let mut tensors: Vec<Matrix> = Vec::with_capacity(NUM_TENSORS);
    for (index, expected) in shapes.into_iter().enumerate() {
        let rows = r.u64()? as usize;
        let cols = r.u64()? as usize;
        if (rows, cols) != expected {
            return Err(CheckpointError::Shape {
                index,
                expected,
                got: (rows, cols),
            });
        }
        let data = (0..rows * cols)
            .map(|_| r.f64())
            .collect::<Result<_, _>>()?;
        tensors.push(Matrix::from_vec(rows, cols, data));
    }
    if r.at != bytes.len() {
        return Err(CheckpointError::Truncated);
    }
    let tensors: [Matrix; NUM_TENSORS] = tensors.try_into().expect("six tensors");
    L2OParams::from_tensors(hidden, preprocess_p, output_scale, tensors).map_err(
        |(index, expected, got)| CheckpointError::Shape {
            index,
            expected,
            got,
        },
    )
}

pub fn save(phi: &L2OParams, path: &Path) -> Result<(), CheckpointError> {
    fs::write(path, encode(phi)).map_err(|source| CheckpointError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load(path: &Path) -> Result<L2OParams, CheckpointError> {
    let bytes = fs::read(path).map_err(|source| CheckpointError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    decode(&bytes)
}
