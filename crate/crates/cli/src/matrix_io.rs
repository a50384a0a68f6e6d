//! Row-major `f64` matrix files.
//!
//! Layout, all little-endian:
//!
//! ```text
//! bytes 0..6    magic "FMONO\0"
//! bytes 6..8    reserved, zero
//! bytes 8..12   u32 rows
//! bytes 12..16  u32 cols
//! bytes 16..    rows·cols f64 values, row-major
//! ```

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DMatrix;

use crate::report::write_atomic;

pub const MAGIC: &[u8; 6] = b"FMONO\0";
pub const HEADER_LEN: usize = 16;

#[derive(Debug, thiserror::Error)]
pub enum MatrixFileError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad magic bytes")]
    BadMagic,
    #[error("matrix dimension {0} does not fit in u32")]
    TooLarge(usize),
    #[error("body has {got} bytes, header promises {expected}")]
    Truncated { expected: usize, got: usize },
}

pub fn encode(m: &DMatrix<f64>) -> Result<Vec<u8>, MatrixFileError> {
    let rows = u32::try_from(m.nrows()).map_err(|_| MatrixFileError::TooLarge(m.nrows()))?;
    let cols = u32::try_from(m.ncols()).map_err(|_| MatrixFileError::TooLarge(m.ncols()))?;
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * m.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&[0, 0]);
    out.extend_from_slice(&rows.to_le_bytes());
    out.extend_from_slice(&cols.to_le_bytes());
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            out.extend_from_slice(&m[(i, j)].to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode(bytes: &[u8]) -> Result<DMatrix<f64>, MatrixFileError> {
    if bytes.len() < HEADER_LEN || &bytes[..6] != MAGIC {
        return Err(MatrixFileError::BadMagic);
    }
    let rows = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
    let cols = u32::from_le_bytes(bytes[12..16].try_into().expect("4 bytes")) as usize;
    let body = &bytes[HEADER_LEN..];
    let expected = rows * cols * 8;
    if body.len() != expected {
        return Err(MatrixFileError::Truncated {
            expected,
            got: body.len(),
        });
    }
    let values: Vec<f64> = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    Ok(DMatrix::from_row_slice(rows, cols, &values))
}

pub fn write_matrix(path: &Path, m: &DMatrix<f64>) -> Result<(), MatrixFileError> {
    let bytes = encode(m)?;
    write_atomic(path, |w: &mut dyn Write| w.write_all(&bytes))?;
    Ok(())
}

pub fn read_matrix(path: &Path) -> Result<DMatrix<f64>, MatrixFileError> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    decode(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_is_sixteen_bytes() {
        let m = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let bytes = encode(&m).unwrap();
        assert_eq!(bytes.len(), 16 + 48);
        assert_eq!(&bytes[..6], b"FMONO\0");
        assert_eq!(&bytes[8..12], &2u32.to_le_bytes());
        assert_eq!(&bytes[12..16], &3u32.to_le_bytes());
        // row-major: second value is m[(0, 1)]
        assert_eq!(&bytes[24..32], &2.0f64.to_le_bytes());
        assert_eq!(decode(&bytes).unwrap(), m);
    }

    #[test]
    fn rejects_corrupt_input() {
        assert!(matches!(decode(b"nope"), Err(MatrixFileError::BadMagic)));
        let mut bytes = encode(&DMatrix::zeros(2, 2)).unwrap();
        bytes.pop();
        assert!(matches!(decode(&bytes), Err(MatrixFileError::Truncated { .. })));
    }
}
