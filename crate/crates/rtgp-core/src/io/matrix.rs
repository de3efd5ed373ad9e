//! RTGPMAT1: dense 64-bit float matrices on disk. Layout is an 8-byte magic,
//! row and column counts as unsigned 64-bit little-endian, then the row-major
//! payload of little-endian doubles; the header is exactly 24 bytes.

use std::fs;
use std::path::Path;

use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"RTGPMAT1";
pub const HEADER_LEN: usize = 24;

fn format_err(offset: u64, message: impl Into<String>) -> Error {
    Error::Format { offset, message: message.into() }
}

pub fn write_matrix(path: &Path, matrix: ArrayView2<'_, f64>) -> Result<()> {
    let (rows, cols) = matrix.dim();
    let cells = (rows as u64)
        .checked_mul(cols as u64)
        .and_then(|c| c.checked_mul(8))
        .ok_or_else(|| format_err(8, "matrix dimensions overflow the payload size"))?;
    let mut bytes = Vec::with_capacity(HEADER_LEN + cells as usize);
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&(rows as u64).to_le_bytes());
    bytes.extend_from_slice(&(cols as u64).to_le_bytes());
    for row in matrix.rows() {
        for &v in row {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    super::atomic_write(path, &bytes)
}

pub fn read_matrix(path: &Path) -> Result<Array2<f64>> {
    let bytes = fs::read(path)?;
    decode_matrix(&bytes)
}

fn decode_matrix(bytes: &[u8]) -> Result<Array2<f64>> {
    if bytes.len() < HEADER_LEN {
        return Err(format_err(
            bytes.len() as u64,
            format!("file ends inside the {HEADER_LEN}-byte header"),
        ));
    }
    if &bytes[..8] != MAGIC {
        return Err(format_err(0, "bad magic; expected RTGPMAT1"));
    }
    let rows = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes"));
    let cols = u64::from_le_bytes(bytes[16..24].try_into().expect("8 bytes"));
    let payload = rows
        .checked_mul(cols)
        .and_then(|c| c.checked_mul(8))
        .filter(|&p| p <= u64::MAX - HEADER_LEN as u64)
        .ok_or_else(|| format_err(8, format!("{rows} x {cols} matrix overflows the payload size")))?;
    let expected = HEADER_LEN as u64 + payload;
    let actual = bytes.len() as u64;
    if actual < expected {
        return Err(format_err(
            actual,
            format!("payload truncated: {actual} bytes on disk, {expected} expected for {rows} x {cols}"),
        ));
    }
    if actual > expected {
        return Err(format_err(expected, format!("{} trailing bytes after the payload", actual - expected)));
    }
    let data: Vec<f64> = bytes[HEADER_LEN..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    Array2::from_shape_vec((rows as usize, cols as usize), data)
        .map_err(|e| format_err(HEADER_LEN as u64, e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn encode(matrix: ArrayView2<'_, f64>) -> Vec<f64> {
        matrix.iter().copied().collect()
    }

    #[test]
    fn header_is_exactly_24_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.rtgp");
        write_matrix(&path, Array2::<f64>::zeros((2, 3)).view()).unwrap();
        let bytes = fs::read(&path).unwrap();
        assert_eq!(bytes.len(), HEADER_LEN + 2 * 3 * 8);
        assert_eq!(&bytes[..8], MAGIC);
        assert_eq!(u64::from_le_bytes(bytes[8..16].try_into().unwrap()), 2);
        assert_eq!(u64::from_le_bytes(bytes[16..24].try_into().unwrap()), 3);
    }

    #[test]
    fn payload_is_row_major_little_endian() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.rtgp");
        let m = ndarray::array![[1.0, 2.0], [3.0, 4.0]];
        write_matrix(&path, m.view()).unwrap();
        let bytes = fs::read(&path).unwrap();
        let vals: Vec<f64> = bytes[HEADER_LEN..]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        assert_eq!(vals, encode(m.view()));
    }

    #[test]
    fn non_contiguous_views_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.rtgp");
        let m = Array2::from_shape_fn((4, 4), |(i, j)| (i * 4 + j) as f64);
        let view = m.slice(ndarray::s![.., ..;2]);
        write_matrix(&path, view).unwrap();
        assert_eq!(read_matrix(&path).unwrap(), view.to_owned());
    }
}
