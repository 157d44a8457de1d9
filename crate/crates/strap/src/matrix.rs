//! Dense row-major `f32` matrices backing trajectory payloads.
//!
//! Kept deliberately minimal: the engine only ever reads rows as slices,
//! slices row ranges, and round-trips raw little-endian bytes.

use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MatrixError {
    #[error("data length {found} does not match {rows}x{cols}")]
    DataLength {
        rows: usize,
        cols: usize,
        found: usize,
    },
    #[error("byte length {0} is not a multiple of 4")]
    ByteLength(usize),
}

/// Row-major `f32` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f32>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f32>) -> Result<Self, MatrixError> {
        if data.len() != rows * cols {
            return Err(MatrixError::DataLength {
                rows,
                cols,
                found: data.len(),
            });
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f32>]) -> Result<Self, MatrixError> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(MatrixError::DataLength {
                    rows: rows.len(),
                    cols,
                    found: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Ok(Matrix {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f32 {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f32) {
        self.data[i * self.cols + j] = v;
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    /// Borrowed view of rows `start..end`; no copy.
    pub fn view_rows(&self, start: usize, end: usize) -> RowsView<'_> {
        assert!(start <= end && end <= self.rows, "row range out of bounds");
        RowsView {
            data: &self.data[start * self.cols..end * self.cols],
            rows: end - start,
            cols: self.cols,
        }
    }

    pub fn view(&self) -> RowsView<'_> {
        self.view_rows(0, self.rows)
    }

    /// Owned copy of rows `start..end` (used when materializing slices).
    pub fn copy_rows(&self, start: usize, end: usize) -> Matrix {
        assert!(start <= end && end <= self.rows, "row range out of bounds");
        Matrix {
            rows: end - start,
            cols: self.cols,
            data: self.data[start * self.cols..end * self.cols].to_vec(),
        }
    }

    pub fn has_non_finite(&self) -> bool {
        self.data.iter().any(|v| !v.is_finite())
    }

    /// Raw little-endian encoding, row-major, no header.
    pub fn to_le_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.data.len() * 4);
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    /// Decodes little-endian bytes; the caller checks the element count
    /// against the expected shape.
    pub fn from_le_bytes(rows: usize, cols: usize, bytes: &[u8]) -> Result<Self, MatrixError> {
        if !bytes.len().is_multiple_of(4) {
            return Err(MatrixError::ByteLength(bytes.len()));
        }
        let data: Vec<f32> = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Matrix::from_vec(rows, cols, data)
    }
}

/// Zero-copy view over a contiguous row range of a [`Matrix`].
#[derive(Debug, Clone, Copy)]
pub struct RowsView<'a> {
    data: &'a [f32],
    rows: usize,
    cols: usize,
}

impl<'a> RowsView<'a> {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn row(&self, i: usize) -> &'a [f32] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips_bytes() {
        let m = Matrix::from_vec(2, 3, vec![1.0, -2.5, 0.0, 3.25, f32::MIN, f32::MAX]).unwrap();
        let bytes = m.to_le_bytes();
        let back = Matrix::from_le_bytes(2, 3, &bytes).unwrap();
        assert_eq!(m, back);
        assert_eq!(bytes, back.to_le_bytes());
    }

    #[test]
    fn rejects_partial_floats() {
        assert_eq!(
            Matrix::from_le_bytes(1, 1, &[0, 0, 0, 0, 7]),
            Err(MatrixError::ByteLength(5))
        );
    }

    #[test]
    fn views_share_rows() {
        let m = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]]).unwrap();
        let v = m.view_rows(1, 3);
        assert_eq!(v.rows(), 2);
        assert_eq!(v.row(0), &[3.0, 4.0]);
        assert_eq!(v.row(1), &[5.0, 6.0]);
        assert_eq!(m.copy_rows(1, 2).data(), &[3.0, 4.0]);
    }
}
