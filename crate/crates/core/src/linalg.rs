//! Minimal dense linear algebra: multiplication, block stacking, and norms.
//!
//! Everything is `f64`, row-major, and immutable once built. Sizes here are
//! desk scale (hundreds of rows/columns), so multiplication is the plain
//! triple loop and there is no BLAS behind it.

use crate::error::{Error, Result};

/// Dense row-major matrix of 64-bit reals.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    /// All-zero matrix.
    pub fn zeros(rows: usize, cols: usize) -> Matrix {
        assert!(rows > 0 && cols > 0, "matrix dimensions must be positive");
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    /// Identity matrix of order `n`.
    pub fn identity(n: usize) -> Matrix {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    /// Builds a matrix from row-major data, rejecting length mismatches and
    /// non-finite entries.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Matrix> {
        if rows == 0 || cols == 0 {
            return Err(Error::Validation(format!(
                "matrix dimensions must be positive, got {rows}x{cols}"
            )));
        }
        if data.len() != rows * cols {
            return Err(Error::Validation(format!(
                "matrix data length {} does not equal {rows}x{cols}",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Validation(format!(
                "matrix entry at flat index {pos} is not finite"
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    /// Builds a matrix from nested row slices (test and fixture convenience).
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Matrix> {
        if rows.is_empty() {
            return Err(Error::EmptyInput { op: "from_rows" });
        }
        let cols = rows[0].len();
        let mut data = Vec::with_capacity(rows.len() * cols);
        for row in rows {
            if row.len() != cols {
                return Err(Error::Validation(format!(
                    "ragged rows: expected {cols} columns, found {}",
                    row.len()
                )));
            }
            data.extend_from_slice(row);
        }
        Matrix::from_vec(rows.len(), cols, data)
    }

    /// Outer product of a column vector and a row vector.
    pub fn outer(col: &[f64], row: &[f64]) -> Matrix {
        let mut m = Matrix::zeros(col.len(), row.len());
        for (i, &c) in col.iter().enumerate() {
            for (j, &r) in row.iter().enumerate() {
                m.data[i * row.len() + j] = c * r;
            }
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    /// Row-major backing slice.
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        debug_assert!(i < self.rows && j < self.cols);
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        debug_assert!(i < self.rows && j < self.cols);
        self.data[i * self.cols + j] = v;
    }

    /// Borrow row `i` as a slice.
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    /// Standard matrix product `self * rhs`.
    pub fn matmul(&self, rhs: &Matrix) -> Result<Matrix> {
        if self.cols != rhs.rows {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                left_rows: self.rows,
                left_cols: self.cols,
                right_rows: rhs.rows,
                right_cols: rhs.cols,
            });
        }
        let mut out = Matrix::zeros(self.rows, rhs.cols);
        // i-j-k order streams over rhs rows, which keeps the inner loop contiguous.
        for i in 0..self.rows {
            for j in 0..self.cols {
                let a = self.data[i * self.cols + j];
                if a == 0.0 {
                    continue;
                }
                let rrow = &rhs.data[j * rhs.cols..(j + 1) * rhs.cols];
                let orow = &mut out.data[i * rhs.cols..(i + 1) * rhs.cols];
                for (o, &r) in orow.iter_mut().zip(rrow) {
                    *o += a * r;
                }
            }
        }
        Ok(out)
    }

    /// Matrix-vector product `self * x`.
    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if self.cols != x.len() {
            return Err(Error::ShapeMismatch {
                op: "matvec",
                left_rows: self.rows,
                left_cols: self.cols,
                right_rows: x.len(),
                right_cols: 1,
            });
        }
        Ok((0..self.rows)
            .map(|i| dot(self.row(i), x))
            .collect())
    }

    /// Every entry multiplied by `s`.
    pub fn scale(&self, s: f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }

    /// Copy of rows `[start, end)`.
    pub fn slice_rows(&self, start: usize, end: usize) -> Matrix {
        assert!(start < end && end <= self.rows);
        Matrix {
            rows: end - start,
            cols: self.cols,
            data: self.data[start * self.cols..end * self.cols].to_vec(),
        }
    }

    /// Copy of columns `[start, end)`.
    pub fn slice_cols(&self, start: usize, end: usize) -> Matrix {
        assert!(start < end && end <= self.cols);
        let mut data = Vec::with_capacity(self.rows * (end - start));
        for i in 0..self.rows {
            data.extend_from_slice(&self.data[i * self.cols + start..i * self.cols + end]);
        }
        Matrix {
            rows: self.rows,
            cols: end - start,
            data,
        }
    }

    /// Square root of the sum of squared entries.
    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Vertical stacking: blocks become consecutive row ranges of the result.
pub fn stack_rows(blocks: &[Matrix]) -> Result<Matrix> {
    let first = blocks.first().ok_or(Error::EmptyInput { op: "stack_rows" })?;
    let cols = first.cols;
    let mut data = Vec::new();
    let mut rows = 0;
    for b in blocks {
        if b.cols != cols {
            return Err(Error::ShapeMismatch {
                op: "stack_rows",
                left_rows: rows,
                left_cols: cols,
                right_rows: b.rows,
                right_cols: b.cols,
            });
        }
        rows += b.rows;
        data.extend_from_slice(&b.data);
    }
    Ok(Matrix { rows, cols, data })
}

/// Horizontal stacking: blocks become consecutive column ranges of the result.
pub fn stack_cols(blocks: &[Matrix]) -> Result<Matrix> {
    let first = blocks.first().ok_or(Error::EmptyInput { op: "stack_cols" })?;
    let rows = first.rows;
    let mut cols = 0;
    for b in blocks {
        if b.rows != rows {
            return Err(Error::ShapeMismatch {
                op: "stack_cols",
                left_rows: rows,
                left_cols: cols,
                right_rows: b.rows,
                right_cols: b.cols,
            });
        }
        cols += b.cols;
    }
    let mut data = Vec::with_capacity(rows * cols);
    for i in 0..rows {
        for b in blocks {
            data.extend_from_slice(b.row(i));
        }
    }
    Ok(Matrix { rows, cols, data })
}

/// Elementwise `accum + scale * addend`.
pub fn axpy(accum: &Matrix, addend: &Matrix, scale: f64) -> Result<Matrix> {
    if accum.rows != addend.rows || accum.cols != addend.cols {
        return Err(Error::ShapeMismatch {
            op: "axpy",
            left_rows: accum.rows,
            left_cols: accum.cols,
            right_rows: addend.rows,
            right_cols: addend.cols,
        });
    }
    Ok(Matrix {
        rows: accum.rows,
        cols: accum.cols,
        data: accum
            .data
            .iter()
            .zip(&addend.data)
            .map(|(a, b)| a + scale * b)
            .collect(),
    })
}

/// Dot product of equal-length slices.
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Euclidean norm of a vector.
pub fn norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}
