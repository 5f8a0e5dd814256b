//! Small dense row-major matrices for conditional probability tables.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    /// `(1/cols)·1`: every row uniform.
    pub fn uniform_rows(rows: usize, cols: usize) -> Self {
        Self::filled(rows, cols, 1.0 / cols as f64)
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.is_empty() || cols == 0 {
            return Err(Error::InvalidParameter("matrix must be non-empty".into()));
        }
        if let Some(bad) = rows.iter().find(|r| r.len() != cols) {
            return Err(Error::LengthMismatch {
                left: cols,
                right: bad.len(),
            });
        }
        Ok(Matrix {
            rows: rows.len(),
            cols,
            data: rows.concat(),
        })
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::LengthMismatch {
                left: rows * cols,
                right: data.len(),
            });
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.rows).map(|r| self.row(r).to_vec()).collect()
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                t[(c, r)] = self[(r, c)];
            }
        }
        t
    }

    pub fn scale(&self, s: f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|x| x * s).collect(),
        }
    }

    /// `θᵀ f` (forward direction through a block).
    pub fn tmul(&self, f: &[f64]) -> Vec<f64> {
        debug_assert_eq!(f.len(), self.rows);
        let mut out = vec![0.0; self.cols];
        for (r, fr) in f.iter().enumerate() {
            if *fr == 0.0 {
                continue;
            }
            for (o, t) in out.iter_mut().zip(self.row(r)) {
                *o += fr * t;
            }
        }
        out
    }

    /// `θ b` (backward direction through a block).
    pub fn mul(&self, b: &[f64]) -> Vec<f64> {
        debug_assert_eq!(b.len(), self.cols);
        (0..self.rows)
            .map(|r| self.row(r).iter().zip(b).map(|(t, x)| t * x).sum())
            .collect()
    }

    /// `fᵀ θ b`.
    pub fn bilinear(&self, f: &[f64], b: &[f64]) -> f64 {
        f.iter()
            .enumerate()
            .filter(|(_, fr)| **fr != 0.0)
            .map(|(r, fr)| fr * self.row(r).iter().zip(b).map(|(t, x)| t * x).sum::<f64>())
            .sum()
    }

    /// Divides every row by its sum. Rows summing to zero are reported and
    /// left as they are.
    pub fn row_normalize(&mut self) -> Vec<usize> {
        let mut empty = Vec::new();
        for r in 0..self.rows {
            let row = self.row_mut(r);
            let s: f64 = row.iter().sum();
            if s > 0.0 && s.is_finite() {
                row.iter_mut().for_each(|x| *x /= s);
            } else {
                empty.push(r);
            }
        }
        empty
    }

    pub fn is_row_stochastic(&self, tol: f64) -> bool {
        (0..self.rows).all(|r| {
            let row = self.row(r);
            row.iter().all(|x| *x >= 0.0 && *x <= 1.0 + tol)
                && (row.iter().sum::<f64>() - 1.0).abs() <= tol
        })
    }

    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Kronecker product `self ⊗ other`.
    pub fn kron(&self, other: &Matrix) -> Matrix {
        let mut out = Matrix::zeros(self.rows * other.rows, self.cols * other.cols);
        for r in 0..self.rows {
            for c in 0..self.cols {
                let a = self[(r, c)];
                for rr in 0..other.rows {
                    for cc in 0..other.cols {
                        out[(r * other.rows + rr, c * other.cols + cc)] = a * other[(rr, cc)];
                    }
                }
            }
        }
        out
    }
}

impl std::ops::Index<(usize, usize)> for Matrix {
    type Output = f64;
    fn index(&self, (r, c): (usize, usize)) -> &f64 {
        &self.data[r * self.cols + c]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut f64 {
        &mut self.data[r * self.cols + c]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn products_agree_with_definitions() {
        let m = Matrix::from_rows(&[vec![0.1, 0.9], vec![0.9, 0.1], vec![0.5, 0.5]]).unwrap();
        let f = [0.2, 0.3, 0.5];
        let b = [1.0, 2.0];
        assert_eq!(m.tmul(&f), m.transpose().mul(&f));
        let direct: f64 = (0..3)
            .flat_map(|r| (0..2).map(move |c| (r, c)))
            .map(|(r, c)| f[r] * m[(r, c)] * b[c])
            .sum();
        assert!((m.bilinear(&f, &b) - direct).abs() < 1e-15);
    }

    #[test]
    fn row_normalize_reports_empty_rows() {
        let mut m = Matrix::from_rows(&[vec![2.0, 2.0], vec![0.0, 0.0]]).unwrap();
        assert_eq!(m.row_normalize(), vec![1]);
        assert_eq!(m.row(0), &[0.5, 0.5]);
    }

    #[test]
    fn ragged_rows_rejected() {
        assert!(Matrix::from_rows(&[vec![1.0], vec![0.5, 0.5]]).is_err());
    }
}
