//! Dense row-major matrices over `f64` and `Complex64`, plus frequency
//! indices into them. These are deliberately small: just the operations the
//! spectral and training layers need, in double precision throughout.

use crate::error::{Error, Result};
use num_complex::Complex64;

/// A 2-D frequency coordinate `(u, v)` with `u` indexing rows and `v` columns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct FrequencyIndex {
    pub u: usize,
    pub v: usize,
}

impl FrequencyIndex {
    pub fn new(u: usize, v: usize) -> Self {
        Self { u, v }
    }

    pub fn in_range(&self, rows: usize, cols: usize) -> bool {
        self.u < rows && self.v < cols
    }
}

/// Dense real matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct RealMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl RealMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(rows >= 1 && cols >= 1, "matrix dims must be >= 1");
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "entry count must equal rows*cols");
        assert!(rows >= 1 && cols >= 1, "matrix dims must be >= 1");
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, value: f64) {
        self.data[r * self.cols + c] = value;
    }

    #[inline]
    pub fn add_at(&mut self, r: usize, c: usize, value: f64) {
        self.data[r * self.cols + c] += value;
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// `y = self * x` for an `N`-vector `x`.
    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.cols {
            return Err(Error::Dimension(format!(
                "matvec: {}x{} matrix applied to length-{} vector",
                self.rows,
                self.cols,
                x.len()
            )));
        }
        let mut y = vec![0.0; self.rows];
        for r in 0..self.rows {
            let row = self.row(r);
            let mut acc = 0.0;
            for (a, b) in row.iter().zip(x.iter()) {
                acc += a * b;
            }
            y[r] = acc;
        }
        Ok(y)
    }

    /// `y = self^T * x` for an `M`-vector `x`.
    pub fn matvec_transpose(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.rows {
            return Err(Error::Dimension(format!(
                "matvec_transpose: {}x{} matrix, length-{} vector",
                self.rows,
                self.cols,
                x.len()
            )));
        }
        let mut y = vec![0.0; self.cols];
        for r in 0..self.rows {
            let row = self.row(r);
            let xr = x[r];
            for (c, a) in row.iter().enumerate() {
                y[c] += a * xr;
            }
        }
        Ok(y)
    }

    /// `self += scale * (a ⊗ b)` (rank-1 update).
    pub fn add_outer(&mut self, scale: f64, a: &[f64], b: &[f64]) {
        assert_eq!(a.len(), self.rows);
        assert_eq!(b.len(), self.cols);
        for (r, ar) in a.iter().enumerate() {
            let s = scale * ar;
            let row = &mut self.data[r * self.cols..(r + 1) * self.cols];
            for (cell, bc) in row.iter_mut().zip(b.iter()) {
                *cell += s * bc;
            }
        }
    }

    /// `self += scale * other`, elementwise.
    pub fn add_scaled(&mut self, scale: f64, other: &RealMatrix) {
        assert_eq!(self.dims(), other.dims());
        for (a, b) in self.data.iter_mut().zip(other.data.iter()) {
            *a += scale * b;
        }
    }

    pub fn scale(&mut self, s: f64) {
        for a in self.data.iter_mut() {
            *a *= s;
        }
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn sub(&self, other: &RealMatrix) -> RealMatrix {
        assert_eq!(self.dims(), other.dims());
        let data = self
            .data
            .iter()
            .zip(other.data.iter())
            .map(|(a, b)| a - b)
            .collect();
        RealMatrix::from_vec(self.rows, self.cols, data)
    }

    pub fn to_complex(&self) -> ComplexMatrix {
        let data = self
            .data
            .iter()
            .map(|&x| Complex64::new(x, 0.0))
            .collect();
        ComplexMatrix::from_vec(self.rows, self.cols, data)
    }
}

/// Dense complex matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexMatrix {
    rows: usize,
    cols: usize,
    data: Vec<Complex64>,
}

impl ComplexMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(rows >= 1 && cols >= 1, "matrix dims must be >= 1");
        Self {
            rows,
            cols,
            data: vec![Complex64::new(0.0, 0.0); rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<Complex64>) -> Self {
        assert_eq!(data.len(), rows * cols, "entry count must equal rows*cols");
        assert!(rows >= 1 && cols >= 1, "matrix dims must be >= 1");
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> Complex64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, value: Complex64) {
        self.data[r * self.cols + c] = value;
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [Complex64] {
        &mut self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }

    /// Largest `|Im|` over all entries.
    pub fn max_abs_imag(&self) -> f64 {
        self.data.iter().map(|z| z.im.abs()).fold(0.0, f64::max)
    }

    /// Sum of squared imaginary parts over all entries.
    pub fn imag_energy(&self) -> f64 {
        self.data.iter().map(|z| z.im * z.im).sum()
    }

    /// Sum of `|z|^2` over all entries.
    pub fn energy(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum()
    }

    /// Real part, dropping the imaginary component.
    pub fn real_part(&self) -> RealMatrix {
        let data = self.data.iter().map(|z| z.re).collect();
        RealMatrix::from_vec(self.rows, self.cols, data)
    }

    pub fn check_index(&self, idx: FrequencyIndex) -> Result<()> {
        if idx.in_range(self.rows, self.cols) {
            Ok(())
        } else {
            Err(Error::IndexOutOfRange {
                u: idx.u,
                v: idx.v,
                rows: self.rows,
                cols: self.cols,
            })
        }
    }
}
