//! Dense complex matrices at the sizes this crate needs (a few hundred at most)
//! and Cholesky-based Hermitian positive-definite solves.

use std::ops::{Index, IndexMut};

use super::{NumericsError, C64};

/// Row-major dense complex matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CMatrix {
    rows: usize,
    cols: usize,
    data: Vec<C64>,
}

impl CMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![C64::new(0.0, 0.0); rows * cols] }
    }

    pub fn identity(dim: usize) -> Self {
        let mut m = Self::zeros(dim, dim);
        for i in 0..dim {
            m[(i, i)] = C64::new(1.0, 0.0);
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> C64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
    }

    pub fn from_diag(diag: &[C64]) -> Self {
        let mut m = Self::zeros(diag.len(), diag.len());
        for (i, &d) in diag.iter().enumerate() {
            m[(i, i)] = d;
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, r: usize) -> &[C64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[C64] {
        &self.data
    }

    /// Conjugate transpose.
    pub fn adjoint(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |r, c| self[(c, r)].conj())
    }

    pub fn mul_vec(&self, v: &[C64]) -> Result<Vec<C64>, NumericsError> {
        if v.len() != self.cols {
            return Err(NumericsError::DimensionMismatch { expected: self.cols, got: v.len() });
        }
        Ok((0..self.rows).map(|r| self.row(r).iter().zip(v).map(|(a, b)| a * b).sum()).collect())
    }

    pub fn matmul(&self, other: &CMatrix) -> Result<CMatrix, NumericsError> {
        if self.cols != other.rows {
            return Err(NumericsError::DimensionMismatch { expected: self.cols, got: other.rows });
        }
        let mut out = CMatrix::zeros(self.rows, other.cols);
        for r in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(r, k)];
                if a == C64::new(0.0, 0.0) {
                    continue;
                }
                for c in 0..other.cols {
                    out[(r, c)] += a * other[(k, c)];
                }
            }
        }
        Ok(out)
    }

    /// `diag(left) * self * diag(right)`.
    pub fn scale_rows_cols(&self, left: &[C64], right: &[C64]) -> CMatrix {
        assert_eq!(left.len(), self.rows);
        assert_eq!(right.len(), self.cols);
        CMatrix::from_fn(self.rows, self.cols, |r, c| left[r] * self[(r, c)] * right[c])
    }

    /// Largest entrywise modulus; used by tests as a cheap norm.
    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }
}

impl Index<(usize, usize)> for CMatrix {
    type Output = C64;
    fn index(&self, (r, c): (usize, usize)) -> &C64 {
        &self.data[r * self.cols + c]
    }
}

impl IndexMut<(usize, usize)> for CMatrix {
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut C64 {
        &mut self.data[r * self.cols + c]
    }
}

/// Square Hermitian matrix, positive semidefinite by contract.
///
/// Construction checks the Hermitian symmetry; definiteness is only discovered
/// when a factorization is attempted.
#[derive(Debug, Clone, PartialEq)]
pub struct HermitianPsdMatrix {
    inner: CMatrix,
}

impl HermitianPsdMatrix {
    pub fn new(matrix: CMatrix) -> Result<Self, NumericsError> {
        if matrix.rows != matrix.cols {
            return Err(NumericsError::DimensionMismatch { expected: matrix.rows, got: matrix.cols });
        }
        let scale = matrix.max_abs().max(1e-300);
        for r in 0..matrix.rows {
            for c in r..matrix.cols {
                if (matrix[(r, c)] - matrix[(c, r)].conj()).norm() > 1e-10 * scale {
                    return Err(NumericsError::NotHermitian { row: r, col: c });
                }
            }
        }
        Ok(Self { inner: matrix })
    }

    pub fn dim(&self) -> usize {
        self.inner.rows
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.inner
    }

    pub fn mul_vec(&self, v: &[C64]) -> Result<Vec<C64>, NumericsError> {
        self.inner.mul_vec(v)
    }

    pub fn cholesky(&self) -> Result<Cholesky, NumericsError> {
        Cholesky::factor(&self.inner)
    }
}

/// Lower-triangular factor `A = L L^H` with real positive diagonal.
#[derive(Debug, Clone)]
pub struct Cholesky {
    dim: usize,
    lower: Vec<C64>,
}

impl Cholesky {
    pub fn factor(a: &CMatrix) -> Result<Self, NumericsError> {
        let n = a.rows;
        if a.cols != n {
            return Err(NumericsError::DimensionMismatch { expected: n, got: a.cols });
        }
        let mut lower = vec![C64::new(0.0, 0.0); n * n];
        for j in 0..n {
            let mut diag = a[(j, j)].re;
            for k in 0..j {
                diag -= lower[j * n + k].norm_sqr();
            }
            if !(diag > 0.0) || !diag.is_finite() {
                return Err(NumericsError::Singular { pivot: j, value: diag });
            }
            let ljj = diag.sqrt();
            lower[j * n + j] = C64::new(ljj, 0.0);
            for i in (j + 1)..n {
                let mut s = a[(i, j)];
                for k in 0..j {
                    s -= lower[i * n + k] * lower[j * n + k].conj();
                }
                lower[i * n + j] = s / ljj;
            }
        }
        Ok(Self { dim: n, lower })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Solves `L y = b` in place.
    pub fn forward(&self, b: &mut [C64]) {
        let n = self.dim;
        for i in 0..n {
            let mut s = b[i];
            let row = &self.lower[i * n..i * n + i];
            for (k, l) in row.iter().enumerate() {
                s -= l * b[k];
            }
            b[i] = s / self.lower[i * n + i].re;
        }
    }

    /// Solves `L^H x = y` in place.
    pub fn backward(&self, y: &mut [C64]) {
        let n = self.dim;
        for i in (0..n).rev() {
            let mut s = y[i];
            for k in (i + 1)..n {
                s -= self.lower[k * n + i].conj() * y[k];
            }
            y[i] = s / self.lower[i * n + i].re;
        }
    }

    pub fn solve(&self, b: &[C64]) -> Result<Vec<C64>, NumericsError> {
        if b.len() != self.dim {
            return Err(NumericsError::DimensionMismatch { expected: self.dim, got: b.len() });
        }
        let mut x = b.to_vec();
        self.forward(&mut x);
        self.backward(&mut x);
        Ok(x)
    }

    /// `b^H A^{-1} b`, computed as `|L^{-1} b|^2` so the result is real by
    /// construction.
    pub fn inv_quad(&self, b: &[C64]) -> Result<f64, NumericsError> {
        if b.len() != self.dim {
            return Err(NumericsError::DimensionMismatch { expected: self.dim, got: b.len() });
        }
        let mut y = b.to_vec();
        self.forward(&mut y);
        Ok(y.iter().map(|z| z.norm_sqr()).sum())
    }

    /// `ln det A = 2 sum ln L_ii`.
    pub fn ln_det(&self) -> f64 {
        (0..self.dim).map(|i| 2.0 * self.lower[i * self.dim + i].re.ln()).sum()
    }
}

/// Solves `A x = b` for Hermitian positive-definite `A` without forming the
/// inverse.
pub fn hermitian_solve(a: &HermitianPsdMatrix, b: &[C64]) -> Result<Vec<C64>, NumericsError> {
    if b.len() != a.dim() {
        return Err(NumericsError::DimensionMismatch { expected: a.dim(), got: b.len() });
    }
    a.cholesky()?.solve(b)
}

/// Anything that can evaluate `v^H A^{-1} v` for a fixed positive-definite `A`.
pub trait InverseQuadForm {
    fn dim(&self) -> usize;
    fn inv_quad(&self, v: &[C64]) -> Result<f64, NumericsError>;
}

impl InverseQuadForm for HermitianPsdMatrix {
    fn dim(&self) -> usize {
        self.inner.rows
    }

    fn inv_quad(&self, v: &[C64]) -> Result<f64, NumericsError> {
        let x = hermitian_solve(self, v)?;
        let q: C64 = v.iter().zip(&x).map(|(a, b)| a.conj() * b).sum();
        let scale = q.norm().max(1.0);
        if q.im.abs() > 1e-9 * scale {
            return Err(NumericsError::Convergence(format!("quadratic form has imaginary residue {:e}", q.im)));
        }
        Ok(q.re)
    }
}

pub fn norm_sqr(v: &[C64]) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum()
}
