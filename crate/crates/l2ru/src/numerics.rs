//! Dense linear-algebra kernels for small (desk-scale) matrices.
//!
//! Everything here is deliberately dependency-free and deterministic:
//! row-major matrices, LU with partial pivoting, Cholesky, a cyclic Jacobi
//! eigensolver for symmetric matrices, and a power-iteration spectral norm.
//! The matrix type is generic over [`Scalar`] so the same factorization and
//! product code runs on plain `f64` and on reverse-mode tape variables.

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use std::ops::{Add, Div, Index, IndexMut, Mul, Neg, Sub};

/// Relative tolerance used when deciding whether a matrix is symmetric.
pub const SYMMETRY_RTOL: f64 = 1e-9;
/// Relative pivot threshold below which LU factorization reports `Singular`.
pub const PIVOT_RTOL: f64 = 1e-14;
/// Default relative convergence tolerance for the power-iteration spectral norm.
pub const SPECTRAL_TOL: f64 = 1e-10;
/// Default iteration budget for the power-iteration spectral norm.
pub const SPECTRAL_MAX_ITERS: usize = 10_000;
/// Default convergence tolerance for the Jacobi eigensolver.
pub const JACOBI_TOL: f64 = 1e-12;
/// Maximum number of Jacobi sweeps before reporting a convergence failure.
pub const JACOBI_MAX_SWEEPS: usize = 100;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum NumericsError {
    #[error("dimension mismatch: expected {expected}, got {got} in {context}")]
    Dimension {
        expected: String,
        got: String,
        context: &'static str,
    },
    #[error("matrix entry at ({row}, {col}) is not finite")]
    NonFinite { row: usize, col: usize },
    #[error("matrix is not symmetric: max asymmetry {asymmetry:.3e} exceeds {tolerance:.3e}")]
    NotSymmetric { asymmetry: f64, tolerance: f64 },
    #[error("matrix is not positive definite: pivot {pivot} at index {index} is non-positive")]
    NotPositiveDefinite { index: usize, pivot: f64 },
    #[error("matrix is numerically singular: pivot {pivot:.3e} below threshold {threshold:.3e}")]
    Singular { pivot: f64, threshold: f64 },
    #[error("iteration failed to converge within {iterations} steps (last estimate {last:.6e})")]
    Convergence { iterations: usize, last: f64 },
}

/// Field of values the dense kernels operate on.
///
/// Implemented by `f64` for ordinary evaluation and by the tape variable in
/// [`crate::tape`] for reverse-mode differentiation. `val` exposes the
/// numeric value for branching (pivot selection, convergence tests), and
/// `lift` creates a constant in the same evaluation context as `self`.
pub trait Scalar:
    Copy
    + std::fmt::Debug
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
{
    fn val(self) -> f64;
    fn lift(self, c: f64) -> Self;
    fn sqrt(self) -> Self;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn abs(self) -> Self;
    fn tanh(self) -> Self;
    fn sin(self) -> Self;
    fn cos(self) -> Self;
    /// Numerically stable logistic function 1 / (1 + e^(-x)).
    fn sigmoid(self) -> Self;

    fn relu(self) -> Self {
        if self.val() > 0.0 {
            self
        } else {
            self.lift(0.0)
        }
    }

    fn max_with(self, other: Self) -> Self {
        if self.val() >= other.val() {
            self
        } else {
            other
        }
    }

    /// Largest singular value of `m`, in the same evaluation context.
    ///
    /// For `f64` this is plain power iteration; the tape implementation runs
    /// power iteration on the values and re-expresses the converged Rayleigh
    /// quotient on the tape so the derivative is the usual rank-one form.
    fn spectral_norm_of(m: &Mat<Self>, tol: f64, max_iters: usize) -> Result<Self, NumericsError>
    where
        Self: Sized;
}

impl Scalar for f64 {
    #[inline]
    fn val(self) -> f64 {
        self
    }
    #[inline]
    fn lift(self, c: f64) -> Self {
        c
    }
    #[inline]
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    #[inline]
    fn exp(self) -> Self {
        f64::exp(self)
    }
    #[inline]
    fn ln(self) -> Self {
        f64::ln(self)
    }
    #[inline]
    fn abs(self) -> Self {
        f64::abs(self)
    }
    #[inline]
    fn tanh(self) -> Self {
        f64::tanh(self)
    }
    #[inline]
    fn sin(self) -> Self {
        f64::sin(self)
    }
    #[inline]
    fn cos(self) -> Self {
        f64::cos(self)
    }
    #[inline]
    fn sigmoid(self) -> Self {
        if self >= 0.0 {
            1.0 / (1.0 + (-self).exp())
        } else {
            let e = self.exp();
            e / (1.0 + e)
        }
    }

    fn spectral_norm_of(m: &Mat<Self>, tol: f64, max_iters: usize) -> Result<Self, NumericsError> {
        spectral_norm_detailed(m, tol, max_iters, None).map(|d| d.sigma)
    }
}

/// Dense row-major matrix over a [`Scalar`] field.
#[derive(Debug, Clone, PartialEq)]
pub struct Mat<S> {
    rows: usize,
    cols: usize,
    data: Vec<S>,
}

/// Dense `f64` matrix; the working type of every public numeric interface.
pub type Matrix = Mat<f64>;

impl Matrix {
    /// Builds a matrix from row-major data, rejecting empty shapes, size
    /// mismatches, and non-finite entries.
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, NumericsError> {
        if rows == 0 || cols == 0 || data.len() != rows * cols {
            return Err(NumericsError::Dimension {
                expected: format!("{rows}x{cols} = {} entries", rows * cols),
                got: format!("{} entries", data.len()),
                context: "Matrix::new",
            });
        }
        for (k, v) in data.iter().enumerate() {
            if !v.is_finite() {
                return Err(NumericsError::NonFinite {
                    row: k / cols,
                    col: k % cols,
                });
            }
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, NumericsError> {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        if rows.iter().any(|row| row.len() != c) {
            return Err(NumericsError::Dimension {
                expected: format!("rows of uniform length {c}"),
                got: "ragged rows".to_string(),
                context: "Matrix::from_rows",
            });
        }
        Self::new(r, c, rows.concat())
    }

    pub fn scaled_identity(n: usize, value: f64) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = value;
        }
        m
    }

    pub fn frobenius(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// Matrix-vector product.
    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(self.cols, x.len(), "matvec dimension mismatch");
        let mut y = vec![0.0; self.rows];
        for i in 0..self.rows {
            let row = &self.data[i * self.cols..(i + 1) * self.cols];
            y[i] = row.iter().zip(x).map(|(a, b)| a * b).sum();
        }
        y
    }
}

impl<S: Scalar> Mat<S> {
    /// Row-major entries of any scalar type.
    pub fn entries(&self) -> &[S] {
        &self.data
    }

    /// Builds a matrix of constants in the evaluation context of `probe`.
    pub fn filled_like(probe: S, rows: usize, cols: usize, value: f64) -> Self {
        Self {
            rows,
            cols,
            data: vec![probe.lift(value); rows * cols],
        }
    }

    pub fn identity_like(probe: S, n: usize) -> Self {
        let mut m = Self::filled_like(probe, n, n, 0.0);
        for i in 0..n {
            m[(i, i)] = probe.lift(1.0);
        }
        m
    }

    /// Lifts an `f64` matrix into the evaluation context of `probe` as constants.
    pub fn lift_like(probe: S, m: &Matrix) -> Self {
        Self {
            rows: m.rows,
            cols: m.cols,
            data: m.data.iter().map(|&v| probe.lift(v)).collect(),
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<S>) -> Self {
        assert_eq!(data.len(), rows * cols, "from_vec size mismatch");
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    /// Copy of the entry values as a plain `f64` matrix.
    pub fn value_matrix(&self) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|s| s.val()).collect(),
        }
    }

    pub fn max_abs_val(&self) -> f64 {
        self.data.iter().fold(0.0, |m, s| m.max(s.val().abs()))
    }

    pub fn t(&self) -> Self {
        let mut out = Vec::with_capacity(self.data.len());
        for j in 0..self.cols {
            for i in 0..self.rows {
                out.push(self[(i, j)]);
            }
        }
        Self {
            rows: self.cols,
            cols: self.rows,
            data: out,
        }
    }

    pub fn mul(&self, rhs: &Self) -> Self {
        assert_eq!(self.cols, rhs.rows, "mul dimension mismatch");
        let zero = self.data[0].lift(0.0);
        let mut out = vec![zero; self.rows * rhs.cols];
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a.val() == 0.0 {
                    continue;
                }
                let row = &rhs.data[k * rhs.cols..(k + 1) * rhs.cols];
                let dst = &mut out[i * rhs.cols..(i + 1) * rhs.cols];
                for (d, &b) in dst.iter_mut().zip(row) {
                    *d = *d + a * b;
                }
            }
        }
        Self {
            rows: self.rows,
            cols: rhs.cols,
            data: out,
        }
    }

    /// `self^T * rhs` without materializing the transpose.
    pub fn tr_mul(&self, rhs: &Self) -> Self {
        assert_eq!(self.rows, rhs.rows, "tr_mul dimension mismatch");
        let zero = self.data[0].lift(0.0);
        let mut out = vec![zero; self.cols * rhs.cols];
        for k in 0..self.rows {
            for i in 0..self.cols {
                let a = self[(k, i)];
                if a.val() == 0.0 {
                    continue;
                }
                let row = &rhs.data[k * rhs.cols..(k + 1) * rhs.cols];
                let dst = &mut out[i * rhs.cols..(i + 1) * rhs.cols];
                for (d, &b) in dst.iter_mut().zip(row) {
                    *d = *d + a * b;
                }
            }
        }
        Self {
            rows: self.cols,
            cols: rhs.cols,
            data: out,
        }
    }

    /// `self * rhs^T` without materializing the transpose.
    pub fn mul_tr(&self, rhs: &Self) -> Self {
        assert_eq!(self.cols, rhs.cols, "mul_tr dimension mismatch");
        let zero = self.data[0].lift(0.0);
        let mut out = vec![zero; self.rows * rhs.rows];
        for i in 0..self.rows {
            for j in 0..rhs.rows {
                let a = &self.data[i * self.cols..(i + 1) * self.cols];
                let b = &rhs.data[j * rhs.cols..(j + 1) * rhs.cols];
                let mut acc = zero;
                for (&x, &y) in a.iter().zip(b) {
                    acc = acc + x * y;
                }
                out[i * rhs.rows + j] = acc;
            }
        }
        Self {
            rows: self.rows,
            cols: rhs.rows,
            data: out,
        }
    }

    pub fn add(&self, rhs: &Self) -> Self {
        assert_eq!((self.rows, self.cols), (rhs.rows, rhs.cols), "add shape");
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&rhs.data)
                .map(|(&a, &b)| a + b)
                .collect(),
        }
    }

    pub fn sub(&self, rhs: &Self) -> Self {
        assert_eq!((self.rows, self.cols), (rhs.rows, rhs.cols), "sub shape");
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&rhs.data)
                .map(|(&a, &b)| a - b)
                .collect(),
        }
    }

    pub fn scale(&self, s: S) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&a| a * s).collect(),
        }
    }

    pub fn neg(&self) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&a| -a).collect(),
        }
    }

    /// `self + value * I` (square matrices only).
    pub fn add_scaled_identity(&self, value: S) -> Self {
        assert!(self.is_square(), "add_scaled_identity requires square");
        let mut out = self.clone();
        for i in 0..self.rows {
            out[(i, i)] = out[(i, i)] + value;
        }
        out
    }

    /// Symmetric part `(self + self^T) / 2`.
    pub fn symmetrize(&self) -> Self {
        assert!(self.is_square(), "symmetrize requires square");
        let half = self.data[0].lift(0.5);
        let mut out = self.clone();
        for i in 0..self.rows {
            for j in 0..self.cols {
                out[(i, j)] = (self[(i, j)] + self[(j, i)]) * half;
            }
        }
        out
    }

    /// Writes `block` into `self` with its top-left corner at `(row, col)`.
    pub fn set_block(&mut self, row: usize, col: usize, block: &Self) {
        assert!(row + block.rows <= self.rows && col + block.cols <= self.cols);
        for i in 0..block.rows {
            for j in 0..block.cols {
                self[(row + i, col + j)] = block[(i, j)];
            }
        }
    }

    pub fn block(&self, row: usize, col: usize, rows: usize, cols: usize) -> Self {
        assert!(row + rows <= self.rows && col + cols <= self.cols);
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(self[(row + i, col + j)]);
            }
        }
        Self { rows, cols, data }
    }

    fn max_asymmetry(&self) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..self.rows {
            for j in (i + 1)..self.cols {
                worst = worst.max((self[(i, j)].val() - self[(j, i)].val()).abs());
            }
        }
        worst
    }

    /// Validates that the matrix is symmetric within [`SYMMETRY_RTOL`] relative
    /// to its largest entry.
    pub fn check_symmetric(&self) -> Result<(), NumericsError> {
        if !self.is_square() {
            return Err(NumericsError::Dimension {
                expected: "square matrix".to_string(),
                got: format!("{}x{}", self.rows, self.cols),
                context: "check_symmetric",
            });
        }
        let scale = self.max_abs_val().max(1e-300);
        let asym = self.max_asymmetry();
        if asym > SYMMETRY_RTOL * scale {
            return Err(NumericsError::NotSymmetric {
                asymmetry: asym,
                tolerance: SYMMETRY_RTOL * scale,
            });
        }
        Ok(())
    }
}

impl<S> Index<(usize, usize)> for Mat<S> {
    type Output = S;
    #[inline]
    fn index(&self, (r, c): (usize, usize)) -> &S {
        &self.data[r * self.cols + c]
    }
}

impl<S> IndexMut<(usize, usize)> for Mat<S> {
    #[inline]
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut S {
        &mut self.data[r * self.cols + c]
    }
}

impl<S: Serialize> Serialize for Mat<S> {
    fn serialize<Sz: Serializer>(&self, serializer: Sz) -> Result<Sz::Ok, Sz::Error> {
        let rows: Vec<&[S]> = self.data.chunks(self.cols).collect();
        rows.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Matrix {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let rows: Vec<Vec<f64>> = Vec::deserialize(deserializer)?;
        Matrix::from_rows(&rows).map_err(D::Error::custom)
    }
}

/// LU factorization with partial pivoting, `P * M = L * U`.
pub struct Lu<S> {
    lu: Mat<S>,
    perm: Vec<usize>,
    /// Crude reciprocal-condition estimate: min |pivot| / max |pivot|.
    rcond: f64,
}

/// Factors a square matrix; fails with `Singular` when a pivot falls below
/// [`PIVOT_RTOL`] relative to the largest entry of the input.
pub fn lu_factor<S: Scalar>(m: &Mat<S>) -> Result<Lu<S>, NumericsError> {
    if !m.is_square() {
        return Err(NumericsError::Dimension {
            expected: "square matrix".to_string(),
            got: format!("{}x{}", m.rows(), m.cols()),
            context: "lu_factor",
        });
    }
    let n = m.rows();
    let threshold = PIVOT_RTOL * m.max_abs_val().max(1e-300);
    let mut lu = m.clone();
    let mut perm: Vec<usize> = (0..n).collect();
    let mut min_piv = f64::INFINITY;
    let mut max_piv = 0.0f64;
    for k in 0..n {
        let mut best = k;
        let mut best_abs = lu[(k, k)].val().abs();
        for i in (k + 1)..n {
            let a = lu[(i, k)].val().abs();
            if a > best_abs {
                best = i;
                best_abs = a;
            }
        }
        if best_abs <= threshold {
            return Err(NumericsError::Singular {
                pivot: best_abs,
                threshold,
            });
        }
        if best != k {
            for j in 0..n {
                let tmp = lu[(k, j)];
                lu[(k, j)] = lu[(best, j)];
                lu[(best, j)] = tmp;
            }
            perm.swap(k, best);
        }
        min_piv = min_piv.min(best_abs);
        max_piv = max_piv.max(best_abs);
        let pivot = lu[(k, k)];
        for i in (k + 1)..n {
            let factor = lu[(i, k)] / pivot;
            lu[(i, k)] = factor;
            if factor.val() != 0.0 {
                for j in (k + 1)..n {
                    let sub = factor * lu[(k, j)];
                    lu[(i, j)] = lu[(i, j)] - sub;
                }
            }
        }
    }
    Ok(Lu {
        lu,
        perm,
        rcond: if max_piv > 0.0 { min_piv / max_piv } else { 0.0 },
    })
}

impl<S: Scalar> Lu<S> {
    pub fn rcond(&self) -> f64 {
        self.rcond
    }

    /// Determinant: signed product of the pivots.
    pub fn det(&self) -> S {
        let n = self.lu.rows();
        // Permutation sign from its cycle structure.
        let mut seen = vec![false; n];
        let mut sign = 1.0f64;
        for start in 0..n {
            if seen[start] {
                continue;
            }
            let mut len = 0;
            let mut i = start;
            while !seen[i] {
                seen[i] = true;
                i = self.perm[i];
                len += 1;
            }
            if len % 2 == 0 {
                sign = -sign;
            }
        }
        let mut det = self.lu[(0, 0)].lift(sign);
        for i in 0..n {
            det = det * self.lu[(i, i)];
        }
        det
    }

    /// Solves `M * X = rhs` for each column of `rhs`.
    pub fn solve_mat(&self, rhs: &Mat<S>) -> Mat<S> {
        assert_eq!(self.lu.rows(), rhs.rows(), "solve_mat dimension mismatch");
        let n = self.lu.rows();
        let ncols = rhs.cols();
        let zero = rhs[(0, 0)].lift(0.0);
        let mut x = Mat::from_vec(n, ncols, vec![zero; n * ncols]);
        // Apply the row permutation to the right-hand side.
        for (i, &pi) in self.perm.iter().enumerate() {
            for j in 0..ncols {
                x[(i, j)] = rhs[(pi, j)];
            }
        }
        // Forward substitution with unit lower triangle.
        for i in 1..n {
            for k in 0..i {
                let f = self.lu[(i, k)];
                if f.val() != 0.0 {
                    for j in 0..ncols {
                        let sub = f * x[(k, j)];
                        x[(i, j)] = x[(i, j)] - sub;
                    }
                }
            }
        }
        // Back substitution.
        for i in (0..n).rev() {
            for k in (i + 1)..n {
                let f = self.lu[(i, k)];
                if f.val() != 0.0 {
                    for j in 0..ncols {
                        let sub = f * x[(k, j)];
                        x[(i, j)] = x[(i, j)] - sub;
                    }
                }
            }
            let d = self.lu[(i, i)];
            for j in 0..ncols {
                x[(i, j)] = x[(i, j)] / d;
            }
        }
        x
    }

    pub fn solve_vec(&self, rhs: &[S]) -> Vec<S> {
        let col = Mat::from_vec(rhs.len(), 1, rhs.to_vec());
        let x = self.solve_mat(&col);
        x.data
    }
}

/// Solves `M * X = rhs`; convenience wrapper around [`lu_factor`].
pub fn solve<S: Scalar>(m: &Mat<S>, rhs: &Mat<S>) -> Result<Mat<S>, NumericsError> {
    Ok(lu_factor(m)?.solve_mat(rhs))
}

/// Lower-triangular Cholesky factor of a symmetric positive-definite matrix.
///
/// Symmetry is validated first (relative tolerance [`SYMMETRY_RTOL`]); only
/// the lower triangle of `m` is read afterwards. A non-positive pivot yields
/// `NotPositiveDefinite`.
pub fn cholesky<S: Scalar>(m: &Mat<S>) -> Result<Mat<S>, NumericsError> {
    m.check_symmetric()?;
    let n = m.rows();
    let zero = m[(0, 0)].lift(0.0);
    let mut l = Mat::from_vec(n, n, vec![zero; n * n]);
    for i in 0..n {
        for j in 0..=i {
            let mut acc = m[(i, j)];
            for k in 0..j {
                let sub = l[(i, k)] * l[(j, k)];
                acc = acc - sub;
            }
            if i == j {
                if acc.val() <= 0.0 {
                    return Err(NumericsError::NotPositiveDefinite {
                        index: i,
                        pivot: acc.val(),
                    });
                }
                l[(i, j)] = acc.sqrt();
            } else {
                l[(i, j)] = acc / l[(j, j)];
            }
        }
    }
    Ok(l)
}

/// Eigenvalues of a symmetric matrix, sorted ascending.
#[derive(Debug, Clone)]
pub struct SymEigSummary {
    /// Eigenvalues in ascending order.
    pub eigenvalues: Vec<f64>,
    /// Number of Jacobi sweeps performed.
    pub sweeps: usize,
}

impl SymEigSummary {
    pub fn min_eig(&self) -> f64 {
        self.eigenvalues[0]
    }
    pub fn max_eig(&self) -> f64 {
        *self.eigenvalues.last().unwrap()
    }
}

/// Eigenvalues of a symmetric matrix via cyclic Jacobi rotations.
///
/// The input must be symmetric within [`SYMMETRY_RTOL`]; it is replaced by its
/// symmetric part before iteration. Convergence is declared when the
/// off-diagonal Frobenius norm drops below `tol` relative to the matrix norm.
pub fn sym_eig(m: &Matrix, tol: f64) -> Result<SymEigSummary, NumericsError> {
    m.check_symmetric()?;
    let n = m.rows();
    let mut a = m.symmetrize();
    if n == 1 {
        return Ok(SymEigSummary {
            eigenvalues: vec![a[(0, 0)]],
            sweeps: 0,
        });
    }
    let norm = a.frobenius().max(1e-300);
    let target = tol.max(f64::EPSILON) * norm;

    let off = |a: &Matrix| -> f64 {
        let mut s = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                s += 2.0 * a[(i, j)] * a[(i, j)];
            }
        }
        s.sqrt()
    };

    let mut sweeps = 0;
    while off(&a) > target {
        if sweeps >= JACOBI_MAX_SWEEPS {
            return Err(NumericsError::Convergence {
                iterations: sweeps,
                last: off(&a),
            });
        }
        for p in 0..n - 1 {
            for q in (p + 1)..n {
                let apq = a[(p, q)];
                if apq.abs() <= f64::EPSILON * norm {
                    a[(p, q)] = 0.0;
                    a[(q, p)] = 0.0;
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                // Rotate rows/columns p and q.
                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
            }
        }
        sweeps += 1;
    }
    let mut eigenvalues: Vec<f64> = (0..n).map(|i| a[(i, i)]).collect();
    eigenvalues.sort_by(|x, y| x.partial_cmp(y).unwrap());
    Ok(SymEigSummary { eigenvalues, sweeps })
}

/// Converged spectral-norm estimate with the singular pair that realized it.
#[derive(Debug, Clone)]
pub struct SpectralData {
    pub sigma: f64,
    /// Left singular vector (length = rows), zero when `sigma == 0`.
    pub u: Vec<f64>,
    /// Right singular vector (length = cols), unit norm.
    pub v: Vec<f64>,
    pub iterations: usize,
}

fn normalize(v: &mut [f64]) -> f64 {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        for x in v.iter_mut() {
            *x /= n;
        }
    }
    n
}

/// One power-iteration run on `M^T M` from a given start vector.
/// Returns `(lambda, v, iterations)` or `Convergence` on budget exhaustion.
fn power_iterate(
    m: &Matrix,
    start: &[f64],
    tol: f64,
    max_iters: usize,
) -> Result<(f64, Vec<f64>, usize), NumericsError> {
    let mut v = start.to_vec();
    normalize(&mut v);
    let mut lambda_prev = f64::NAN;
    let mut tmp = vec![0.0; m.rows()];
    let mut w = vec![0.0; m.cols()];
    for it in 1..=max_iters {
        // tmp = M v ; w = M^T tmp
        for i in 0..m.rows() {
            let row = &m.as_slice()[i * m.cols()..(i + 1) * m.cols()];
            tmp[i] = row.iter().zip(&v).map(|(a, b)| a * b).sum();
        }
        for x in w.iter_mut() {
            *x = 0.0;
        }
        for i in 0..m.rows() {
            let row = &m.as_slice()[i * m.cols()..(i + 1) * m.cols()];
            let t = tmp[i];
            if t != 0.0 {
                for (wx, a) in w.iter_mut().zip(row) {
                    *wx += a * t;
                }
            }
        }
        let lambda: f64 = v.iter().zip(&w).map(|(a, b)| a * b).sum();
        let wnorm = normalize(&mut w);
        if wnorm == 0.0 {
            // v is in the null space of M^T M.
            return Ok((0.0, v, it));
        }
        std::mem::swap(&mut v, &mut w);
        if it > 1 && (lambda - lambda_prev).abs() <= tol * lambda.abs().max(1e-300) {
            return Ok((lambda.max(0.0), v, it));
        }
        lambda_prev = lambda;
    }
    Err(NumericsError::Convergence {
        iterations: max_iters,
        last: lambda_prev.abs().sqrt(),
    })
}

fn seeded_direction(len: usize, seed: u64) -> Vec<f64> {
    // Small deterministic xorshift draw; avoids pulling an RNG crate into the kernel.
    let mut state = seed | 1;
    let mut v = Vec::with_capacity(len);
    for _ in 0..len {
        state ^= state << 13;
        state ^= state >> 7;
        state ^= state << 17;
        v.push((state as f64 / u64::MAX as f64) * 2.0 - 1.0);
    }
    v
}

/// Largest eigenvalue of a symmetric matrix together with its eigenvector,
/// by cyclic Jacobi rotations with explicit rotation accumulation. Unlike
/// power iteration, convergence does not depend on eigenvalue gaps.
fn jacobi_top_eigenpair(m: &Matrix) -> Result<(f64, Vec<f64>), NumericsError> {
    let n = m.rows();
    let mut a = m.symmetrize();
    let mut vecs = Matrix::identity(n);
    if n == 1 {
        return Ok((a[(0, 0)], vec![1.0]));
    }
    let norm = a.frobenius().max(1e-300);
    let target = JACOBI_TOL.max(f64::EPSILON) * norm;
    let off = |a: &Matrix| -> f64 {
        let mut s = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                s += 2.0 * a[(i, j)] * a[(i, j)];
            }
        }
        s.sqrt()
    };
    let mut sweeps = 0;
    while off(&a) > target {
        if sweeps >= JACOBI_MAX_SWEEPS {
            return Err(NumericsError::Convergence {
                iterations: sweeps,
                last: off(&a),
            });
        }
        for p in 0..n - 1 {
            for q in (p + 1)..n {
                let apq = a[(p, q)];
                if apq.abs() <= f64::EPSILON * norm {
                    a[(p, q)] = 0.0;
                    a[(q, p)] = 0.0;
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = vecs[(k, p)];
                    let vkq = vecs[(k, q)];
                    vecs[(k, p)] = c * vkp - s * vkq;
                    vecs[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
        sweeps += 1;
    }
    let top = (0..n)
        .max_by(|&i, &j| a[(i, i)].partial_cmp(&a[(j, j)]).unwrap())
        .unwrap();
    Ok((a[(top, top)], (0..n).map(|k| vecs[(k, top)]).collect()))
}

/// Exact top Gram eigenpair for a stalled power iteration: diagonalizes the
/// smaller of `M^T M` / `M M^T` and returns `(lambda_max, right vector)`.
/// Power iteration stalls precisely when the two leading singular values
/// nearly coincide; the dense route is gap-independent and, on the small
/// matrices this crate works with, cheap.
fn gram_top_right_vector(m: &Matrix) -> Result<(f64, Vec<f64>), NumericsError> {
    if m.cols() <= m.rows() {
        return jacobi_top_eigenpair(&m.tr_mul(m));
    }
    let (lambda, u) = jacobi_top_eigenpair(&m.mul(&m.t()))?;
    // Map the left-side eigenvector to the right singular vector.
    let mut v = vec![0.0; m.cols()];
    for i in 0..m.rows() {
        let ui = u[i];
        if ui != 0.0 {
            let row = &m.as_slice()[i * m.cols()..(i + 1) * m.cols()];
            for (slot, a) in v.iter_mut().zip(row) {
                *slot += a * ui;
            }
        }
    }
    if normalize(&mut v) == 0.0 {
        v[0] = 1.0;
    }
    Ok((lambda, v))
}

/// Largest singular value via power iteration on `M^T M`.
///
/// Starts from the normalized all-ones vector (or `warm` when provided).
/// Without a warm start the estimate is verified from a second, deterministic
/// pseudo-random direction, which guards against starts orthogonal to the top
/// singular subspace; the larger estimate wins. When the iteration exhausts
/// its budget — which happens when the two leading singular values are nearly
/// tied, making the gap-driven rate arbitrarily slow — the norm is recovered
/// exactly from a dense Jacobi decomposition of the Gram matrix instead of
/// failing.
pub fn spectral_norm_detailed(
    m: &Matrix,
    tol: f64,
    max_iters: usize,
    warm: Option<&[f64]>,
) -> Result<SpectralData, NumericsError> {
    if m.max_abs_val() == 0.0 {
        return Ok(SpectralData {
            sigma: 0.0,
            u: vec![0.0; m.rows()],
            v: {
                let mut e = vec![0.0; m.cols()];
                e[0] = 1.0;
                e
            },
            iterations: 0,
        });
    }
    let budget = max_iters.max(2);
    let attempt = match warm {
        Some(w0) if w0.len() == m.cols() && w0.iter().any(|x| *x != 0.0) => {
            power_iterate(m, w0, tol, budget)
        }
        _ => {
            let ones = vec![1.0; m.cols()];
            // Phase 1 with restart-on-stagnation: if the deterministic start
            // exhausts half the budget, retry from a pseudo-random direction.
            power_iterate(m, &ones, tol, budget / 2)
                .or_else(|_| power_iterate(m, &seeded_direction(m.cols(), 0x5EED_0001), tol, budget))
        }
    };
    let mut exact = false;
    let (mut lambda, mut v, mut iters) = match attempt {
        Ok(r) => r,
        Err(NumericsError::Convergence { .. }) => {
            let (l, w) = gram_top_right_vector(m)?;
            exact = true;
            (l, w, budget)
        }
        Err(e) => return Err(e),
    };
    if warm.is_none() && !exact {
        // Verification phase from an independent direction.
        match power_iterate(m, &seeded_direction(m.cols(), 0x5EED_0002), tol, budget) {
            Ok((l2, v2, it2)) => {
                iters += it2;
                if l2 > lambda {
                    lambda = l2;
                    v = v2;
                }
            }
            Err(NumericsError::Convergence { .. }) => {
                // The dense answer dominates any Rayleigh quotient.
                let (l2, v2) = gram_top_right_vector(m)?;
                iters += budget;
                lambda = l2;
                v = v2;
            }
            Err(e) => return Err(e),
        }
    }
    let sigma = lambda.max(0.0).sqrt();
    let mut u = vec![0.0; m.rows()];
    if sigma > 0.0 {
        for i in 0..m.rows() {
            let row = &m.as_slice()[i * m.cols()..(i + 1) * m.cols()];
            u[i] = row.iter().zip(&v).map(|(a, b)| a * b).sum::<f64>() / sigma;
        }
    }
    Ok(SpectralData {
        sigma,
        u,
        v,
        iterations: iters,
    })
}

/// Largest singular value with default tolerances; see [`spectral_norm_detailed`].
pub fn spectral_norm(m: &Matrix) -> Result<f64, NumericsError> {
    spectral_norm_detailed(m, SPECTRAL_TOL, SPECTRAL_MAX_ITERS, None).map(|d| d.sigma)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mat(rows: usize, cols: usize, data: &[f64]) -> Matrix {
        Matrix::new(rows, cols, data.to_vec()).unwrap()
    }

    #[test]
    fn determinant_from_lu_pivots() {
        // Hand values: det [[1,2],[3,4]] = -2; a permutation-heavy case where
        // pivoting reorders rows: det [[0,1],[1,0]] = -1.
        let d1 = lu_factor(&mat(2, 2, &[1.0, 2.0, 3.0, 4.0])).unwrap().det();
        assert!((d1 + 2.0).abs() < 1e-12, "got {d1}");
        let d2 = lu_factor(&mat(2, 2, &[0.0, 1.0, 1.0, 0.0])).unwrap().det();
        assert!((d2 + 1.0).abs() < 1e-12, "got {d2}");
        // Cofactor expansion: 2*(3*1-0) - 0 + 1*(0-3*1) = 3.
        let d3 = lu_factor(&mat(3, 3, &[2.0, 0.0, 1.0, 0.0, 3.0, 0.0, 1.0, 0.0, 1.0]))
            .unwrap()
            .det();
        assert!((d3 - 3.0).abs() < 1e-12, "got {d3}");
    }

    #[test]
    fn new_rejects_non_finite_entries() {
        let err = Matrix::new(1, 2, vec![1.0, f64::NAN]).unwrap_err();
        assert!(matches!(err, NumericsError::NonFinite { row: 0, col: 1 }));
    }

    #[test]
    fn new_rejects_size_mismatch() {
        assert!(Matrix::new(2, 2, vec![1.0; 3]).is_err());
        assert!(Matrix::new(0, 2, vec![]).is_err());
    }

    #[test]
    fn matmul_matches_hand_example() {
        let a = mat(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let b = mat(3, 2, &[7.0, 8.0, 9.0, 10.0, 11.0, 12.0]);
        let c = a.mul(&b);
        assert_eq!(c.as_slice(), &[58.0, 64.0, 139.0, 154.0]);
        let ct = b.t().mul(&a.t());
        assert_eq!(ct.as_slice(), c.t().as_slice());
    }

    #[test]
    fn tr_mul_and_mul_tr_agree_with_explicit_transpose() {
        let a = mat(3, 2, &[1.0, -2.0, 0.5, 3.0, -1.0, 4.0]);
        let b = mat(3, 4, &[0.1, 1.0, 2.0, -0.3, 0.7, -1.5, 0.2, 0.9, 1.1, 0.0, -2.0, 0.4]);
        assert_eq!(a.tr_mul(&b).as_slice(), a.t().mul(&b).as_slice());
        let c = mat(5, 4, &(0..20).map(|k| k as f64 * 0.3 - 2.0).collect::<Vec<_>>());
        assert_eq!(b.mul_tr(&c).as_slice(), b.mul(&c.t()).as_slice());
    }

    #[test]
    fn solve_recovers_known_solution() {
        // Oracle: x chosen first, rhs = M x computed by hand-checkable product.
        let m = mat(3, 3, &[4.0, 1.0, 0.0, 1.0, 3.0, -1.0, 0.0, -1.0, 2.0]);
        let x_true = mat(3, 1, &[1.0, -2.0, 0.5]);
        let rhs = m.mul(&x_true);
        let x = solve(&m, &rhs).unwrap();
        for (a, b) in x.as_slice().iter().zip(x_true.as_slice()) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn solve_requires_pivoting() {
        // Zero leading pivot forces a row swap.
        let m = mat(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        let rhs = mat(2, 1, &[3.0, 7.0]);
        let x = solve(&m, &rhs).unwrap();
        assert!((x[(0, 0)] - 7.0).abs() < 1e-15);
        assert!((x[(1, 0)] - 3.0).abs() < 1e-15);
    }

    #[test]
    fn singular_matrix_is_reported() {
        let m = mat(2, 2, &[1.0, 2.0, 2.0, 4.0]);
        let rhs = mat(2, 1, &[1.0, 1.0]);
        match solve(&m, &rhs) {
            Err(NumericsError::Singular { .. }) => {}
            other => panic!("expected Singular, got {other:?}"),
        }
    }

    #[test]
    fn cholesky_of_hand_factored_matrix() {
        // Oracle: L chosen first, M = L L^T computed independently.
        // L = [[2,0,0],[1,3,0],[-1,0.5,1.5]]
        let l_true = mat(3, 3, &[2.0, 0.0, 0.0, 1.0, 3.0, 0.0, -1.0, 0.5, 1.5]);
        let m = l_true.mul(&l_true.t());
        let l = cholesky(&m).unwrap();
        for (a, b) in l.as_slice().iter().zip(l_true.as_slice()) {
            assert!((a - b).abs() < 1e-12);
        }
        // Round-trip residual contract.
        let resid = l.mul(&l.t()).sub(&m).frobenius();
        assert!(resid <= 1e-12 * m.frobenius());
    }

    #[test]
    fn cholesky_rejects_indefinite_and_asymmetric() {
        let indef = mat(2, 2, &[1.0, 2.0, 2.0, 1.0]); // eigenvalues 3, -1
        assert!(matches!(
            cholesky(&indef),
            Err(NumericsError::NotPositiveDefinite { .. })
        ));
        let asym = mat(2, 2, &[1.0, 0.5, -0.5, 1.0]);
        assert!(matches!(
            cholesky(&asym),
            Err(NumericsError::NotSymmetric { .. })
        ));
    }

    #[test]
    fn sym_eig_on_diagonal_and_rotation_oracle() {
        // Diagonal case: eigenvalues are the diagonal.
        let d = mat(3, 3, &[3.0, 0.0, 0.0, 0.0, -1.0, 0.0, 0.0, 0.0, 0.5]);
        let s = sym_eig(&d, JACOBI_TOL).unwrap();
        assert_eq!(s.eigenvalues.len(), 3);
        assert!((s.min_eig() + 1.0).abs() < 1e-12);
        assert!((s.max_eig() - 3.0).abs() < 1e-12);

        // Rotation oracle: conjugate a known diagonal by a Givens rotation;
        // the spectrum is invariant.
        let (c, sn) = (0.6, 0.8);
        let g = mat(2, 2, &[c, -sn, sn, c]);
        let lam = mat(2, 2, &[2.0, 0.0, 0.0, -5.0]);
        let m = g.mul(&lam).mul(&g.t());
        let s = sym_eig(&m, JACOBI_TOL).unwrap();
        assert!((s.min_eig() + 5.0).abs() < 1e-10);
        assert!((s.max_eig() - 2.0).abs() < 1e-10);
    }

    #[test]
    fn sym_eig_2x2_closed_form() {
        // Closed-form oracle for [[a,b],[b,c]].
        let (a, b, c) = (1.3, -0.7, 2.9);
        let m = mat(2, 2, &[a, b, b, c]);
        let mean = 0.5 * (a + c);
        let r = ((0.5 * (a - c)).powi(2) + b * b).sqrt();
        let s = sym_eig(&m, JACOBI_TOL).unwrap();
        assert!((s.min_eig() - (mean - r)).abs() < 1e-12);
        assert!((s.max_eig() - (mean + r)).abs() < 1e-12);
    }

    #[test]
    fn sym_eig_rejects_asymmetric() {
        let m = mat(2, 2, &[1.0, 1.0, 0.0, 1.0]);
        assert!(matches!(
            sym_eig(&m, JACOBI_TOL),
            Err(NumericsError::NotSymmetric { .. })
        ));
    }

    #[test]
    fn spectral_norm_hand_cases() {
        // Diagonal: sigma = max |entry|.
        let d = mat(2, 2, &[3.0, 0.0, 0.0, -5.0]);
        assert!((spectral_norm(&d).unwrap() - 5.0).abs() < 1e-9);
        // Nilpotent [[0,2],[0,0]]: M^T M = diag(0,4), sigma = 2.
        let nil = mat(2, 2, &[0.0, 2.0, 0.0, 0.0]);
        assert!((spectral_norm(&nil).unwrap() - 2.0).abs() < 1e-9);
        // Zero matrix.
        assert_eq!(spectral_norm(&Matrix::zeros(3, 2)).unwrap(), 0.0);
        // Rank-one u v^T has sigma = |u| |v|.
        let u = mat(3, 1, &[1.0, 2.0, -2.0]); // norm 3
        let v = mat(1, 2, &[0.6, 0.8]); // norm 1
        let m = u.mul(&v);
        assert!((spectral_norm(&m).unwrap() - 3.0).abs() < 1e-9);
    }

    #[test]
    fn spectral_norm_survives_adversarial_start() {
        // Top right-singular direction (1,-1)/sqrt(2) is orthogonal to the
        // all-ones start; the verification phase must still find sigma = 4.
        let q = [
            std::f64::consts::FRAC_1_SQRT_2,
            std::f64::consts::FRAC_1_SQRT_2,
            -std::f64::consts::FRAC_1_SQRT_2,
            std::f64::consts::FRAC_1_SQRT_2,
        ];
        let qm = mat(2, 2, &q);
        let d = mat(2, 2, &[1.0, 0.0, 0.0, 4.0]);
        let m = qm.mul(&d).mul(&qm.t()); // symmetric, eigenvalues 1 and 4
        let s = spectral_norm(&m).unwrap();
        assert!((s - 4.0).abs() < 1e-8, "sigma = {s}");
    }

    #[test]
    fn spectral_norm_survives_nearly_tied_leading_singular_values() {
        // Leading singular values 1e-9 apart: the gap-driven power method
        // cannot reach its tolerance within any reasonable budget, so the
        // dense Gram fallback must deliver the (closed-form) answer. Mixing
        // with rotations keeps the Gram matrix non-diagonal, and a wide
        // shape exercises the row-side branch of the fallback.
        let (c1, s1) = (0.3f64.cos(), 0.3f64.sin());
        let (c2, s2) = (0.7f64.cos(), 0.7f64.sin());
        let r1 = mat(3, 3, &[c1, -s1, 0.0, s1, c1, 0.0, 0.0, 0.0, 1.0]);
        let r2 = mat(3, 3, &[1.0, 0.0, 0.0, 0.0, c2, -s2, 0.0, s2, c2]);
        let d = mat(3, 3, &[2.0, 0.0, 0.0, 0.0, 2.0 - 2e-9, 0.0, 0.0, 0.0, 1.0]);
        let m = r1.mul(&d).mul(&r2);
        let data = spectral_norm_detailed(&m, SPECTRAL_TOL, SPECTRAL_MAX_ITERS, None).unwrap();
        assert!((data.sigma - 2.0).abs() < 1e-9, "sigma = {}", data.sigma);
        // The returned pair must reproduce sigma as u' M v (the derivative
        // rule downstream relies on it).
        let mut mv = vec![0.0; 3];
        for i in 0..3 {
            for j in 0..3 {
                mv[i] += m[(i, j)] * data.v[j];
            }
        }
        let through_pair: f64 = data.u.iter().zip(&mv).map(|(a, b)| a * b).sum();
        assert!(
            (through_pair - data.sigma).abs() < 1e-9,
            "u' M v = {through_pair}"
        );

        let wide = mat(2, 3, &[2.0, 0.0, 0.0, 0.0, 2.0 - 2e-9, 0.0]);
        let s = spectral_norm(&wide).unwrap();
        assert!((s - 2.0).abs() < 1e-9, "sigma = {s}");
    }

    #[test]
    fn spectral_norm_scales_linearly() {
        let m = mat(2, 3, &[1.0, -2.0, 0.5, 3.0, 0.1, -1.0]);
        let s1 = spectral_norm(&m).unwrap();
        let s2 = spectral_norm(&m.scale(-2.5)).unwrap();
        assert!((s2 - 2.5 * s1).abs() < 1e-8 * s1.max(1.0));
        // Transpose invariance.
        let st = spectral_norm(&m.t()).unwrap();
        assert!((st - s1).abs() < 1e-8);
    }

    #[test]
    fn matrix_json_round_trip_is_exact() {
        let m = mat(
            2,
            2,
            &[
                1.0 / 3.0,
                -2.718281828459045,
                1e-13,
                6.02214076e23,
            ],
        );
        let text = serde_json::to_string(&m).unwrap();
        let back: Matrix = serde_json::from_str(&text).unwrap();
        assert_eq!(m.as_slice(), back.as_slice());
    }
}
