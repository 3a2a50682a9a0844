//! Dense-matrix statistics shared by the estimators: the quadratic forms in
//! the response, spectral moments of the sample covariance of the design,
//! AR(1) covariance builders and symmetric square-root factors.

use std::ops::{Add, Index, Mul, Sub};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SnrError};

/// Dense real matrix (designs, responses, coefficient matrices).
pub type Matrix = DMatrix<f64>;

/// Square matrix whose stored entries are exactly symmetric.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix(Matrix);

impl SymMatrix {
    /// Symmetrizes `m` as `(m + mᵀ)/2`.
    pub fn from_matrix(m: Matrix) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(SnrError::DimensionMismatch {
                context: "symmetric matrix must be square",
                expected: m.nrows(),
                actual: m.ncols(),
            });
        }
        let mut m = m;
        symmetrize_in_place(&mut m);
        Ok(SymMatrix(m))
    }

    pub fn from_fn(dim: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        let mut m = Matrix::from_fn(dim, dim, f);
        symmetrize_in_place(&mut m);
        SymMatrix(m)
    }

    pub fn zeros(dim: usize) -> Self {
        SymMatrix(Matrix::zeros(dim, dim))
    }

    pub fn identity(dim: usize) -> Self {
        SymMatrix(Matrix::identity(dim, dim))
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        let d = diag.len();
        SymMatrix(Matrix::from_fn(d, d, |i, j| if i == j { diag[i] } else { 0.0 }))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn into_matrix(self) -> Matrix {
        self.0
    }

    pub fn trace(&self) -> f64 {
        self.0.trace()
    }

    /// `‖A‖_F² = tr(A²)`.
    pub fn frobenius_sq(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum()
    }

    /// `tr(AB)` for symmetric `A`, `B`, evaluated as `Σ A_ij B_ij`.
    pub fn trace_product(&self, other: &SymMatrix) -> f64 {
        assert_eq!(self.dim(), other.dim(), "trace_product dimension mismatch");
        self.0.iter().zip(other.0.iter()).map(|(a, b)| a * b).sum()
    }

    pub fn scale(&self, c: f64) -> SymMatrix {
        SymMatrix(&self.0 * c)
    }

    /// Eigenvalues in ascending order.
    pub fn eigenvalues(&self) -> Vec<f64> {
        let mut ev: Vec<f64> = self.0.clone().symmetric_eigenvalues().iter().copied().collect();
        ev.sort_by(f64::total_cmp);
        ev
    }

    /// Spectral norm `max |λ|`.
    pub fn operator_norm(&self) -> f64 {
        self.eigenvalues().iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    /// Largest absolute entry.
    pub fn max_abs(&self) -> f64 {
        self.0.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.dim()).map(|i| self.0[(i, i)]).collect()
    }

    /// Row-major nested vectors, for serialization.
    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.dim()).map(|i| (0..self.dim()).map(|j| self.0[(i, j)]).collect()).collect()
    }
}

impl Index<(usize, usize)> for SymMatrix {
    type Output = f64;
    fn index(&self, idx: (usize, usize)) -> &f64 {
        &self.0[idx]
    }
}

impl Add for &SymMatrix {
    type Output = SymMatrix;
    fn add(self, rhs: &SymMatrix) -> SymMatrix {
        SymMatrix(&self.0 + &rhs.0)
    }
}

impl Sub for &SymMatrix {
    type Output = SymMatrix;
    fn sub(self, rhs: &SymMatrix) -> SymMatrix {
        SymMatrix(&self.0 - &rhs.0)
    }
}

impl Mul<f64> for &SymMatrix {
    type Output = SymMatrix;
    fn mul(self, c: f64) -> SymMatrix {
        self.scale(c)
    }
}

impl Serialize for SymMatrix {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_rows().serialize(s)
    }
}

impl<'de> Deserialize<'de> for SymMatrix {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let rows: Vec<Vec<f64>> = Vec::deserialize(d)?;
        let dim = rows.len();
        if rows.iter().any(|r| r.len() != dim) {
            return Err(serde::de::Error::custom("symmetric matrix rows must be square"));
        }
        Ok(SymMatrix::from_fn(dim, |i, j| rows[i][j]))
    }
}

fn symmetrize_in_place(m: &mut Matrix) {
    let d = m.nrows();
    for j in 0..d {
        for i in (j + 1)..d {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

/// `AᵀA`, routed through the blocked GEMM kernel.
pub fn gram(a: &Matrix) -> SymMatrix {
    let m = a.transpose() * a;
    SymMatrix::from_matrix(m).expect("gram is square")
}

/// `AAᵀ`.
pub fn outer_gram(a: &Matrix) -> SymMatrix {
    let m = a * a.transpose();
    SymMatrix::from_matrix(m).expect("outer gram is square")
}

/// The observable quadratic forms of the response.
#[derive(Debug, Clone)]
pub struct CrossProducts {
    /// `YᵀY`
    pub yty: SymMatrix,
    /// `XᵀY`
    pub xty: Matrix,
    /// `YᵀXXᵀY = (XᵀY)ᵀ(XᵀY)`
    pub ytxxty: SymMatrix,
}

pub fn cross_products(x: &Matrix, y: &Matrix) -> Result<CrossProducts> {
    if x.nrows() != y.nrows() {
        return Err(SnrError::DimensionMismatch {
            context: "X and Y row counts",
            expected: x.nrows(),
            actual: y.nrows(),
        });
    }
    let xty = x.transpose() * y;
    let yty = gram(y);
    let ytxxty = gram(&xty);
    Ok(CrossProducts { yty, xty, ytxxty })
}

/// `ĝ_k = (1/p) tr(S_nᵏ)` for `k = 1..4`, with `S_n = XᵀX/n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectralMoments {
    pub g1: f64,
    pub g2: f64,
    pub g3: f64,
    pub g4: f64,
    /// `p/n`
    pub aspect: f64,
    /// `ĝ₂ − (p/n)ĝ₁²`
    pub denom: f64,
    pub n: usize,
    pub p: usize,
}

impl SpectralMoments {
    /// Builds the moment record from `g1..g4` and the dimensions.
    pub fn from_moments(g: [f64; 4], n: usize, p: usize) -> Self {
        let aspect = p as f64 / n as f64;
        SpectralMoments { g1: g[0], g2: g[1], g3: g[2], g4: g[3], aspect, denom: g[1] - aspect * g[0] * g[0], n, p }
    }

    /// `|denom| ≤ 1e−10·max(ĝ₂, (p/n)ĝ₁²)`.
    pub fn is_singular(&self) -> bool {
        let scale = self.g2.max(self.aspect * self.g1 * self.g1);
        !(self.denom.abs() > 1e-10 * scale)
    }
}

/// Spectral moments of `S_n = XᵀX/n` from the eigenvalues of the smaller
/// Gram matrix (`XᵀX/n` when `p ≤ n`, else `XXᵀ/n`; the nonzero spectra agree).
pub fn spectral_moments(x: &Matrix) -> SpectralMoments {
    let (n, p) = x.shape();
    let small = if p <= n { gram(x) } else { outer_gram(x) };
    let eig = small.scale(1.0 / n as f64).eigenvalues();
    let mut g = [0.0; 4];
    for &lam in &eig {
        let l = lam.max(0.0);
        let l2 = l * l;
        g[0] += l;
        g[1] += l2;
        g[2] += l2 * l;
        g[3] += l2 * l2;
    }
    for v in &mut g {
        *v /= p as f64;
    }
    SpectralMoments::from_moments(g, n, p)
}

/// AR(1) correlation matrix with entries `phi^|i−j|`.
pub fn ar1_matrix(dim: usize, phi: f64) -> Result<SymMatrix> {
    if dim == 0 {
        return Err(SnrError::InvalidParameter("ar1 dimension must be positive".into()));
    }
    if !(phi.abs() < 1.0) {
        return Err(SnrError::InvalidParameter(format!("ar1 requires |phi| < 1, got {phi}")));
    }
    Ok(SymMatrix::from_fn(dim, |i, j| phi.powi(i.abs_diff(j) as i32)))
}

/// Lower-triangular `L` with `LLᵀ = S` for positive semidefinite `S`.
///
/// Zero pivots (within `1e−10·max|S_ii|`) are allowed and produce zero
/// columns, so rank-deficient covariances such as `S = 0` factor cleanly.
pub fn sym_factor(s: &SymMatrix) -> Result<Matrix> {
    let d = s.dim();
    let scale = s.diagonal().iter().fold(0.0_f64, |m, v| m.max(v.abs())).max(s.max_abs());
    let tol = 1e-10 * scale;
    let off_tol = 1e-5 * scale;
    // row-major lower triangle
    let mut l = vec![0.0; d * d];
    for j in 0..d {
        let row_j = j * d;
        let mut pivot = s[(j, j)];
        for k in 0..j {
            pivot -= l[row_j + k] * l[row_j + k];
        }
        if pivot < -tol {
            return Err(SnrError::NotPositiveSemiDefinite { index: j, pivot });
        }
        if pivot <= tol {
            for i in (j + 1)..d {
                let row_i = i * d;
                let mut v = s[(i, j)];
                for k in 0..j {
                    v -= l[row_i + k] * l[row_j + k];
                }
                if v.abs() > off_tol {
                    return Err(SnrError::NotPositiveSemiDefinite { index: j, pivot });
                }
            }
            continue;
        }
        let diag = pivot.sqrt();
        l[row_j + j] = diag;
        for i in (j + 1)..d {
            let row_i = i * d;
            let mut v = s[(i, j)];
            for k in 0..j {
                v -= l[row_i + k] * l[row_j + k];
            }
            l[row_i + j] = v / diag;
        }
    }
    Ok(Matrix::from_row_slice(d, d, &l))
}
