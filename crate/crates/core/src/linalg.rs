//! Small dense and diagonal linear algebra.
//!
//! Everything here is sized for problems with at most a few hundred
//! coordinates: dense matrices are row-major `Vec<f64>`, solves go through a
//! Cholesky factor computed once at construction, and eigenvalues come from
//! cyclic Jacobi rotations.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Lower bound applied to every preconditioner eigenvalue / diagonal entry.
pub const EPS_FLOOR: f64 = 1e-8;

/// Maximum number of Jacobi sweeps before giving up.
pub const MAX_JACOBI_SWEEPS: usize = 50;

/// Relative tolerance used when checking symmetry of an input matrix.
pub const SYMMETRY_TOL: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("matrix is not positive definite (pivot {pivot} = {value})")]
    NotPositiveDefinite { pivot: usize, value: f64 },
    #[error("matrix is not symmetric: |a[{i}][{j}] - a[{j}][{i}]| = {gap}")]
    NotSymmetric { i: usize, j: usize, gap: f64 },
    #[error("Jacobi eigensolver did not converge after {0} sweeps")]
    NoConvergence(usize),
    #[error("diagonal entry {index} = {value} is not strictly positive")]
    NonPositiveEntry { index: usize, value: f64 },
    #[error("non-finite value encountered")]
    NonFinite,
}

pub type Result<T> = std::result::Result<T, LinalgError>;

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2_sq(a: &[f64]) -> f64 {
    dot(a, a)
}

/// `a - b`, element-wise.
pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

/// `y += alpha * x`
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

fn check_dim(expected: usize, found: usize) -> Result<()> {
    if expected != found {
        return Err(LinalgError::DimensionMismatch { expected, found });
    }
    Ok(())
}

/// Square dense matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    n: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(n: usize) -> Self {
        Matrix { n, data: vec![0.0; n * n] }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_diag(&vec![1.0; n])
    }

    pub fn from_diag(diag: &[f64]) -> Self {
        let n = diag.len();
        let mut m = Self::zeros(n);
        for (i, &d) in diag.iter().enumerate() {
            m.data[i * n + i] = d;
        }
        m
    }

    pub fn from_row_major(n: usize, data: Vec<f64>) -> Result<Self> {
        check_dim(n * n, data.len())?;
        Ok(Matrix { n, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let mut data = Vec::with_capacity(n * n);
        for r in rows {
            check_dim(n, r.len())?;
            data.extend_from_slice(r);
        }
        Ok(Matrix { n, data })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.n + j] = v;
    }

    #[inline]
    pub fn add_to(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.n + j] += v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    pub fn diag(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, i)).collect()
    }

    pub fn trace(&self) -> f64 {
        (0..self.n).map(|i| self.get(i, i)).sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn frobenius(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn mul_vec(&self, v: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.n, v.len())?;
        Ok((0..self.n).map(|i| dot(self.row(i), v)).collect())
    }

    pub fn mul(&self, other: &Matrix) -> Result<Matrix> {
        check_dim(self.n, other.n)?;
        let n = self.n;
        let mut out = Matrix::zeros(n);
        for i in 0..n {
            for k in 0..n {
                let a = self.get(i, k);
                if a == 0.0 {
                    continue;
                }
                for j in 0..n {
                    out.data[i * n + j] += a * other.get(k, j);
                }
            }
        }
        Ok(out)
    }

    pub fn transpose(&self) -> Matrix {
        let n = self.n;
        let mut out = Matrix::zeros(n);
        for i in 0..n {
            for j in 0..n {
                out.data[j * n + i] = self.get(i, j);
            }
        }
        out
    }

    pub fn scaled(&self, c: f64) -> Matrix {
        Matrix { n: self.n, data: self.data.iter().map(|v| c * v).collect() }
    }

    /// `a·self + b·other`
    pub fn lincomb(&self, a: f64, other: &Matrix, b: f64) -> Result<Matrix> {
        check_dim(self.n, other.n)?;
        let data = self.data.iter().zip(&other.data).map(|(x, y)| a * x + b * y).collect();
        Ok(Matrix { n: self.n, data })
    }

    /// Verifies symmetry to [`SYMMETRY_TOL`] relative to the largest entry.
    pub fn check_symmetric(&self, rel_tol: f64) -> Result<()> {
        let scale = self.max_abs().max(f64::MIN_POSITIVE);
        for i in 0..self.n {
            for j in (i + 1)..self.n {
                let gap = (self.get(i, j) - self.get(j, i)).abs();
                if !(gap <= rel_tol * scale) {
                    return Err(LinalgError::NotSymmetric { i, j, gap });
                }
            }
        }
        Ok(())
    }

    /// Averages the matrix with its transpose.
    pub fn symmetrize(&mut self) {
        let n = self.n;
        for i in 0..n {
            for j in (i + 1)..n {
                let v = 0.5 * (self.get(i, j) + self.get(j, i));
                self.set(i, j, v);
                self.set(j, i, v);
            }
        }
    }

    /// Lower triangle packed row by row: (0,0), (1,0), (1,1), (2,0), ...
    pub fn lower_triangle(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n * (self.n + 1) / 2);
        for i in 0..self.n {
            for j in 0..=i {
                out.push(self.get(i, j));
            }
        }
        out
    }

    pub fn from_lower_triangle(n: usize, packed: &[f64]) -> Result<Matrix> {
        check_dim(n * (n + 1) / 2, packed.len())?;
        let mut m = Matrix::zeros(n);
        let mut k = 0;
        for i in 0..n {
            for j in 0..=i {
                m.set(i, j, packed[k]);
                m.set(j, i, packed[k]);
                k += 1;
            }
        }
        Ok(m)
    }
}

/// Lower-triangular Cholesky factor `L` with `A = L Lᵀ`.
#[derive(Debug, Clone, PartialEq)]
pub struct Cholesky {
    l: Matrix,
}

impl Cholesky {
    pub fn factor(a: &Matrix) -> Result<Cholesky> {
        let n = a.dim();
        let mut l = Matrix::zeros(n);
        for i in 0..n {
            for j in 0..=i {
                let mut sum = a.get(i, j);
                for k in 0..j {
                    sum -= l.get(i, k) * l.get(j, k);
                }
                if i == j {
                    if !(sum > 0.0) || !sum.is_finite() {
                        return Err(LinalgError::NotPositiveDefinite { pivot: i, value: sum });
                    }
                    l.set(i, i, sum.sqrt());
                } else {
                    l.set(i, j, sum / l.get(j, j));
                }
            }
        }
        Ok(Cholesky { l })
    }

    pub fn factor_matrix(&self) -> &Matrix {
        &self.l
    }

    /// Solves `L y = b`.
    pub fn forward(&self, b: &[f64]) -> Vec<f64> {
        let n = self.l.dim();
        let mut y = vec![0.0; n];
        for i in 0..n {
            let row = self.l.row(i);
            let s = b[i] - dot(&row[..i], &y[..i]);
            y[i] = s / row[i];
        }
        y
    }

    /// Solves `Lᵀ x = y`.
    pub fn backward(&self, y: &[f64]) -> Vec<f64> {
        let n = self.l.dim();
        let mut x = vec![0.0; n];
        for i in (0..n).rev() {
            let mut s = y[i];
            for k in (i + 1)..n {
                s -= self.l.get(k, i) * x[k];
            }
            x[i] = s / self.l.get(i, i);
        }
        x
    }

    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.l.dim(), b.len())?;
        Ok(self.backward(&self.forward(b)))
    }

    /// `L⁻¹ A L⁻ᵀ` for symmetric `A`; shares its spectrum with `A (L Lᵀ)⁻¹`.
    pub fn congruence_inverse(&self, a: &Matrix) -> Result<Matrix> {
        let n = self.l.dim();
        check_dim(n, a.dim())?;
        // Columns of L⁻¹ A, then the same from the right.
        let mut left = Matrix::zeros(n);
        for j in 0..n {
            let col: Vec<f64> = (0..n).map(|i| a.get(i, j)).collect();
            let y = self.forward(&col);
            for i in 0..n {
                left.set(i, j, y[i]);
            }
        }
        let mut out = Matrix::zeros(n);
        for i in 0..n {
            let y = self.forward(left.row(i));
            for j in 0..n {
                out.set(i, j, y[j]);
            }
        }
        out.symmetrize();
        Ok(out)
    }
}

/// Eigenvalues sorted ascending.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spectrum {
    pub eigenvalues: Vec<f64>,
}

impl Spectrum {
    pub fn new(mut eigenvalues: Vec<f64>) -> Self {
        eigenvalues.sort_by(|a, b| a.total_cmp(b));
        Spectrum { eigenvalues }
    }

    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }

    pub fn min(&self) -> f64 {
        self.eigenvalues.first().copied().unwrap_or(f64::NAN)
    }

    pub fn max(&self) -> f64 {
        self.eigenvalues.last().copied().unwrap_or(f64::NAN)
    }
}

/// Eigenpairs of a symmetric matrix; `vectors` holds eigenvector `k` in column `k`.
#[derive(Debug, Clone)]
pub struct EigenDecomposition {
    pub values: Vec<f64>,
    pub vectors: Matrix,
}

impl EigenDecomposition {
    /// `V diag(f(λ)) Vᵀ`
    pub fn reassemble(&self, f: impl Fn(f64) -> f64) -> Matrix {
        let n = self.values.len();
        let mapped: Vec<f64> = self.values.iter().map(|&l| f(l)).collect();
        let mut out = Matrix::zeros(n);
        for i in 0..n {
            for j in 0..=i {
                let s: f64 = (0..n).map(|k| self.vectors.get(i, k) * mapped[k] * self.vectors.get(j, k)).sum();
                out.set(i, j, s);
                out.set(j, i, s);
            }
        }
        out
    }
}

/// Cyclic Jacobi eigendecomposition of a symmetric matrix.
pub fn eigh(a: &Matrix) -> Result<EigenDecomposition> {
    a.check_symmetric(SYMMETRY_TOL)?;
    if a.as_slice().iter().any(|v| !v.is_finite()) {
        return Err(LinalgError::NonFinite);
    }
    let n = a.dim();
    let mut m = a.clone();
    m.symmetrize();
    let mut v = Matrix::identity(n);
    let mut d = m.diag();
    // Accumulated diagonal corrections within a sweep.
    let mut bw = d.clone();
    let mut zw = vec![0.0; n];

    let mut converged = n <= 1;
    for sweep in 0..MAX_JACOBI_SWEEPS {
        if converged {
            break;
        }
        let off: f64 = (0..n).flat_map(|p| ((p + 1)..n).map(move |q| (p, q))).map(|(p, q)| m.get(p, q).abs()).sum();
        if off == 0.0 {
            converged = true;
            break;
        }
        let thresh = if sweep < 3 { 0.2 * off / (n * n) as f64 } else { 0.0 };
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m.get(p, q);
                let g = 100.0 * apq.abs();
                if sweep > 3 && d[p].abs() + g == d[p].abs() && d[q].abs() + g == d[q].abs() {
                    m.set(p, q, 0.0);
                    m.set(q, p, 0.0);
                    continue;
                }
                if apq.abs() <= thresh {
                    continue;
                }
                let h = d[q] - d[p];
                let t = if h.abs() + g == h.abs() {
                    apq / h
                } else {
                    let theta = 0.5 * h / apq;
                    let t = 1.0 / (theta.abs() + (1.0 + theta * theta).sqrt());
                    if theta < 0.0 {
                        -t
                    } else {
                        t
                    }
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                let tau = s / (1.0 + c);
                let hh = t * apq;
                zw[p] -= hh;
                zw[q] += hh;
                d[p] -= hh;
                d[q] += hh;
                m.set(p, q, 0.0);
                m.set(q, p, 0.0);
                for r in 0..n {
                    if r == p || r == q {
                        continue;
                    }
                    let arp = m.get(r, p);
                    let arq = m.get(r, q);
                    let nrp = arp - s * (arq + tau * arp);
                    let nrq = arq + s * (arp - tau * arq);
                    m.set(r, p, nrp);
                    m.set(p, r, nrp);
                    m.set(r, q, nrq);
                    m.set(q, r, nrq);
                }
                for r in 0..n {
                    let vrp = v.get(r, p);
                    let vrq = v.get(r, q);
                    v.set(r, p, vrp - s * (vrq + tau * vrp));
                    v.set(r, q, vrq + s * (vrp - tau * vrq));
                }
            }
        }
        for p in 0..n {
            bw[p] += zw[p];
            d[p] = bw[p];
            zw[p] = 0.0;
        }
        for p in 0..n {
            m.set(p, p, d[p]);
        }
    }
    if !converged {
        let off: f64 = (0..n).flat_map(|p| ((p + 1)..n).map(move |q| (p, q))).map(|(p, q)| m.get(p, q).abs()).sum();
        if off != 0.0 {
            return Err(LinalgError::NoConvergence(MAX_JACOBI_SWEEPS));
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| d[i].total_cmp(&d[j]));
    let values: Vec<f64> = order.iter().map(|&k| d[k]).collect();
    let mut vectors = Matrix::zeros(n);
    for (new_k, &old_k) in order.iter().enumerate() {
        for r in 0..n {
            vectors.set(r, new_k, v.get(r, old_k));
        }
    }
    Ok(EigenDecomposition { values, vectors })
}

pub fn eig_sym(a: &Matrix) -> Result<Spectrum> {
    Ok(Spectrum { eigenvalues: eigh(a)?.values })
}

/// Strictly positive diagonal scaling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagonalPreconditioner {
    diag: Vec<f64>,
}

impl DiagonalPreconditioner {
    pub fn new(diag: Vec<f64>) -> Result<Self> {
        for (index, &value) in diag.iter().enumerate() {
            if !(value > 0.0) || !value.is_finite() {
                return Err(LinalgError::NonPositiveEntry { index, value });
            }
        }
        Ok(DiagonalPreconditioner { diag })
    }

    pub fn identity(n: usize) -> Self {
        DiagonalPreconditioner { diag: vec![1.0; n] }
    }

    /// Entry-wise `max(|v|, eps)`.
    pub fn floored(raw: &[f64], eps: f64) -> Self {
        DiagonalPreconditioner { diag: raw.iter().map(|v| v.abs().max(eps)).collect() }
    }

    pub fn diag(&self) -> &[f64] {
        &self.diag
    }

    pub fn dim(&self) -> usize {
        self.diag.len()
    }
}

/// Dense symmetric positive-definite preconditioner with cached Cholesky factor.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseSpdPreconditioner {
    matrix: Matrix,
    chol: Cholesky,
}

impl DenseSpdPreconditioner {
    pub fn new(matrix: Matrix) -> Result<Self> {
        matrix.check_symmetric(1e-12)?;
        let mut matrix = matrix;
        matrix.symmetrize();
        let chol = Cholesky::factor(&matrix)?;
        Ok(DenseSpdPreconditioner { matrix, chol })
    }

    pub fn matrix(&self) -> &Matrix {
        &self.matrix
    }

    pub fn cholesky(&self) -> &Cholesky {
        &self.chol
    }

    pub fn dim(&self) -> usize {
        self.matrix.dim()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Preconditioner {
    Diagonal(DiagonalPreconditioner),
    Dense(DenseSpdPreconditioner),
}

impl Preconditioner {
    pub fn identity(n: usize) -> Self {
        Preconditioner::Diagonal(DiagonalPreconditioner::identity(n))
    }

    pub fn diagonal(diag: Vec<f64>) -> Result<Self> {
        Ok(Preconditioner::Diagonal(DiagonalPreconditioner::new(diag)?))
    }

    pub fn dense(matrix: Matrix) -> Result<Self> {
        Ok(Preconditioner::Dense(DenseSpdPreconditioner::new(matrix)?))
    }

    pub fn dim(&self) -> usize {
        match self {
            Preconditioner::Diagonal(d) => d.dim(),
            Preconditioner::Dense(d) => d.dim(),
        }
    }

    pub fn is_diagonal(&self) -> bool {
        matches!(self, Preconditioner::Diagonal(_))
    }

    /// Solves `P u = v`.
    pub fn apply_inverse(&self, v: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.dim(), v.len())?;
        match self {
            Preconditioner::Diagonal(d) => Ok(v.iter().zip(&d.diag).map(|(x, p)| x / p).collect()),
            Preconditioner::Dense(d) => d.chol.solve(v),
        }
    }

    /// `P x`
    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.dim(), x.len())?;
        match self {
            Preconditioner::Diagonal(d) => Ok(x.iter().zip(&d.diag).map(|(x, p)| x * p).collect()),
            Preconditioner::Dense(d) => d.matrix.mul_vec(x),
        }
    }

    /// `⟨s, P⁻¹ s⟩`
    pub fn dual_norm_sq(&self, s: &[f64]) -> Result<f64> {
        check_dim(self.dim(), s.len())?;
        match self {
            Preconditioner::Diagonal(d) => Ok(s.iter().zip(&d.diag).map(|(x, p)| x * x / p).sum()),
            Preconditioner::Dense(d) => {
                // ‖L⁻¹ s‖² avoids the asymmetric rounding of sᵀ(P⁻¹ s).
                let y = d.chol.forward(s);
                Ok(norm2_sq(&y))
            }
        }
    }

    /// `⟨P x, x⟩`
    pub fn norm_sq(&self, x: &[f64]) -> Result<f64> {
        check_dim(self.dim(), x.len())?;
        match self {
            Preconditioner::Diagonal(d) => Ok(x.iter().zip(&d.diag).map(|(x, p)| x * x * p).sum()),
            Preconditioner::Dense(d) => Ok(dot(&d.matrix.mul_vec(x)?, x)),
        }
    }

    pub fn to_matrix(&self) -> Matrix {
        match self {
            Preconditioner::Diagonal(d) => Matrix::from_diag(&d.diag),
            Preconditioner::Dense(d) => d.matrix.clone(),
        }
    }

    pub fn spectrum(&self) -> Result<Spectrum> {
        match self {
            Preconditioner::Diagonal(d) => Ok(Spectrum::new(d.diag.clone())),
            Preconditioner::Dense(d) => eig_sym(&d.matrix),
        }
    }
}

/// Spectrum of `P^{-1/2} H P^{-1/2}`, the symmetric form of `H P⁻¹`.
pub fn scaled_hessian_spectrum(h: &Matrix, p: &Preconditioner) -> Result<Spectrum> {
    check_dim(p.dim(), h.dim())?;
    h.check_symmetric(SYMMETRY_TOL)?;
    let scaled = match p {
        Preconditioner::Diagonal(d) => {
            let n = h.dim();
            let inv_sqrt: Vec<f64> = d.diag.iter().map(|v| 1.0 / v.sqrt()).collect();
            let mut s = Matrix::zeros(n);
            for i in 0..n {
                for j in 0..n {
                    s.set(i, j, inv_sqrt[i] * h.get(i, j) * inv_sqrt[j]);
                }
            }
            s.symmetrize();
            s
        }
        Preconditioner::Dense(d) => d.chol.congruence_inverse(h)?,
    };
    eig_sym(&scaled)
}

/// Spectrum of the pencil `A B⁻¹` for two preconditioners.
pub fn pencil_spectrum(a: &Preconditioner, b: &Preconditioner) -> Result<Spectrum> {
    check_dim(a.dim(), b.dim())?;
    match (a, b) {
        (Preconditioner::Diagonal(x), Preconditioner::Diagonal(y)) => {
            Ok(Spectrum::new(x.diag.iter().zip(&y.diag).map(|(p, d)| p / d).collect()))
        }
        _ => scaled_hessian_spectrum(&a.to_matrix(), b),
    }
}
