//! Finite-sum binary logistic regression
//! `f(x) = (1/m) Σ log(1 + exp(-b_i ã_iᵀ x))` over the effective rows
//! `ã_i = a ∘ a_i` of a [`Dataset`].

use std::f64::consts::LN_2;

use rand::Rng;
use thiserror::Error;

use crate::data::Dataset;
use crate::linalg::{self, Matrix};
use crate::rng::SeededRng;

/// Largest dimension for which dense Hessians are formed.
pub const DENSE_HESSIAN_CAP: usize = 512;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ObjectiveError {
    #[error("empty batch")]
    EmptyBatch,
    #[error("batch index {index} out of range for {m} rows")]
    BatchIndexOutOfRange { index: usize, m: usize },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("dense Hessian requested for n = {n} above cap {cap}")]
    DenseCapExceeded { n: usize, cap: usize },
    #[error("probe entry {index} = {value} is not ±1")]
    NonRademacher { index: usize, value: f64 },
}

pub type Result<T> = std::result::Result<T, ObjectiveError>;

/// `1 / (1 + e^{-s})` without overflow for large `|s|`.
#[inline]
pub fn sigmoid(s: f64) -> f64 {
    if s >= 0.0 {
        1.0 / (1.0 + (-s).exp())
    } else {
        let e = s.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + e^{-s})`
#[inline]
pub fn logistic_loss(s: f64) -> f64 {
    (-s).max(0.0) + (-s.abs()).exp().ln_1p()
}

/// Subset of row indices; duplicates are allowed (sampling with replacement).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Batch {
    indices: Vec<usize>,
}

impl Batch {
    pub fn new(indices: Vec<usize>) -> Result<Batch> {
        if indices.is_empty() {
            return Err(ObjectiveError::EmptyBatch);
        }
        Ok(Batch { indices })
    }

    pub fn full(m: usize) -> Batch {
        Batch { indices: (0..m).collect() }
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// Uniform batch of `size` rows out of `m`.
    pub fn sample(m: usize, size: usize, with_replacement: bool, rng: &mut SeededRng) -> Batch {
        assert!(size >= 1 && m >= 1, "batch needs rows");
        let indices = if with_replacement {
            (0..size).map(|_| rng.random_range(0..m)).collect()
        } else {
            assert!(size <= m, "batch larger than dataset");
            rand::seq::index::sample(rng, m, size).into_vec()
        };
        Batch { indices }
    }
}

enum Rows<'a> {
    All(std::ops::Range<usize>),
    Subset(std::slice::Iter<'a, usize>),
}

impl Iterator for Rows<'_> {
    type Item = usize;

    fn next(&mut self) -> Option<usize> {
        match self {
            Rows::All(r) => r.next(),
            Rows::Subset(it) => it.next().copied(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct LogisticProblem {
    data: Dataset,
}

impl LogisticProblem {
    pub fn new(data: Dataset) -> Self {
        LogisticProblem { data }
    }

    pub fn data(&self) -> &Dataset {
        &self.data
    }

    pub fn n(&self) -> usize {
        self.data.n_features()
    }

    pub fn m(&self) -> usize {
        self.data.n_rows()
    }

    fn check_x(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.n() {
            return Err(ObjectiveError::DimensionMismatch { expected: self.n(), found: x.len() });
        }
        Ok(())
    }

    fn check_batch(&self, batch: Option<&Batch>) -> Result<()> {
        if let Some(b) = batch {
            if b.is_empty() {
                return Err(ObjectiveError::EmptyBatch);
            }
            if let Some(&index) = b.indices.iter().find(|&&i| i >= self.m()) {
                return Err(ObjectiveError::BatchIndexOutOfRange { index, m: self.m() });
            }
        }
        Ok(())
    }

    fn rows<'a>(&self, batch: Option<&'a Batch>) -> (Rows<'a>, f64) {
        match batch {
            None => (Rows::All(0..self.m()), self.m() as f64),
            Some(b) => (Rows::Subset(b.indices.iter()), b.len() as f64),
        }
    }

    #[inline]
    fn row_dot(&self, i: usize, x: &[f64]) -> f64 {
        let (cols, vals) = self.data.row(i);
        cols.iter().zip(vals).map(|(&j, v)| v * x[j]).sum()
    }

    #[inline]
    fn row_axpy(&self, i: usize, alpha: f64, out: &mut [f64]) {
        let (cols, vals) = self.data.row(i);
        for (&j, v) in cols.iter().zip(vals) {
            out[j] += alpha * v;
        }
    }

    /// Margin `b_i ã_iᵀ x`.
    #[inline]
    pub fn margin(&self, i: usize, x: &[f64]) -> f64 {
        self.data.label(i) * self.row_dot(i, x)
    }

    /// Per-sample curvature weight `σ(s)(1 - σ(s))`.
    #[inline]
    fn weight(&self, i: usize, x: &[f64]) -> f64 {
        let s = self.margin(i, x);
        sigmoid(s) * sigmoid(-s)
    }

    pub fn value(&self, x: &[f64]) -> Result<f64> {
        self.check_x(x)?;
        // Centered at ln 2 so that f(0) = ln 2 holds exactly.
        let excess: f64 = (0..self.m()).map(|i| logistic_loss(self.margin(i, x)) - LN_2).sum();
        Ok(excess / self.m() as f64 + LN_2)
    }

    pub fn value_batch(&self, x: &[f64], batch: &Batch) -> Result<f64> {
        self.check_x(x)?;
        self.check_batch(Some(batch))?;
        let excess: f64 = batch.indices.iter().map(|&i| logistic_loss(self.margin(i, x)) - LN_2).sum();
        Ok(excess / batch.len() as f64 + LN_2)
    }

    fn grad_over(&self, x: &[f64], batch: Option<&Batch>) -> Vec<f64> {
        let (rows, count) = self.rows(batch);
        let mut g = vec![0.0; self.n()];
        for i in rows {
            let b = self.data.label(i);
            let coef = -b * sigmoid(-b * self.row_dot(i, x));
            self.row_axpy(i, coef, &mut g);
        }
        g.iter_mut().for_each(|v| *v /= count);
        g
    }

    pub fn grad(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_x(x)?;
        Ok(self.grad_over(x, None))
    }

    pub fn grad_batch(&self, x: &[f64], batch: &Batch) -> Result<Vec<f64>> {
        self.check_x(x)?;
        self.check_batch(Some(batch))?;
        Ok(self.grad_over(x, Some(batch)))
    }

    /// `∇f_B(x) − ∇f_B(y)` in one pass over the batch.
    pub fn grad_batch_difference(&self, x: &[f64], y: &[f64], batch: &Batch) -> Result<Vec<f64>> {
        self.check_x(x)?;
        self.check_x(y)?;
        self.check_batch(Some(batch))?;
        let mut g = vec![0.0; self.n()];
        for &i in &batch.indices {
            let b = self.data.label(i);
            let cx = -b * sigmoid(-b * self.row_dot(i, x));
            let cy = -b * sigmoid(-b * self.row_dot(i, y));
            self.row_axpy(i, cx - cy, &mut g);
        }
        let count = batch.len() as f64;
        g.iter_mut().for_each(|v| *v /= count);
        Ok(g)
    }

    pub fn hessian_diag(&self, x: &[f64], batch: Option<&Batch>) -> Result<Vec<f64>> {
        self.check_x(x)?;
        self.check_batch(batch)?;
        let (rows, count) = self.rows(batch);
        let mut d = vec![0.0; self.n()];
        for i in rows {
            let w = self.weight(i, x);
            let (cols, vals) = self.data.row(i);
            for (&j, v) in cols.iter().zip(vals) {
                d[j] += w * v * v;
            }
        }
        d.iter_mut().for_each(|v| *v /= count);
        Ok(d)
    }

    /// Hessian-vector product `(1/|B|) Σ w_i (ã_iᵀ v) ã_i`.
    pub fn hvp(&self, x: &[f64], v: &[f64], batch: Option<&Batch>) -> Result<Vec<f64>> {
        self.check_x(x)?;
        self.check_x(v)?;
        self.check_batch(batch)?;
        let (rows, count) = self.rows(batch);
        let mut out = vec![0.0; self.n()];
        for i in rows {
            let w = self.weight(i, x);
            let av = self.row_dot(i, v);
            self.row_axpy(i, w * av, &mut out);
        }
        out.iter_mut().for_each(|o| *o /= count);
        Ok(out)
    }

    /// `z ∘ (∇²f · z)` for a Rademacher probe `z`.
    pub fn hutchinson_sample(&self, x: &[f64], z: &[f64], batch: Option<&Batch>) -> Result<Vec<f64>> {
        self.check_x(z)?;
        if let Some((index, &value)) = z.iter().enumerate().find(|(_, &v)| v != 1.0 && v != -1.0) {
            return Err(ObjectiveError::NonRademacher { index, value });
        }
        let hz = self.hvp(x, z, batch)?;
        Ok(hz.iter().zip(z).map(|(h, zj)| h * zj).collect())
    }

    pub fn full_hessian(&self, x: &[f64], batch: Option<&Batch>) -> Result<Matrix> {
        self.full_hessian_capped(x, batch, DENSE_HESSIAN_CAP)
    }

    pub fn full_hessian_capped(&self, x: &[f64], batch: Option<&Batch>, cap: usize) -> Result<Matrix> {
        let n = self.n();
        if n > cap {
            return Err(ObjectiveError::DenseCapExceeded { n, cap });
        }
        self.check_x(x)?;
        self.check_batch(batch)?;
        let (rows, count) = self.rows(batch);
        let mut h = Matrix::zeros(n);
        for i in rows {
            let w = self.weight(i, x) / count;
            let (cols, vals) = self.data.row(i);
            for (a, (&j, vj)) in cols.iter().zip(vals).enumerate() {
                for (&k, vk) in cols[..=a].iter().zip(&vals[..=a]) {
                    h.add_to(j, k, w * vj * vk);
                }
            }
        }
        for j in 0..n {
            for k in 0..j {
                let v = h.get(j, k);
                h.set(k, j, v);
            }
        }
        Ok(h)
    }

    /// Largest singular value of the effective feature matrix, by power
    /// iteration on `ÃᵀÃ`.
    pub fn spectral_norm(&self) -> f64 {
        let n = self.n();
        let mut v: Vec<f64> = (0..n).map(|j| 1.0 + 1e-3 * ((j * 7919) % 101) as f64).collect();
        let mut lambda = 0.0;
        for _ in 0..20_000 {
            let norm = linalg::norm2_sq(&v).sqrt();
            if norm == 0.0 {
                return 0.0;
            }
            v.iter_mut().for_each(|x| *x /= norm);
            let mut w = vec![0.0; n];
            for i in 0..self.m() {
                let av = self.row_dot(i, &v);
                self.row_axpy(i, av, &mut w);
            }
            let next = linalg::dot(&w, &v);
            let done = (next - lambda).abs() <= 1e-12 * next.abs();
            lambda = next;
            v = w;
            if done {
                break;
            }
        }
        lambda.max(0.0).sqrt()
    }

    /// `¼ ‖(a∘a_1 … a∘a_m)‖₂`, the constant quoted for the experiments.
    pub fn global_lipschitz(&self) -> f64 {
        0.25 * self.spectral_norm()
    }

    /// `‖Ã‖₂² / (4m)`: a certified Lipschitz constant of `∇f` in the Euclidean norm.
    pub fn smoothness_constant(&self) -> f64 {
        let s = self.spectral_norm();
        0.25 * s * s / self.m() as f64
    }
}
