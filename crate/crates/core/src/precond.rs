//! Momentum-averaged preconditioners `P' = βP + (1−β)d` with positive
//! truncation of the update term.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{self, Cholesky, DiagonalPreconditioner, LinalgError, Matrix, Preconditioner, EPS_FLOOR};
use crate::objective::{Batch, LogisticProblem, ObjectiveError};
use crate::rng::SeededRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum PrecondKind {
    IdentityFrozen,
    #[default]
    DiagonalHutchinson,
    DiagonalExact,
    DenseAbsolute,
}

impl PrecondKind {
    pub fn name(self) -> &'static str {
        match self {
            PrecondKind::IdentityFrozen => "identity-frozen",
            PrecondKind::DiagonalHutchinson => "diagonal-hutchinson",
            PrecondKind::DiagonalExact => "diagonal-exact",
            PrecondKind::DenseAbsolute => "dense-absolute",
        }
    }

    pub fn is_dense(self) -> bool {
        self == PrecondKind::DenseAbsolute
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PrecondError {
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Objective(#[from] ObjectiveError),
    #[error("operation needs a {expected} preconditioner, state is {found}")]
    KindMismatch { expected: &'static str, found: &'static str },
    #[error("momentum {0} outside [0, 1]")]
    BetaOutOfRange(f64),
    #[error("update term shape does not match the preconditioner")]
    ShapeMismatch,
}

pub type Result<T> = std::result::Result<T, PrecondError>;

/// Untruncated update term.
#[derive(Debug, Clone, PartialEq)]
pub enum RawUpdate {
    Diagonal(Vec<f64>),
    Dense(Matrix),
}

/// Diagonal: entry-wise `max(|v|, eps)`. Dense: `λ ↦ max(|λ|, eps)` on the spectrum.
pub fn truncate_positive(raw: &RawUpdate, eps: f64) -> Result<Preconditioner> {
    assert!(eps > 0.0, "truncation floor must be positive");
    match raw {
        RawUpdate::Diagonal(v) => Ok(Preconditioner::Diagonal(DiagonalPreconditioner::floored(v, eps))),
        RawUpdate::Dense(m) => {
            let eig = linalg::eigh(m)?;
            let mut abs = eig.reassemble(|l| l.abs().max(eps));
            abs.symmetrize();
            match Preconditioner::dense(abs) {
                Ok(p) => Ok(p),
                // Reassembly rounding can push a floored eigenvalue just below zero.
                Err(_) => {
                    let lift = eig.reassemble(|l| l.abs().max(eps) + eps);
                    Ok(Preconditioner::dense(lift)?)
                }
            }
        }
    }
}

/// Rademacher probe `z ∈ {−1, 1}ⁿ`.
pub fn rademacher(n: usize, rng: &mut SeededRng) -> Vec<f64> {
    (0..n).map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 }).collect()
}

/// Average of `probes` Hutchinson samples (diagnostics only; the optimizer uses one).
pub fn hutchinson_estimate(
    prob: &LogisticProblem,
    x: &[f64],
    batch: Option<&Batch>,
    probes: usize,
    rng: &mut SeededRng,
) -> Result<Vec<f64>> {
    assert!(probes >= 1);
    let mut acc = vec![0.0; prob.n()];
    for _ in 0..probes {
        let z = rademacher(prob.n(), rng);
        let s = prob.hutchinson_sample(x, &z, batch)?;
        linalg::axpy(1.0 / probes as f64, &s, &mut acc);
    }
    Ok(acc)
}

/// Serializable copy of `P`: the diagonal, or the packed lower triangle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "lowercase")]
pub enum PrecondSnapshot {
    Diagonal { diag: Vec<f64> },
    Dense { n: usize, lower: Vec<f64> },
}

impl PrecondSnapshot {
    pub fn restore(&self) -> Result<Preconditioner> {
        match self {
            PrecondSnapshot::Diagonal { diag } => Ok(Preconditioner::diagonal(diag.clone())?),
            PrecondSnapshot::Dense { n, lower } => Ok(Preconditioner::dense(Matrix::from_lower_triangle(*n, lower)?)?),
        }
    }
}

#[derive(Debug, Clone)]
pub struct PreconditionerState {
    kind: PrecondKind,
    p: Preconditioner,
    eps: f64,
    lambda_min_lower: f64,
}

impl PreconditionerState {
    /// `P₀ = I` in the representation the kind needs.
    pub fn new(kind: PrecondKind, n: usize, eps: f64) -> Self {
        assert!(eps > 0.0, "truncation floor must be positive");
        let p = if kind.is_dense() {
            Preconditioner::dense(Matrix::identity(n)).expect("identity is SPD")
        } else {
            Preconditioner::identity(n)
        };
        PreconditionerState { kind, p, eps, lambda_min_lower: 1.0 }
    }

    pub fn with_default_eps(kind: PrecondKind, n: usize) -> Self {
        Self::new(kind, n, EPS_FLOOR)
    }

    pub fn kind(&self) -> PrecondKind {
        self.kind
    }

    pub fn preconditioner(&self) -> &Preconditioner {
        &self.p
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    /// Certified lower bound on `λ_min(P)`.
    pub fn lambda_min_lower(&self) -> f64 {
        self.lambda_min_lower
    }

    fn require(&self, dense: bool) -> Result<()> {
        if self.kind.is_dense() != dense || self.kind == PrecondKind::IdentityFrozen {
            return Err(PrecondError::KindMismatch {
                expected: if dense { "dense" } else { "diagonal" },
                found: self.kind.name(),
            });
        }
        Ok(())
    }

    /// `P ← βP + (1−β)d`, floored at `eps`.
    pub fn momentum_update(&mut self, d: &Preconditioner, beta: f64) -> Result<()> {
        if !(0.0..=1.0).contains(&beta) {
            return Err(PrecondError::BetaOutOfRange(beta));
        }
        if d.dim() != self.p.dim() {
            return Err(PrecondError::ShapeMismatch);
        }
        if beta == 1.0 {
            return Ok(());
        }
        let eps = self.eps;
        match (&self.p, d) {
            (Preconditioner::Diagonal(p), Preconditioner::Diagonal(d)) => {
                let next: Vec<f64> = p
                    .diag()
                    .iter()
                    .zip(d.diag())
                    .map(|(&a, &b)| (beta * a + (1.0 - beta) * b).clamp(a.min(b), a.max(b)).max(eps))
                    .collect();
                self.lambda_min_lower = next.iter().copied().fold(f64::INFINITY, f64::min);
                self.p = Preconditioner::diagonal(next)?;
            }
            (Preconditioner::Dense(p), Preconditioner::Dense(dm)) => {
                let mixed = p.matrix().lincomb(beta, dm.matrix(), 1.0 - beta)?;
                let d_lower = d.spectrum()?.min();
                let lower = beta * self.lambda_min_lower + (1.0 - beta) * d_lower;
                let mut shifted = mixed.clone();
                for i in 0..shifted.dim() {
                    shifted.add_to(i, i, -eps);
                }
                if Cholesky::factor(&shifted).is_ok() {
                    self.p = Preconditioner::dense(mixed)?;
                    self.lambda_min_lower = lower.max(eps);
                } else {
                    let eig = linalg::eigh(&mixed)?;
                    let floored = eig.reassemble(|l| l.max(eps));
                    self.p = Preconditioner::dense(floored)?;
                    self.lambda_min_lower = eps;
                }
            }
            _ => return Err(PrecondError::ShapeMismatch),
        }
        Ok(())
    }

    /// Truncated update term at `x` for this kind; `None` when frozen.
    pub fn update_term(
        &self,
        prob: &LogisticProblem,
        x: &[f64],
        batch: Option<&Batch>,
        rng: &mut SeededRng,
    ) -> Result<Option<Preconditioner>> {
        let raw = match self.kind {
            PrecondKind::IdentityFrozen => return Ok(None),
            PrecondKind::DiagonalHutchinson => {
                let z = rademacher(prob.n(), rng);
                RawUpdate::Diagonal(prob.hutchinson_sample(x, &z, batch)?)
            }
            PrecondKind::DiagonalExact => RawUpdate::Diagonal(prob.hessian_diag(x, batch)?),
            PrecondKind::DenseAbsolute => RawUpdate::Dense(prob.full_hessian(x, batch)?),
        };
        Ok(Some(truncate_positive(&raw, self.eps)?))
    }

    /// One Hutchinson probe at `x`, then the momentum update.
    pub fn hutchinson_step(
        &mut self,
        prob: &LogisticProblem,
        x: &[f64],
        beta: f64,
        batch: Option<&Batch>,
        rng: &mut SeededRng,
    ) -> Result<()> {
        self.require(false)?;
        let z = rademacher(prob.n(), rng);
        let raw = RawUpdate::Diagonal(prob.hutchinson_sample(x, &z, batch)?);
        let d = truncate_positive(&raw, self.eps)?;
        self.momentum_update(&d, beta)
    }

    /// Exact Hessian diagonal at `x`, then the momentum update.
    pub fn exact_step(&mut self, prob: &LogisticProblem, x: &[f64], beta: f64, batch: Option<&Batch>) -> Result<()> {
        self.require(false)?;
        let d = truncate_positive(&RawUpdate::Diagonal(prob.hessian_diag(x, batch)?), self.eps)?;
        self.momentum_update(&d, beta)
    }

    /// `d = |∇²f_B(x)|_ε`, then the momentum update.
    pub fn dense_step(&mut self, prob: &LogisticProblem, x: &[f64], beta: f64, batch: Option<&Batch>) -> Result<()> {
        self.require(true)?;
        let d = truncate_positive(&RawUpdate::Dense(prob.full_hessian(x, batch)?), self.eps)?;
        self.momentum_update(&d, beta)
    }

    pub fn snapshot(&self) -> PrecondSnapshot {
        match &self.p {
            Preconditioner::Diagonal(d) => PrecondSnapshot::Diagonal { diag: d.diag().to_vec() },
            Preconditioner::Dense(d) => PrecondSnapshot::Dense { n: d.dim(), lower: d.matrix().lower_triangle() },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{apply_feature_scaling, generate_synthetic, Dataset};
    use crate::linalg::{eig_sym, pencil_spectrum};
    use proptest::prelude::*;
    use rand::Rng;

    fn diag_state(diag: Vec<f64>) -> PreconditionerState {
        let mut s = PreconditionerState::with_default_eps(PrecondKind::DiagonalExact, diag.len());
        s.p = Preconditioner::diagonal(diag).unwrap();
        s
    }

    fn diag_of(p: &Preconditioner) -> Vec<f64> {
        match p {
            Preconditioner::Diagonal(d) => d.diag().to_vec(),
            _ => panic!("dense"),
        }
    }

    fn random_sym(n: usize, rng: &mut SeededRng, shift: f64) -> Matrix {
        let mut b = Matrix::zeros(n);
        for i in 0..n {
            for j in 0..n {
                b.set(i, j, rng.random_range(-1.0..1.0));
            }
        }
        let mut a = b.mul(&b.transpose()).unwrap();
        for i in 0..n {
            a.add_to(i, i, shift);
        }
        a
    }

    #[test]
    fn momentum_cases() {
        let d = Preconditioner::diagonal(vec![3.0]).unwrap();
        let mut s = diag_state(vec![1.0]);
        s.momentum_update(&d, 0.5).unwrap();
        assert_eq!(diag_of(s.preconditioner()), vec![2.0]);
        let mut s = diag_state(vec![1.0]);
        s.momentum_update(&d, 0.0).unwrap();
        assert_eq!(diag_of(s.preconditioner()), vec![3.0]);
        let mut s = diag_state(vec![1.0]);
        s.momentum_update(&d, 1.0).unwrap();
        assert_eq!(diag_of(s.preconditioner()), vec![1.0]);
        assert!(matches!(s.momentum_update(&d, 1.5), Err(PrecondError::BetaOutOfRange(_))));
        let wrong = Preconditioner::diagonal(vec![1.0, 1.0]).unwrap();
        assert!(matches!(s.momentum_update(&wrong, 0.5), Err(PrecondError::ShapeMismatch)));
    }

    #[test]
    fn truncation_cases() {
        let p = truncate_positive(&RawUpdate::Diagonal(vec![-0.1, 0.5]), 0.01).unwrap();
        assert_eq!(diag_of(&p), vec![0.1, 0.5]);
        let p = truncate_positive(&RawUpdate::Diagonal(vec![0.0; 3]), 1e-8).unwrap();
        assert_eq!(diag_of(&p), vec![1e-8; 3]);
        // Eigenvalues (−2, 3) in a rotated basis.
        let (c, s) = (0.6f64, 0.8f64);
        let a = Matrix::from_rows(&[
            vec![-2.0 * c * c + 3.0 * s * s, (-2.0 - 3.0) * c * s],
            vec![(-2.0 - 3.0) * c * s, -2.0 * s * s + 3.0 * c * c],
        ])
        .unwrap();
        let p = truncate_positive(&RawUpdate::Dense(a), 1e-8).unwrap();
        let spec = p.spectrum().unwrap();
        assert!((spec.eigenvalues[0] - 2.0).abs() < 1e-12 && (spec.eigenvalues[1] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn psd_batch_hessian_passes_through_unchanged() {
        let mut rng = SeededRng::new(3);
        let h = random_sym(5, &mut rng, 0.5);
        let p = truncate_positive(&RawUpdate::Dense(h.clone()), 1e-8).unwrap();
        let got = p.to_matrix();
        for (a, b) in got.as_slice().iter().zip(h.as_slice()) {
            assert!((a - b).abs() <= 1e-12 * h.max_abs());
        }
    }

    fn problem(seed: u64) -> LogisticProblem {
        let ds = generate_synthetic(300, 8, &mut SeededRng::new(seed));
        LogisticProblem::new(apply_feature_scaling(&ds, 3.0, &mut SeededRng::new(seed + 1)))
    }

    #[test]
    fn hutchinson_step_cases() {
        let prob = problem(5);
        let x = vec![0.1; 8];
        let mut s = PreconditionerState::with_default_eps(PrecondKind::DiagonalHutchinson, 8);
        let before = s.snapshot();
        s.hutchinson_step(&prob, &x, 1.0, None, &mut SeededRng::new(1)).unwrap();
        assert_eq!(s.snapshot(), before);

        let run = |seed| {
            let mut s = PreconditionerState::with_default_eps(PrecondKind::DiagonalHutchinson, 8);
            let mut rng = SeededRng::new(seed);
            for t in 0..20 {
                let x: Vec<f64> = (0..8).map(|j| 0.01 * (t * j) as f64).collect();
                s.hutchinson_step(&prob, &x, 0.9, None, &mut rng).unwrap();
            }
            s.snapshot()
        };
        assert_eq!(run(7), run(7));

        let ds = Dataset::from_rows(3, vec![vec![(0, 1.5)], vec![(1, -2.0)], vec![(2, 0.5)]], vec![1, -1, 1]);
        let diag_prob = LogisticProblem::new(ds);
        let x = [0.3, 0.2, -0.4];
        let want = DiagonalPreconditioner::floored(&diag_prob.hessian_diag(&x, None).unwrap(), 1e-8);
        for seed in 0..10 {
            let mut s = PreconditionerState::with_default_eps(PrecondKind::DiagonalHutchinson, 3);
            s.hutchinson_step(&diag_prob, &x, 0.0, None, &mut SeededRng::new(seed)).unwrap();
            assert_eq!(diag_of(s.preconditioner()), want.diag());
        }
    }

    #[test]
    fn step_kind_is_checked() {
        let prob = problem(6);
        let mut s = PreconditionerState::with_default_eps(PrecondKind::DenseAbsolute, 8);
        assert!(matches!(
            s.hutchinson_step(&prob, &[0.0; 8], 0.5, None, &mut SeededRng::new(1)),
            Err(PrecondError::KindMismatch { .. })
        ));
        let mut f = PreconditionerState::with_default_eps(PrecondKind::IdentityFrozen, 8);
        assert!(f.exact_step(&prob, &[0.0; 8], 0.5, None).is_err());
        assert!(f.update_term(&prob, &[0.0; 8], None, &mut SeededRng::new(1)).unwrap().is_none());
    }

    #[test]
    fn dense_step_cases() {
        let prob = problem(8);
        let x = vec![0.05; 8];
        let mut s = PreconditionerState::with_default_eps(PrecondKind::DenseAbsolute, 8);
        let before = s.snapshot();
        s.dense_step(&prob, &x, 1.0, None).unwrap();
        assert_eq!(s.snapshot(), before);
        s.dense_step(&prob, &x, 0.0, None).unwrap();
        let h = prob.full_hessian(&x, None).unwrap();
        let got = s.preconditioner().to_matrix();
        let lmin = eig_sym(&h).unwrap().min();
        if lmin >= 1e-8 {
            for (a, b) in got.as_slice().iter().zip(h.as_slice()) {
                assert!((a - b).abs() <= 1e-10 * h.max_abs());
            }
        }
        let restored = s.snapshot().restore().unwrap();
        assert_eq!(restored.to_matrix().as_slice(), got.as_slice());
    }

    #[test]
    fn dense_update_stays_in_weyl_hull() {
        let mut rng = SeededRng::new(11);
        for _ in 0..100 {
            let n = rng.random_range(2..7);
            let p0 = random_sym(n, &mut rng, 0.1);
            let d0 = random_sym(n, &mut rng, 0.1);
            let beta: f64 = rng.random();
            let mut s = PreconditionerState::with_default_eps(PrecondKind::DenseAbsolute, n);
            s.p = Preconditioner::dense(p0.clone()).unwrap();
            s.lambda_min_lower = eig_sym(&p0).unwrap().min();
            let d = Preconditioner::dense(d0.clone()).unwrap();
            s.momentum_update(&d, beta).unwrap();
            let sp = eig_sym(&p0).unwrap();
            let sd = eig_sym(&d0).unwrap();
            let out = s.preconditioner().spectrum().unwrap();
            let lo = sp.min().min(sd.min());
            let hi = sp.max().max(sd.max());
            let tol = 1e-10 * hi;
            assert!(out.min() >= lo - tol && out.max() <= hi + tol);
            assert!(s.lambda_min_lower() <= out.min() * (1.0 + 1e-10));
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn spd_preserved_over_long_sequences(seed in any::<u64>(), dense in any::<bool>()) {
            let mut rng = SeededRng::new(seed);
            let n = 4;
            let kind = if dense { PrecondKind::DenseAbsolute } else { PrecondKind::DiagonalExact };
            let mut s = PreconditionerState::with_default_eps(kind, n);
            for _ in 0..500 {
                let beta: f64 = rng.random();
                let raw = if dense {
                    let mut m = random_sym(n, &mut rng, 0.0);
                    let c: f64 = rng.random_range(-3.0..1.0);
                    for i in 0..n { m.add_to(i, i, c); }
                    RawUpdate::Dense(m.scaled(10f64.powf(rng.random_range(-9.0..1.0))))
                } else {
                    RawUpdate::Diagonal((0..n).map(|_| rng.random_range(-1.0..1.0) * 10f64.powf(rng.random_range(-12.0..2.0))).collect())
                };
                let d = truncate_positive(&raw, s.eps()).unwrap();
                s.momentum_update(&d, beta).unwrap();
                prop_assert!(s.preconditioner().spectrum().unwrap().min() >= s.eps() * (1.0 - 1e-9));
            }
        }

        #[test]
        fn diagonal_convex_combination_is_monotone(
            p in prop::collection::vec(1e-6f64..1e3, 1..10),
            seed in any::<u64>(),
            beta in 0.0f64..=1.0,
        ) {
            let mut rng = SeededRng::new(seed);
            let d: Vec<f64> = p.iter().map(|_| rng.random_range(1e-6..1e3)).collect();
            let mut s = diag_state(p.clone());
            s.momentum_update(&Preconditioner::diagonal(d.clone()).unwrap(), beta).unwrap();
            for ((&a, &b), &c) in p.iter().zip(&d).zip(&diag_of(s.preconditioner())) {
                prop_assert!(a.min(b) <= c && c <= a.max(b));
            }
        }

        #[test]
        fn momentum_dual_norm_penalty(
            p in prop::collection::vec(1e-3f64..1e3, 1..8),
            seed in any::<u64>(),
            beta in 0.0f64..=1.0,
        ) {
            let mut rng = SeededRng::new(seed);
            let n = p.len();
            let d: Vec<f64> = (0..n).map(|_| rng.random_range(1e-3..1e3)).collect();
            let s: Vec<f64> = (0..n).map(|_| rng.random_range(-10.0..10.0)).collect();
            let pp = Preconditioner::diagonal(p.clone()).unwrap();
            let dd = Preconditioner::diagonal(d).unwrap();
            let delta_plus = (pencil_spectrum(&pp, &dd).unwrap().max() - 1.0).max(0.0);
            let mut st = diag_state(p);
            st.momentum_update(&dd, beta).unwrap();
            let lhs = st.preconditioner().dual_norm_sq(&s).unwrap();
            let factor = 1.0 + (1.0 - beta) / (1.0 / delta_plus + beta);
            let rhs = factor * pp.dual_norm_sq(&s).unwrap();
            prop_assert!(lhs <= rhs + 1e-10 * rhs.max(1.0));
        }
    }
}
