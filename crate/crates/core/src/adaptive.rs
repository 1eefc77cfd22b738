//! Step-size and momentum schedules driven by smoothness and inexactness
//! estimates.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{self, pencil_spectrum, LinalgError, Preconditioner};
use crate::objective::LogisticProblem;

/// Golden ratio.
pub const PHI: f64 = 1.618_033_988_749_895;
/// Lower clamp on local smoothness estimates.
pub const L_FLOOR: f64 = 1e-6;
/// Momentum is kept in `[0, 1 − BETA_GAP]`.
pub const BETA_GAP: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AdaptiveError {
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error("entry {index} = {value} must be strictly positive")]
    NonPositiveEntry { index: usize, value: f64 },
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("invalid parameter {name} = {value}")]
    InvalidParameter { name: &'static str, value: f64 },
}

pub type Result<T> = std::result::Result<T, AdaptiveError>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TheoryParams {
    pub sigma: f64,
    pub m_prime: f64,
    pub alpha: f64,
    pub p: f64,
}

impl Default for TheoryParams {
    fn default() -> Self {
        TheoryParams { sigma: 0.1, m_prime: 1.0, alpha: 1.0, p: 0.9 }
    }
}

impl TheoryParams {
    pub fn phi(&self) -> f64 {
        PHI
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |name, value| Err(AdaptiveError::InvalidParameter { name, value });
        if !(self.sigma >= 0.0) {
            return bad("sigma", self.sigma);
        }
        if !(self.m_prime > 0.0) {
            return bad("m_prime", self.m_prime);
        }
        if !(self.alpha > 0.0) {
            return bad("alpha", self.alpha);
        }
        if !(self.p > 0.0 && self.p < 1.0) {
            return bad("p", self.p);
        }
        Ok(())
    }

    /// `Φ + √(M′/6 · ‖g‖*)`
    fn growth(&self, g_pnorm: f64) -> f64 {
        PHI + (self.m_prime / 6.0 * g_pnorm).sqrt()
    }
}

/// Running quantities consumed by the schedules.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScheduleState {
    pub beta_prev: f64,
    pub a0: f64,
    pub l_local: f64,
    pub kappa: f64,
    pub chi: f64,
}

impl ScheduleState {
    pub fn new(beta0: f64, a0: f64, l0: f64) -> Self {
        ScheduleState { beta_prev: beta0, a0, l_local: l0.max(L_FLOOR), kappa: 0.0, chi: 0.0 }
    }

    /// Summable sequence `a_t = a₀ / t²`, `t ≥ 1`.
    pub fn a_series(&self, t: usize) -> f64 {
        let t = t.max(1) as f64;
        self.a0 / (t * t)
    }
}

/// `κ = [max P / min d − 1]_+`, `χ = [1 − min P / max d]_+` for diagonals.
pub fn kappa_chi_diag(p_prev: &[f64], d: &[f64]) -> Result<(f64, f64)> {
    if p_prev.len() != d.len() {
        return Err(AdaptiveError::LengthMismatch(p_prev.len(), d.len()));
    }
    for (index, &value) in p_prev.iter().chain(d).enumerate() {
        if !(value > 0.0) {
            return Err(AdaptiveError::NonPositiveEntry { index: index % p_prev.len().max(1), value });
        }
    }
    let max = |v: &[f64]| v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = |v: &[f64]| v.iter().copied().fold(f64::INFINITY, f64::min);
    let kappa = (max(p_prev) / min(d) - 1.0).max(0.0);
    let chi = (1.0 - min(p_prev) / max(d)).max(0.0);
    Ok((kappa, chi))
}

/// `κ, χ` for any pair; dense pairs use the extremes of the pencil `P d⁻¹`.
pub fn kappa_chi(p_prev: &Preconditioner, d: &Preconditioner) -> Result<(f64, f64)> {
    match (p_prev, d) {
        (Preconditioner::Diagonal(p), Preconditioner::Diagonal(q)) => kappa_chi_diag(p.diag(), q.diag()),
        _ => {
            let s = pencil_spectrum(p_prev, d)?;
            Ok(((s.max() - 1.0).max(0.0), (1.0 - s.min()).max(0.0)))
        }
    }
}

/// `‖Δg‖*_P / ‖Δx‖_P`, or `None` for a zero displacement.
pub fn secant_lipschitz(p: &Preconditioner, dx: &[f64], dg: &[f64]) -> Result<Option<f64>> {
    let den = p.norm_sq(dx)?;
    if !(den > 0.0) {
        return Ok(None);
    }
    Ok(Some((p.dual_norm_sq(dg)? / den).sqrt()))
}

/// Clamps a secant estimate into `[L_FLOOR, upper]`; falls back to `prev`.
pub fn clamp_lipschitz(secant: Option<f64>, prev: f64, upper: f64) -> f64 {
    match secant {
        Some(l) if l.is_finite() => l.clamp(L_FLOOR, upper.max(L_FLOOR)),
        _ => prev,
    }
}

/// Local smoothness along `[x_prev, x_next]` in the `P`-norm.
pub fn local_lipschitz(
    prob: &LogisticProblem,
    x_prev: &[f64],
    x_next: &[f64],
    p: &Preconditioner,
    prev: f64,
) -> Result<f64> {
    let dx = linalg::sub(x_next, x_prev);
    let g0 = prob.grad(x_prev).map_err(|_| AdaptiveError::LengthMismatch(x_prev.len(), prob.n()))?;
    let g1 = prob.grad(x_next).map_err(|_| AdaptiveError::LengthMismatch(x_next.len(), prob.n()))?;
    let dg = linalg::sub(&g1, &g0);
    let upper = prob.smoothness_constant() / p.spectrum()?.min();
    Ok(clamp_lipschitz(secant_lipschitz(p, &dx, &dg)?, prev, upper))
}

/// `min{αp/3, (3/4)p/(5p+1)} / L`
pub fn local_smoothness_step(l: f64, p: f64, alpha: f64) -> f64 {
    (alpha * p / 3.0).min(0.75 * p / (5.0 * p + 1.0)) / l.max(L_FLOOR)
}

/// `1 − a/(L‖x−y‖²)` clamped into `[0, 1 − BETA_GAP]`.
pub fn series_beta(l: f64, anchor_gap_sq: f64, a: f64) -> f64 {
    let hi = 1.0 - BETA_GAP;
    if !(anchor_gap_sq > 0.0) {
        return hi;
    }
    (1.0 - a / (l.max(L_FLOOR) * anchor_gap_sq)).clamp(0.0, hi)
}

/// The two competing step bounds; the first falls with `β`, the second rises.
pub fn momentum_step_terms(params: &TheoryParams, beta: f64, kappa: f64, chi: f64, g_pnorm: f64) -> (f64, f64) {
    let first = (1.0 - beta * chi) / ((1.0 + params.sigma) * params.growth(g_pnorm));
    let second = (1.0 / (1.0 + kappa) + beta) / (1.0 - params.p);
    (first, second)
}

pub fn momentum_step_bound(params: &TheoryParams, beta: f64, kappa: f64, chi: f64, g_pnorm: f64) -> f64 {
    let (a, b) = momentum_step_terms(params, beta, kappa, chi, g_pnorm);
    a.min(b)
}

/// Closed-form momentum rule, evaluated as written and clamped into `[0, 1 − BETA_GAP]`.
pub fn adaptive_beta(params: &TheoryParams, beta_prev: f64, kappa: f64, chi: f64, g_pnorm: f64) -> f64 {
    let q = 1.0 - params.p;
    let den = (1.0 + params.sigma) * params.growth(g_pnorm) + q * chi;
    let term = q * (1.0 + kappa + chi) / den - 1.0;
    (beta_prev / 2.0).max(term).clamp(0.0, 1.0 - BETA_GAP)
}

/// Unclamped root of `first(β) = second(β)`.
pub fn crossing_point(params: &TheoryParams, kappa: f64, chi: f64, g_pnorm: f64) -> f64 {
    let q = 1.0 - params.p;
    let c = (1.0 + params.sigma) * params.growth(g_pnorm);
    (q - c / (1.0 + kappa)) / (c + q * chi)
}

/// Same decay rule as [`adaptive_beta`] with the exact crossing of the two bounds.
pub fn crossing_beta(params: &TheoryParams, beta_prev: f64, kappa: f64, chi: f64, g_pnorm: f64) -> f64 {
    (beta_prev / 2.0).max(crossing_point(params, kappa, chi, g_pnorm)).clamp(0.0, 1.0 - BETA_GAP)
}

/// `‖g‖* ≥ (3/M′)√((1+σ)/(1−βχ))`
pub fn acceleration_regime(params: &TheoryParams, beta: f64, chi: f64, g_pnorm: f64) -> bool {
    g_pnorm >= 3.0 / params.m_prime * ((1.0 + params.sigma) / (1.0 - beta * chi)).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{apply_feature_scaling, generate_synthetic};
    use crate::linalg::scaled_hessian_spectrum;
    use crate::rng::SeededRng;
    use proptest::prelude::*;
    use rand::Rng;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * b.abs().max(1.0)
    }

    #[test]
    fn kappa_chi_cases() {
        assert_eq!(kappa_chi_diag(&[1.0, 1.0], &[2.0, 4.0]).unwrap(), (0.0, 0.75));
        assert_eq!(kappa_chi_diag(&[3.0, 3.0], &[1.0, 1.0]).unwrap(), (2.0, 0.0));
        assert!(matches!(kappa_chi_diag(&[1.0, 0.0], &[1.0, 1.0]), Err(AdaptiveError::NonPositiveEntry { .. })));
        let p = Preconditioner::diagonal(vec![3.0, 3.0]).unwrap();
        let d = Preconditioner::diagonal(vec![1.0, 1.0]).unwrap();
        assert_eq!(kappa_chi(&p, &d).unwrap(), (2.0, 0.0));
        let dense = Preconditioner::dense(p.to_matrix()).unwrap();
        let (k, c) = kappa_chi(&dense, &d).unwrap();
        assert!(close(k, 2.0, 1e-12) && c == 0.0);
    }

    #[test]
    fn momentum_pencil_bounds() {
        let mut rng = SeededRng::new(21);
        for _ in 0..1000 {
            let n = rng.random_range(1..9);
            let p: Vec<f64> = (0..n).map(|_| 10f64.powf(rng.random_range(-3.0..3.0))).collect();
            let d: Vec<f64> = (0..n).map(|_| 10f64.powf(rng.random_range(-3.0..3.0))).collect();
            let beta: f64 = rng.random();
            let (kappa, chi) = kappa_chi_diag(&p, &d).unwrap();
            let ratios: Vec<f64> = p.iter().zip(&d).map(|(a, b)| (beta * a + (1.0 - beta) * b) / b).collect();
            let hi = ratios.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lo = ratios.iter().copied().fold(f64::INFINITY, f64::min);
            assert!(hi <= 1.0 + beta * kappa + 1e-12 * (1.0 + beta * kappa));
            assert!(lo >= 1.0 - beta * chi - 1e-12);
        }
    }

    #[test]
    fn secant_on_quadratic_stub() {
        let p = Preconditioner::identity(1);
        for c in [0.5, 2.0, 7.0] {
            let l = secant_lipschitz(&p, &[0.3], &[c * 0.3]).unwrap().unwrap();
            assert!(close(l, c, 1e-15));
        }
        assert_eq!(secant_lipschitz(&p, &[0.0], &[1.0]).unwrap(), None);
        assert_eq!(clamp_lipschitz(None, 3.0, 10.0), 3.0);
        assert_eq!(clamp_lipschitz(Some(50.0), 3.0, 10.0), 10.0);
        assert_eq!(clamp_lipschitz(Some(0.0), 3.0, 10.0), L_FLOOR);
    }

    fn problem(a: f64, seed: u64) -> LogisticProblem {
        let ds = generate_synthetic(400, 10, &mut SeededRng::new(seed));
        LogisticProblem::new(apply_feature_scaling(&ds, a, &mut SeededRng::new(seed + 1)))
    }

    #[test]
    fn local_lipschitz_within_certified_bound() {
        let prob = problem(4.0, 22);
        let bound = prob.smoothness_constant();
        let printed = prob.global_lipschitz();
        let p = Preconditioner::identity(10);
        let mut rng = SeededRng::new(23);
        for _ in 0..100 {
            let x: Vec<f64> = (0..10).map(|_| rng.random_range(-1.0..1.0)).collect();
            let y: Vec<f64> = (0..10).map(|_| rng.random_range(-1.0..1.0)).collect();
            let l = local_lipschitz(&prob, &x, &y, &p, 1.0).unwrap();
            assert!(l <= bound * (1.0 + 1e-9));
            if bound <= printed {
                assert!(l <= printed);
            }
        }
    }

    #[test]
    fn local_lipschitz_near_one_under_hessian_scaling() {
        let prob = problem(2.0, 24);
        let x = vec![0.05; 10];
        let h = prob.full_hessian(&x, None).unwrap();
        let p = Preconditioner::dense(h.clone()).unwrap();
        let mut y = x.clone();
        for (j, v) in y.iter_mut().enumerate() {
            *v += 1e-5 * (1.0 + j as f64);
        }
        let l = local_lipschitz(&prob, &x, &y, &p, 1.0).unwrap();
        let s = scaled_hessian_spectrum(&h, &p).unwrap();
        assert!(l >= s.min() - 1e-3 && l <= s.max() + 1e-3);
        assert!((l - 1.0).abs() < 1e-3, "{l}");
    }

    #[test]
    fn local_smoothness_step_cases() {
        let s = local_smoothness_step(1.0, 0.9, 1.0);
        assert!(close(s, 0.75 * 0.9 / 5.5, 1e-15));
        assert!(close(local_smoothness_step(2.0, 0.9, 1.0), s / 2.0, 1e-15));
        assert!(close(local_smoothness_step(1.0, 0.9, 1e12), 0.75 * 0.9 / 5.5, 1e-15));
        assert!(close(local_smoothness_step(1.0, 0.9, 0.1), 0.03, 1e-15));
    }

    #[test]
    fn series_beta_cases() {
        assert_eq!(series_beta(2.0, 3.0, 6.0), 0.0);
        assert_eq!(series_beta(2.0, 3.0, 1e-30), 1.0 - BETA_GAP);
        assert_eq!(series_beta(2.0, 0.0, 1.0), 1.0 - BETA_GAP);
        let st = ScheduleState::new(0.0, 1.0, 1.0);
        let total: f64 = (1..=10_000).map(|t| st.a_series(t)).sum();
        assert!(total <= std::f64::consts::PI.powi(2) / 6.0);
    }

    #[test]
    fn momentum_step_bound_cases() {
        let params = TheoryParams { sigma: 0.0, ..TheoryParams::default() };
        let b = momentum_step_bound(&params, 0.0, 0.0, 0.0, 0.0);
        assert!(close(b, 1.0 / PHI, 1e-15));
        let b0 = momentum_step_bound(&params, 0.5, 0.3, 0.2, 0.0);
        let b1 = momentum_step_bound(&params, 0.5, 0.3, 0.2, 4.0);
        assert!(b1 < b0);
    }

    #[test]
    fn adaptive_beta_cases() {
        let params = TheoryParams { sigma: 0.0, ..TheoryParams::default() };
        assert_eq!(adaptive_beta(&params, 0.8, 0.0, 0.0, 0.0), 0.4);
        assert_eq!(adaptive_beta(&params, 0.8, 0.0, 0.0, 1e8), 0.4);
        assert_eq!(adaptive_beta(&params, 0.0, 0.0, 0.0, 0.0), 0.0);
        assert_eq!(adaptive_beta(&params, 1.0, 1e9, 0.0, 0.0), 1.0 - BETA_GAP);
    }

    #[test]
    fn crossing_point_balances_the_bounds() {
        let mut rng = SeededRng::new(25);
        for _ in 0..1000 {
            let params = TheoryParams {
                sigma: rng.random_range(0.0..1.0),
                m_prime: rng.random_range(0.1..10.0),
                alpha: 1.0,
                p: rng.random_range(0.05..0.95),
            };
            let kappa = 10f64.powf(rng.random_range(-2.0..3.0));
            let chi = rng.random_range(0.0..0.99);
            let g = rng.random_range(0.0..10.0);
            let b = crossing_point(&params, kappa, chi, g);
            let (f, s) = momentum_step_terms(&params, b, kappa, chi, g);
            assert!(close(f, s, 1e-10));
            // The printed rule agrees with the exact root when κ = 0.
            let printed = adaptive_beta(&params, -2.0, 0.0, chi, g);
            let exact = crossing_beta(&params, -2.0, 0.0, chi, g);
            assert!(close(printed, exact, 1e-12));
            let q = 1.0 - params.p;
            let c = (1.0 + params.sigma) * params.growth(g);
            let raw = q * (1.0 + chi) / (c + q * chi) - 1.0;
            assert!(close(raw, crossing_point(&params, 0.0, chi, g), 1e-12));
        }
    }

    #[test]
    fn crossing_beta_sits_in_the_fracture_cell() {
        let mut rng = SeededRng::new(26);
        let grid: Vec<f64> = (0..=1000).map(|i| i as f64 / 1000.0).collect();
        let mut tested = 0;
        while tested < 200 {
            let params = TheoryParams {
                sigma: rng.random_range(0.0..0.5),
                m_prime: rng.random_range(0.1..2.0),
                alpha: 1.0,
                p: rng.random_range(0.05..0.5),
            };
            let kappa = 10f64.powf(rng.random_range(0.5..3.0));
            let chi = rng.random_range(0.0..0.9);
            let g = rng.random_range(0.0..2.0);
            let b = crossing_beta(&params, 0.0, kappa, chi, g);
            if !(b > 0.0 && b < 1.0 - BETA_GAP) {
                continue;
            }
            tested += 1;
            let k = grid.iter().position(|&v| v > b).unwrap();
            let diff = |v: f64| {
                let (f, s) = momentum_step_terms(&params, v, kappa, chi, g);
                f - s
            };
            assert!(diff(grid[k - 1]) >= 0.0 && diff(grid[k]) <= 0.0);
        }
    }

    #[test]
    fn acceleration_regime_is_monotone_in_gradient() {
        let params = TheoryParams::default();
        let threshold = 3.0 * (1.1f64 / (1.0 - 0.5 * 0.2)).sqrt();
        assert!(acceleration_regime(&params, 0.5, 0.2, threshold));
        assert!(!acceleration_regime(&params, 0.5, 0.2, threshold * 0.999));
        let gs: Vec<f64> = (0..50).map(|i| 10.0 * 0.9f64.powi(i)).collect();
        let flags: Vec<bool> = gs.iter().map(|&g| acceleration_regime(&params, 0.5, 0.2, g)).collect();
        let switch = flags.iter().position(|f| !f).unwrap_or(flags.len());
        assert!(flags[..switch].iter().all(|&f| f) && flags[switch..].iter().all(|&f| !f));
    }

    proptest! {
        #[test]
        fn momentum_step_terms_monotone_in_beta(
            sigma in 0.0f64..2.0, m in 0.01f64..10.0, p in 0.01f64..0.99,
            kappa in 0.0f64..100.0, chi in 0.0f64..0.99, g in 0.0f64..100.0,
        ) {
            let params = TheoryParams { sigma, m_prime: m, alpha: 1.0, p };
            let mut prev = momentum_step_terms(&params, 0.0, kappa, chi, g);
            for i in 1..=50 {
                let cur = momentum_step_terms(&params, i as f64 / 50.0, kappa, chi, g);
                prop_assert!(cur.0 <= prev.0 && cur.1 >= prev.1);
                prev = cur;
            }
        }

        #[test]
        fn adaptive_beta_in_range(
            beta_prev in 0.0f64..=1.0, kappa in 0.0f64..1e6, chi in 0.0f64..1.0, g in 0.0f64..1e6,
        ) {
            let b = adaptive_beta(&TheoryParams::default(), beta_prev, kappa, chi, g);
            prop_assert!((0.0..=1.0 - BETA_GAP).contains(&b));
        }
    }
}
