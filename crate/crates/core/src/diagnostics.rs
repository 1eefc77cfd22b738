//! Inexactness measurements, descent-bound residuals and rate aggregates.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adaptive::{self, AdaptiveError, TheoryParams};
use crate::linalg::{pencil_spectrum, scaled_hessian_spectrum, LinalgError, Matrix, Preconditioner, Spectrum};
use crate::objective::{Batch, LogisticProblem, ObjectiveError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DiagnosticsError {
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Objective(#[from] ObjectiveError),
    #[error(transparent)]
    Adaptive(#[from] AdaptiveError),
    #[error("empty input")]
    Empty,
    #[error("entry {index} = {value} must be strictly positive")]
    NonPositive { index: usize, value: f64 },
    #[error("trace row t = {t} lacks field {field}")]
    MissingField { t: usize, field: &'static str },
}

pub type Result<T> = std::result::Result<T, DiagnosticsError>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InexactnessReport {
    pub delta: f64,
    pub sigma_emp: f64,
    pub delta_plus: f64,
    pub delta_minus: f64,
    pub kappa: f64,
    pub chi: f64,
    pub lambda_min_scaled: f64,
    pub lambda_max_scaled: f64,
}

/// `δ⁺ = [λ_max(P d⁻¹) − 1]_+`, `δ⁻ = [1 − λ_min(P d⁻¹)]_+`.
pub fn delta_pm(p: &Preconditioner, d: &Preconditioner) -> Result<(f64, f64)> {
    let s = pencil_spectrum(p, d)?;
    Ok(((s.max() - 1.0).max(0.0), (1.0 - s.min()).max(0.0)))
}

pub fn inexactness_from_hessian(h: &Matrix, p: &Preconditioner, d: &Preconditioner) -> Result<InexactnessReport> {
    let scaled = scaled_hessian_spectrum(h, p)?;
    let by_update = scaled_hessian_spectrum(h, d)?;
    let (delta_plus, delta_minus) = delta_pm(p, d)?;
    let (kappa, chi) = adaptive::kappa_chi(p, d)?;
    Ok(InexactnessReport {
        delta: scaled.max() - 1.0,
        sigma_emp: by_update.max() - 1.0,
        delta_plus,
        delta_minus,
        kappa,
        chi,
        lambda_min_scaled: scaled.min(),
        lambda_max_scaled: scaled.max(),
    })
}

/// Forms the (batch) Hessian at `x` and measures `P` and `d` against it.
pub fn inexactness(
    prob: &LogisticProblem,
    x: &[f64],
    p: &Preconditioner,
    d: &Preconditioner,
    batch: Option<&Batch>,
) -> Result<InexactnessReport> {
    let h = prob.full_hessian(x, batch)?;
    inexactness_from_hessian(&h, p, d)
}

/// Per-step quantities entering the descent bound. Norms are squared dual
/// norms in `P_t`; `kappa`, `chi` and `beta` carry the index of `P_t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DescentInputs {
    pub f_prev: f64,
    pub f_next: f64,
    pub eta: f64,
    pub beta: f64,
    pub beta_next: f64,
    pub kappa: f64,
    pub chi: f64,
    pub grad_pnorm2: f64,
    pub g_pnorm2: f64,
    pub noise_pnorm2: f64,
}

/// Right-hand side of the one-step descent bound.
pub fn descent_bound(inp: &DescentInputs, params: &TheoryParams) -> f64 {
    let eta = inp.eta;
    let shrink = (1.0 + params.sigma) / (1.0 - inp.beta * inp.chi);
    let r = eta * shrink;
    let penalty = if inp.kappa > 0.0 {
        (1.0 - inp.beta_next) * inp.beta / (1.0 / inp.kappa + inp.beta * inp.beta_next)
    } else {
        0.0
    };
    inp.f_prev - 0.5 * eta * inp.grad_pnorm2
        + 0.5 * eta * (r * r + r - 1.0) * inp.g_pnorm2
        + 0.5 * eta * (1.0 + penalty) * inp.noise_pnorm2
        + params.m_prime * eta.powi(3) / 6.0 * shrink.powf(1.5) * inp.g_pnorm2.powf(1.5)
}

/// Bound minus the observed `f(x_{t+1})`; nonnegative when the bound held.
pub fn descent_residual(inp: &DescentInputs, params: &TheoryParams) -> f64 {
    descent_bound(inp, params) - inp.f_next
}

/// Residual for each consecutive pair of rows of a trace (`None` for row 0).
pub fn descent_residual_series(trace: &[TraceRecord], params: &TheoryParams) -> Result<Vec<Option<f64>>> {
    let mut out = vec![None; trace.len().min(1)];
    for w in trace.windows(2) {
        let (prev, row) = (&w[0], &w[1]);
        let need = |v: Option<f64>, field| v.ok_or(DiagnosticsError::MissingField { t: row.t, field });
        let inp = DescentInputs {
            f_prev: prev.f,
            f_next: row.f,
            eta: need(row.eta, "eta")?,
            beta: prev.beta.unwrap_or(0.0),
            beta_next: need(row.beta, "beta")?,
            kappa: prev.kappa.unwrap_or(0.0),
            chi: prev.chi.unwrap_or(0.0),
            grad_pnorm2: prev.grad_pnorm2,
            g_pnorm2: need(row.g_pnorm2, "g_pnorm2")?,
            noise_pnorm2: need(row.noise_pnorm2, "noise_pnorm2")?,
        };
        out.push(Some(descent_residual(&inp, params)));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateSummary {
    pub harmonic_l: f64,
    pub arithmetic_l: f64,
    pub min_l: f64,
    pub error_series_partial: f64,
    pub min_grad_pnorm_sq: f64,
}

/// `(T / Σ 1/L_t, mean, min)`
pub fn harmonic_average(ls: &[f64]) -> Result<(f64, f64, f64)> {
    if ls.is_empty() {
        return Err(DiagnosticsError::Empty);
    }
    if let Some((index, &value)) = ls.iter().enumerate().find(|(_, &v)| !(v > 0.0)) {
        return Err(DiagnosticsError::NonPositive { index, value });
    }
    let t = ls.len() as f64;
    let harmonic = t / ls.iter().map(|l| 1.0 / l).sum::<f64>();
    let arithmetic = ls.iter().sum::<f64>() / t;
    let min = ls.iter().copied().fold(f64::INFINITY, f64::min);
    // Rounding can put the harmonic mean an ulp outside [min, mean].
    Ok((harmonic.clamp(min, arithmetic.max(min)), arithmetic.max(min), min))
}

impl RateSummary {
    /// `error_terms[t] = L_t (1 − β_t) ‖x_t − y_t‖²`.
    pub fn from_series(ls: &[f64], error_terms: &[f64], grad_pnorm2: &[f64]) -> Result<RateSummary> {
        let (harmonic_l, arithmetic_l, min_l) = harmonic_average(ls)?;
        Ok(RateSummary {
            harmonic_l,
            arithmetic_l,
            min_l,
            error_series_partial: error_terms.iter().sum(),
            min_grad_pnorm_sq: grad_pnorm2.iter().copied().fold(f64::INFINITY, f64::min),
        })
    }

    pub fn chain_holds(&self, t: usize) -> bool {
        self.min_l <= self.harmonic_l && self.harmonic_l <= self.arithmetic_l && self.harmonic_l <= t as f64 * self.min_l
    }
}

/// `1 + (1−β)/(1/δ⁺ + β)`
pub fn variance_penalty_factor(delta_plus: f64, beta: f64) -> f64 {
    if delta_plus <= 0.0 {
        return 1.0;
    }
    1.0 + (1.0 - beta) / (1.0 / delta_plus + beta)
}

/// Checks the dual-norm growth bound for `P' = βP + (1−β)d` at `s`.
pub fn variance_penalty_check(p: &Preconditioner, d: &Preconditioner, beta: f64, s: &[f64]) -> Result<bool> {
    let next = match (p, d) {
        (Preconditioner::Diagonal(a), Preconditioner::Diagonal(b)) => Preconditioner::diagonal(
            a.diag().iter().zip(b.diag()).map(|(x, y)| beta * x + (1.0 - beta) * y).collect(),
        )?,
        _ => Preconditioner::dense(p.to_matrix().lincomb(beta, &d.to_matrix(), 1.0 - beta)?)?,
    };
    let (delta_plus, _) = delta_pm(p, d)?;
    let lhs = next.dual_norm_sq(s)?;
    let rhs = variance_penalty_factor(delta_plus, beta) * p.dual_norm_sq(s)?;
    Ok(lhs <= rhs + 1e-10 * rhs)
}

/// `β [δ⁺ + δ⁺√(1+δ⁺) N η ‖g‖* − 1]_+`
pub fn self_concordant_recursion(delta_plus: f64, n_const: f64, eta: f64, g_pnorm: f64, beta: f64) -> f64 {
    beta * (delta_plus + delta_plus * (1.0 + delta_plus).sqrt() * n_const * eta * g_pnorm - 1.0).max(0.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GammaCheck {
    pub holds: bool,
    pub max_abs: f64,
    pub bound: f64,
    pub tightness: f64,
}

/// `√n · L` with the certified smoothness constant.
pub fn gamma_bound(prob: &LogisticProblem) -> f64 {
    (prob.n() as f64).sqrt() * prob.smoothness_constant()
}

pub fn gamma_bound_check<'a>(samples: impl IntoIterator<Item = &'a [f64]>, bound: f64) -> GammaCheck {
    let max_abs = samples.into_iter().flat_map(|s| s.iter()).fold(0.0f64, |m, v| m.max(v.abs()));
    GammaCheck { holds: max_abs <= bound, max_abs, bound, tightness: if bound > 0.0 { max_abs / bound } else { 0.0 } }
}

/// Golden-section maximisation of a unimodal `f` on `[a, b]`.
pub fn golden_section_max(mut f: impl FnMut(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> (f64, f64) {
    let inv_phi = 1.0 / adaptive::PHI;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while (b - a).abs() > tol {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    let x = 0.5 * (a + b);
    (x, f(x))
}

/// `max_β (1−β)β / (1/κ + β²)` by golden section, as `(argmax, max)`.
pub fn variance_multiplier_excess(kappa: f64) -> (f64, f64) {
    golden_section_max(|b| (1.0 - b) * b / (1.0 / kappa + b * b), 0.0, 1.0, 1e-10)
}

/// `1 + ½(√(κ+1) − 1)`
pub fn worst_case_variance_multiplier(kappa: f64) -> f64 {
    1.0 + 0.5 * ((kappa + 1.0).sqrt() - 1.0)
}

/// One row of the per-iteration trace. Empty optional columns mean the
/// quantity was not computed at this level or iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub run_id: String,
    pub t: usize,
    pub f: f64,
    pub grad_norm2: f64,
    pub grad_pnorm2: f64,
    pub eta: Option<f64>,
    pub beta: Option<f64>,
    #[serde(rename = "L_local")]
    pub l_local: Option<f64>,
    #[serde(rename = "Delta")]
    pub delta: Option<f64>,
    pub kappa: Option<f64>,
    pub chi: Option<f64>,
    pub delta_plus: Option<f64>,
    pub delta_minus: Option<f64>,
    pub lambda_min_scaled: Option<f64>,
    pub lambda_max_scaled: Option<f64>,
    pub wall_ms: Option<f64>,
    pub g_pnorm2: Option<f64>,
    pub noise_pnorm2: Option<f64>,
    pub descent_residual: Option<f64>,
}

pub const TRACE_COLUMNS: [&str; 19] = [
    "run_id",
    "t",
    "f",
    "grad_norm2",
    "grad_pnorm2",
    "eta",
    "beta",
    "L_local",
    "Delta",
    "kappa",
    "chi",
    "delta_plus",
    "delta_minus",
    "lambda_min_scaled",
    "lambda_max_scaled",
    "wall_ms",
    "g_pnorm2",
    "noise_pnorm2",
    "descent_residual",
];

impl TraceRecord {
    pub fn initial(run_id: &str, f: f64, grad_norm2: f64, grad_pnorm2: f64) -> Self {
        TraceRecord {
            run_id: run_id.to_string(),
            t: 0,
            f,
            grad_norm2,
            grad_pnorm2,
            eta: None,
            beta: None,
            l_local: None,
            delta: None,
            kappa: None,
            chi: None,
            delta_plus: None,
            delta_minus: None,
            lambda_min_scaled: None,
            lambda_max_scaled: None,
            wall_ms: None,
            g_pnorm2: None,
            noise_pnorm2: None,
            descent_residual: None,
        }
    }

    /// Numeric columns by name, for long-format export.
    pub fn metrics(&self) -> Vec<(&'static str, Option<f64>)> {
        vec![
            ("f", Some(self.f)),
            ("grad_norm2", Some(self.grad_norm2)),
            ("grad_pnorm2", Some(self.grad_pnorm2)),
            ("eta", self.eta),
            ("beta", self.beta),
            ("L_local", self.l_local),
            ("Delta", self.delta),
            ("kappa", self.kappa),
            ("chi", self.chi),
            ("delta_plus", self.delta_plus),
            ("delta_minus", self.delta_minus),
            ("lambda_min_scaled", self.lambda_min_scaled),
            ("lambda_max_scaled", self.lambda_max_scaled),
            ("wall_ms", self.wall_ms),
            ("g_pnorm2", self.g_pnorm2),
            ("noise_pnorm2", self.noise_pnorm2),
            ("descent_residual", self.descent_residual),
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpectrumKind {
    Hessian,
    Scaled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumRow {
    pub t: usize,
    pub eigenvalue_index: usize,
    pub value: f64,
    pub which: SpectrumKind,
}

pub fn spectrum_rows(t: usize, hessian: &Spectrum, scaled: &Spectrum) -> Vec<SpectrumRow> {
    let mut rows = Vec::with_capacity(hessian.len() + scaled.len());
    for (s, which) in [(hessian, SpectrumKind::Hessian), (scaled, SpectrumKind::Scaled)] {
        for (eigenvalue_index, &value) in s.eigenvalues.iter().enumerate() {
            rows.push(SpectrumRow { t, eigenvalue_index, value, which });
        }
    }
    rows
}
