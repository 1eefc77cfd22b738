//! SGD, Scaled SGD, L-SVRG and Scaled L-SVRG with pluggable step-size and
//! momentum schedules.

use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adaptive::{self, AdaptiveError, ScheduleState, TheoryParams};
use crate::diagnostics::{self, DescentInputs, DiagnosticsError, RateSummary, SpectrumRow, TraceRecord};
use crate::linalg::{self, scaled_hessian_spectrum, LinalgError, Preconditioner, EPS_FLOOR};
use crate::objective::{Batch, LogisticProblem, ObjectiveError, DENSE_HESSIAN_CAP};
use crate::precond::{PrecondError, PrecondKind, PreconditionerState};
use crate::rng::SeededRng;

/// Objective magnitude treated as divergence.
pub const DIVERGENCE_LIMIT: f64 = 1e12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OptimError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Objective(#[from] ObjectiveError),
    #[error(transparent)]
    Precond(#[from] PrecondError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Adaptive(#[from] AdaptiveError),
    #[error(transparent)]
    Diagnostics(#[from] DiagnosticsError),
}

pub type Result<T> = std::result::Result<T, OptimError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algo {
    Sgd,
    ScaledSgd,
    Lsvrg,
    ScaledLsvrg,
}

impl Algo {
    pub fn is_scaled(self) -> bool {
        matches!(self, Algo::ScaledSgd | Algo::ScaledLsvrg)
    }

    pub fn is_variance_reduced(self) -> bool {
        matches!(self, Algo::Lsvrg | Algo::ScaledLsvrg)
    }

    pub fn name(self) -> &'static str {
        match self {
            Algo::Sgd => "sgd",
            Algo::ScaledSgd => "scaled-sgd",
            Algo::Lsvrg => "lsvrg",
            Algo::ScaledLsvrg => "scaled-lsvrg",
        }
    }
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum EtaSchedule {
    Constant { value: f64 },
    /// `min{αp/3, (3/4)p/(5p+1)} / L` with the latest local estimate.
    LocalSmoothness,
    /// A fraction of the two-term bound driven by `κ`, `χ` and `‖g‖*`.
    MomentumBound {
        #[serde(default = "one")]
        fraction: f64,
    },
    LineSearch,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum BetaSchedule {
    Constant { value: f64 },
    /// `1 − a_t/(L_t‖x_t − y_t‖²)` with `a_t = a0/t²`.
    Series {
        #[serde(default = "one")]
        a0: f64,
    },
    Adaptive {
        #[serde(default)]
        beta0: f64,
    },
    /// Decay rule with the exact crossing of the two step bounds.
    Crossing {
        #[serde(default)]
        beta0: f64,
    },
}

impl BetaSchedule {
    fn initial(&self) -> f64 {
        match *self {
            BetaSchedule::Constant { value } => value,
            BetaSchedule::Series { .. } => 0.0,
            BetaSchedule::Adaptive { beta0 } | BetaSchedule::Crossing { beta0 } => beta0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum DiagnosticsLevel {
    #[default]
    Off,
    Light,
    Full,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AlgoConfig {
    pub algo: Algo,
    pub eta: EtaSchedule,
    pub beta: BetaSchedule,
    pub precond: PrecondKind,
    pub eps: f64,
    pub batch_size: usize,
    pub iterations: usize,
    pub with_replacement: bool,
    /// Update term from the full Hessian instead of the step's minibatch.
    pub full_hessian_update: bool,
    pub theory: TheoryParams,
    /// Local smoothness may fall by at most this factor per iteration.
    pub lipschitz_decay: f64,
    pub seed: u64,
    pub diagnostics: DiagnosticsLevel,
    /// Full diagnostics every `cadence` iterations.
    pub cadence: usize,
    /// Dump Hessian and scaled spectra every `k` iterations.
    pub spectrum_every: Option<usize>,
    pub timing: bool,
    /// Keep every `thin`-th trace row (plus the first and last).
    pub thin: usize,
}

impl Default for AlgoConfig {
    fn default() -> Self {
        AlgoConfig {
            algo: Algo::ScaledLsvrg,
            eta: EtaSchedule::Constant { value: 0.125 },
            beta: BetaSchedule::Constant { value: 0.99 },
            precond: PrecondKind::DiagonalHutchinson,
            eps: EPS_FLOOR,
            batch_size: 100,
            iterations: 300,
            with_replacement: true,
            full_hessian_update: false,
            theory: TheoryParams::default(),
            lipschitz_decay: 2.0,
            seed: 0,
            diagnostics: DiagnosticsLevel::Off,
            cadence: 10,
            spectrum_every: None,
            timing: false,
            thin: 1,
        }
    }
}

impl AlgoConfig {
    /// Preconditioner kind actually used: unscaled methods keep `P = I`.
    pub fn effective_precond(&self) -> PrecondKind {
        if self.algo.is_scaled() {
            self.precond
        } else {
            PrecondKind::IdentityFrozen
        }
    }

    pub fn validate(&self, m: usize, n: usize) -> Result<()> {
        let fail = |msg: String| Err(OptimError::Config(msg));
        self.theory.validate().map_err(|e| OptimError::Config(e.to_string()))?;
        if self.batch_size == 0 || self.batch_size > m {
            return fail(format!("batch_size {} outside [1, {m}]", self.batch_size));
        }
        if !(self.lipschitz_decay >= 1.0) {
            return fail(format!("lipschitz_decay {} must be at least 1", self.lipschitz_decay));
        }
        if !(self.eps > 0.0) {
            return fail(format!("eps {} must be positive", self.eps));
        }
        if self.cadence == 0 || self.thin == 0 || self.spectrum_every == Some(0) {
            return fail("cadence, thin and spectrum_every must be at least 1".into());
        }
        match self.eta {
            EtaSchedule::Constant { value } if !(value >= 0.0 && value.is_finite()) => {
                return fail(format!("constant step {value} must be finite and nonnegative"));
            }
            EtaSchedule::MomentumBound { fraction } if !(fraction > 0.0) => {
                return fail(format!("momentum-bound fraction {fraction} must be positive"));
            }
            _ => {}
        }
        let beta0 = self.beta.initial();
        if !(0.0..=1.0).contains(&beta0) {
            return fail(format!("initial momentum {beta0} outside [0, 1]"));
        }
        if let BetaSchedule::Series { a0 } = self.beta {
            if !(a0 > 0.0) {
                return fail(format!("series a0 {a0} must be positive"));
            }
        }
        let dense = self.effective_precond().is_dense();
        if (dense || self.diagnostics == DiagnosticsLevel::Full || self.spectrum_every.is_some()) && n > DENSE_HESSIAN_CAP {
            return fail(format!("dense Hessian work needs n <= {DENSE_HESSIAN_CAP}, got {n}"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct Streams {
    batch: SeededRng,
    anchor: SeededRng,
    probe: SeededRng,
}

/// Optimizer state between iterations.
#[derive(Debug, Clone)]
pub struct IterateState {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub t: usize,
    pub precond: PreconditionerState,
    /// `∇f(y)`, replaced together with `y`.
    pub full_grad_at_y: Vec<f64>,
    pub f_x: f64,
    /// `∇f(x)`
    pub grad_x: Vec<f64>,
    pub last_step: f64,
    pub last_beta: f64,
    pub schedule: ScheduleState,
    streams: Streams,
}

impl IterateState {
    pub fn new(prob: &LogisticProblem, cfg: &AlgoConfig, x0: Vec<f64>) -> Result<Self> {
        let f_x = prob.value(&x0)?;
        let grad_x = prob.grad(&x0)?;
        let root = SeededRng::new(cfg.seed);
        let a0 = match cfg.beta {
            BetaSchedule::Series { a0 } => a0,
            _ => 1.0,
        };
        let beta0 = cfg.beta.initial();
        Ok(IterateState {
            y: x0.clone(),
            x: x0,
            t: 0,
            precond: PreconditionerState::new(cfg.effective_precond(), prob.n(), cfg.eps),
            full_grad_at_y: grad_x.clone(),
            f_x,
            grad_x,
            last_step: 0.0,
            last_beta: beta0,
            schedule: ScheduleState::new(beta0, a0, prob.smoothness_constant()),
            streams: Streams {
                batch: root.substream("batch"),
                anchor: root.substream("anchor"),
                probe: root.substream("probe"),
            },
        })
    }

    /// Whether the cached anchor gradient matches a fresh evaluation.
    pub fn cache_is_fresh(&self, prob: &LogisticProblem) -> bool {
        prob.grad(&self.y).map(|g| g == self.full_grad_at_y).unwrap_or(false)
    }

    fn refresh_anchor(&mut self) {
        self.y.clone_from(&self.x);
        self.full_grad_at_y.clone_from(&self.grad_x);
    }
}

/// `∇f_B(x) − ∇f_B(y) + ∇f(y)`
pub fn lsvrg_gradient(prob: &LogisticProblem, state: &IterateState, batch: &Batch) -> Result<Vec<f64>> {
    let mut g = prob.grad_batch_difference(&state.x, &state.y, batch)?;
    linalg::axpy(1.0, &state.full_grad_at_y, &mut g);
    Ok(g)
}

/// Keeps `y` with probability `p`, otherwise moves it to `x` and refreshes
/// the cached gradient. Returns whether the anchor moved.
pub fn anchor_update(state: &mut IterateState, p: f64, rng: &mut impl Rng) -> bool {
    let keep = rng.random::<f64>() < p;
    if !keep {
        state.refresh_anchor();
    }
    !keep
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineSearchResult {
    pub x: f64,
    pub fx: f64,
    pub evals: usize,
}

/// Brent minimisation of `phi` on `[lo, hi]` (golden section with parabolic
/// steps). Both endpoints are probed and the best point seen is returned.
pub fn brent_minimize(mut phi: impl FnMut(f64) -> f64, lo: f64, hi: f64, tol: f64, max_evals: usize) -> LineSearchResult {
    assert!(hi > lo && max_evals >= 3);
    let mut evals = 0usize;
    let mut eval = |t: f64| {
        evals += 1;
        let v = phi(t);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };
    let mut best = LineSearchResult { x: lo, fx: eval(lo), evals: 0 };
    let f_hi = eval(hi);
    if f_hi < best.fx {
        best = LineSearchResult { x: hi, fx: f_hi, evals: 0 };
    }

    let golden = 0.5 * (3.0 - 5f64.sqrt());
    let sqrt_eps = f64::EPSILON.sqrt();
    let (mut a, mut b) = (lo, hi);
    let mut x = a + golden * (b - a);
    let (mut w, mut v) = (x, x);
    let mut fx = eval(x);
    let (mut fw, mut fv) = (fx, fx);
    let (mut d, mut e) = (0.0f64, 0.0f64);
    let mut used = 3;
    while used < max_evals {
        let xm = 0.5 * (a + b);
        let tol1 = sqrt_eps * x.abs() + tol / 3.0;
        let tol2 = 2.0 * tol1;
        if (x - xm).abs() <= tol2 - 0.5 * (b - a) {
            break;
        }
        let mut golden_step = true;
        if e.abs() > tol1 {
            let r = (x - w) * (fx - fv);
            let mut q = (x - v) * (fx - fw);
            let mut p = (x - v) * q - (x - w) * r;
            q = 2.0 * (q - r);
            if q > 0.0 {
                p = -p;
            } else {
                q = -q;
            }
            let e_old = e;
            e = d;
            if p.abs() < (0.5 * q * e_old).abs() && p > q * (a - x) && p < q * (b - x) {
                d = p / q;
                let u = x + d;
                if u - a < tol2 || b - u < tol2 {
                    d = tol1.copysign(xm - x);
                }
                golden_step = false;
            }
        }
        if golden_step {
            e = if x >= xm { a - x } else { b - x };
            d = golden * e;
        }
        let u = if d.abs() >= tol1 { x + d } else { x + tol1.copysign(d) };
        let fu = eval(u);
        used += 1;
        if fu <= fx {
            if u >= x {
                a = x;
            } else {
                b = x;
            }
            v = w;
            fv = fw;
            w = x;
            fw = fx;
            x = u;
            fx = fu;
        } else {
            if u < x {
                a = u;
            } else {
                b = u;
            }
            if fu <= fw || w == x {
                v = w;
                fv = fw;
                w = u;
                fw = fu;
            } else if fu <= fv || v == x || v == w {
                v = u;
                fv = fu;
            }
        }
    }
    if fx < best.fx {
        best = LineSearchResult { x, fx, evals: 0 };
    }
    best.evals = evals;
    best
}

/// Step length in `[0, 1]` minimising `f(x − η·direction)`.
pub fn brent_line_search(prob: &LogisticProblem, x: &[f64], direction: &[f64]) -> Result<f64> {
    if direction.len() != x.len() {
        return Err(OptimError::Objective(ObjectiveError::DimensionMismatch {
            expected: x.len(),
            found: direction.len(),
        }));
    }
    let mut trial = vec![0.0; x.len()];
    let res = brent_minimize(
        |eta| {
            for ((t, xi), di) in trial.iter_mut().zip(x).zip(direction) {
                *t = xi - eta * di;
            }
            prob.value(&trial).unwrap_or(f64::INFINITY)
        },
        0.0,
        1.0,
        1e-6,
        100,
    );
    Ok(res.x)
}

/// Eigenvalues of the Hessian and of the scaled Hessian at one iteration.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpectrumDump {
    pub t: usize,
    pub hessian: Vec<f64>,
    pub scaled: Vec<f64>,
}

impl SpectrumDump {
    pub fn rows(&self) -> Vec<SpectrumRow> {
        diagnostics::spectrum_rows(
            self.t,
            &linalg::Spectrum::new(self.hessian.clone()),
            &linalg::Spectrum::new(self.scaled.clone()),
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum StepOutcome {
    Continue(Box<TraceRecord>),
    Diverged,
}

/// Per-run context that does not change between iterations.
pub struct Runner<'a> {
    prob: &'a LogisticProblem,
    cfg: &'a AlgoConfig,
    run_id: String,
    smoothness: f64,
    started: Instant,
    lipschitz: Vec<f64>,
    error_terms: Vec<f64>,
    grad_pnorms: Vec<f64>,
    spectra: Vec<SpectrumDump>,
}

impl<'a> Runner<'a> {
    pub fn new(prob: &'a LogisticProblem, cfg: &'a AlgoConfig, run_id: &str) -> Result<Self> {
        cfg.validate(prob.m(), prob.n())?;
        Ok(Runner {
            prob,
            cfg,
            run_id: run_id.to_string(),
            smoothness: prob.smoothness_constant(),
            started: Instant::now(),
            lipschitz: Vec::new(),
            error_terms: Vec::new(),
            grad_pnorms: Vec::new(),
            spectra: Vec::new(),
        })
    }

    fn elapsed_ms(&self) -> Option<f64> {
        self.cfg.timing.then(|| self.started.elapsed().as_secs_f64() * 1e3)
    }

    fn full_at(&self, t: usize) -> bool {
        self.cfg.diagnostics == DiagnosticsLevel::Full && t.is_multiple_of(self.cfg.cadence)
    }

    fn spectrum_at(&self, t: usize) -> bool {
        self.cfg.spectrum_every.is_some_and(|k| t.is_multiple_of(k))
    }

    /// Fills `Delta` and the scaled extremes, and records a spectrum dump, as configured.
    fn hessian_diagnostics(&mut self, rec: &mut TraceRecord, x: &[f64], p: &Preconditioner) -> Result<()> {
        let (full, dump) = (self.full_at(rec.t), self.spectrum_at(rec.t));
        if !full && !dump {
            return Ok(());
        }
        let h = self.prob.full_hessian(x, None)?;
        let scaled = scaled_hessian_spectrum(&h, p)?;
        if full {
            rec.delta = Some(scaled.max() - 1.0);
            rec.lambda_min_scaled = Some(scaled.min());
            rec.lambda_max_scaled = Some(scaled.max());
        }
        if dump {
            let hessian = linalg::eig_sym(&h)?;
            self.spectra.push(SpectrumDump { t: rec.t, hessian: hessian.eigenvalues, scaled: scaled.eigenvalues });
        }
        Ok(())
    }

    pub fn initial_record(&mut self, state: &IterateState) -> Result<TraceRecord> {
        let p = state.precond.preconditioner();
        let mut rec = TraceRecord::initial(
            &self.run_id,
            state.f_x,
            linalg::norm2_sq(&state.grad_x),
            p.dual_norm_sq(&state.grad_x)?,
        );
        rec.wall_ms = self.elapsed_ms();
        let p = p.clone();
        self.hessian_diagnostics(&mut rec, &state.x.clone(), &p)?;
        Ok(rec)
    }

    /// One iteration: batch, gradient estimate, anchor, step, preconditioner update.
    pub fn step(&mut self, state: &mut IterateState) -> Result<StepOutcome> {
        let prob = self.prob;
        let cfg = self.cfg;
        let p = cfg.theory.p;
        let p_t = state.precond.preconditioner().clone();
        let lambda_lower_t = state.precond.lambda_min_lower();

        let batch = Batch::sample(prob.m(), cfg.batch_size, cfg.with_replacement, &mut state.streams.batch);
        let g = match cfg.algo {
            Algo::Sgd => prob.grad_batch(&state.x, &batch)?,
            Algo::ScaledSgd => {
                if state.streams.anchor.random::<f64>() < 1.0 - p {
                    state.grad_x.clone()
                } else {
                    prob.grad_batch(&state.x, &batch)?
                }
            }
            Algo::Lsvrg | Algo::ScaledLsvrg => lsvrg_gradient(prob, state, &batch)?,
        };
        if cfg.algo.is_variance_reduced() {
            let keep = state.streams.anchor.random::<f64>() < p;
            if !keep {
                state.refresh_anchor();
            }
        }

        let dir = p_t.apply_inverse(&g)?;
        let g_pnorm2 = p_t.dual_norm_sq(&g)?;
        let eta = match cfg.eta {
            EtaSchedule::Constant { value } => value,
            EtaSchedule::LocalSmoothness => adaptive::local_smoothness_step(state.schedule.l_local, p, cfg.theory.alpha),
            EtaSchedule::MomentumBound { fraction } => {
                fraction
                    * adaptive::momentum_step_bound(
                        &cfg.theory,
                        state.last_beta,
                        state.schedule.kappa,
                        state.schedule.chi,
                        g_pnorm2.sqrt(),
                    )
            }
            EtaSchedule::LineSearch => brent_line_search(prob, &state.x, &dir)?,
        };

        let x_next: Vec<f64> = state.x.iter().zip(&dir).map(|(x, d)| x - eta * d).collect();
        if x_next.iter().any(|v| !v.is_finite()) {
            return Ok(StepOutcome::Diverged);
        }
        let f_next = prob.value(&x_next)?;
        if !f_next.is_finite() || f_next.abs() > DIVERGENCE_LIMIT {
            return Ok(StepOutcome::Diverged);
        }
        let grad_next = prob.grad(&x_next)?;

        let dx = linalg::sub(&x_next, &state.x);
        let dg = linalg::sub(&grad_next, &state.grad_x);
        let upper = self.smoothness / lambda_lower_t;
        let l_t = adaptive::clamp_lipschitz(adaptive::secant_lipschitz(&p_t, &dx, &dg)?, state.schedule.l_local, upper)
            .max((state.schedule.l_local / cfg.lipschitz_decay).min(upper));

        let hess_batch = if cfg.full_hessian_update { None } else { Some(&batch) };
        let d = state.precond.update_term(prob, &x_next, hess_batch, &mut state.streams.probe)?;
        let (kappa, chi) = match &d {
            Some(d) => adaptive::kappa_chi(&p_t, d)?,
            None => (0.0, 0.0),
        };
        let gap_sq = linalg::norm2_sq(&linalg::sub(&x_next, &state.y));
        let g_pnorm = g_pnorm2.sqrt();
        let beta_next = match cfg.beta {
            BetaSchedule::Constant { value } => value,
            BetaSchedule::Series { .. } => {
                adaptive::series_beta(l_t, gap_sq, state.schedule.a_series(state.t + 1))
            }
            BetaSchedule::Adaptive { .. } => adaptive::adaptive_beta(&cfg.theory, state.last_beta, kappa, chi, g_pnorm),
            BetaSchedule::Crossing { .. } => adaptive::crossing_beta(&cfg.theory, state.last_beta, kappa, chi, g_pnorm),
        };
        if let Some(d) = &d {
            state.precond.momentum_update(d, beta_next)?;
        }

        let light = cfg.diagnostics != DiagnosticsLevel::Off;
        let mut rec = TraceRecord::initial(&self.run_id, f_next, linalg::norm2_sq(&grad_next), 0.0);
        rec.t = state.t + 1;
        rec.grad_pnorm2 = state.precond.preconditioner().dual_norm_sq(&grad_next)?;
        rec.eta = Some(eta);
        rec.beta = Some(beta_next);
        rec.l_local = Some(l_t);
        if light {
            let noise = linalg::sub(&g, &state.grad_x);
            let noise_pnorm2 = p_t.dual_norm_sq(&noise)?;
            rec.g_pnorm2 = Some(g_pnorm2);
            rec.noise_pnorm2 = Some(noise_pnorm2);
            let inp = DescentInputs {
                f_prev: state.f_x,
                f_next,
                eta,
                beta: state.last_beta,
                beta_next,
                kappa: state.schedule.kappa,
                chi: state.schedule.chi,
                grad_pnorm2: p_t.dual_norm_sq(&state.grad_x)?,
                g_pnorm2,
                noise_pnorm2,
            };
            rec.descent_residual = Some(diagnostics::descent_residual(&inp, &cfg.theory));
            if let Some(d) = &d {
                let (dp, dm) = diagnostics::delta_pm(state.precond.preconditioner(), d)?;
                rec.kappa = Some(kappa);
                rec.chi = Some(chi);
                rec.delta_plus = Some(dp);
                rec.delta_minus = Some(dm);
            }
        }

        self.lipschitz.push(l_t);
        self.error_terms.push(l_t * (1.0 - beta_next) * gap_sq);
        self.grad_pnorms.push(rec.grad_pnorm2);

        state.x = x_next;
        state.f_x = f_next;
        state.grad_x = grad_next;
        state.t += 1;
        state.last_step = eta;
        state.last_beta = beta_next;
        state.schedule.beta_prev = beta_next;
        state.schedule.l_local = l_t;
        state.schedule.kappa = kappa;
        state.schedule.chi = chi;

        let p_next = state.precond.preconditioner().clone();
        self.hessian_diagnostics(&mut rec, &state.x, &p_next)?;
        rec.wall_ms = self.elapsed_ms();
        Ok(StepOutcome::Continue(Box::new(rec)))
    }

    pub fn rate_summary(&self) -> Option<RateSummary> {
        RateSummary::from_series(&self.lipschitz, &self.error_terms, &self.grad_pnorms).ok()
    }

    pub fn spectra(&self) -> &[SpectrumDump] {
        &self.spectra
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub run_id: String,
    pub final_f: f64,
    pub final_grad_norm2: f64,
    pub diverged: bool,
    pub wall_ms: Option<f64>,
    pub iterations: usize,
    pub rate: Option<RateSummary>,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub trace: Vec<TraceRecord>,
    pub summary: RunSummary,
    pub spectra: Vec<SpectrumDump>,
    pub x: Vec<f64>,
    pub precond: PreconditionerState,
}

/// Runs `cfg.iterations` steps from `x = 0`.
pub fn run(prob: &LogisticProblem, cfg: &AlgoConfig, run_id: &str) -> Result<RunOutput> {
    run_from(prob, cfg, run_id, vec![0.0; prob.n()])
}

pub fn run_from(prob: &LogisticProblem, cfg: &AlgoConfig, run_id: &str, x0: Vec<f64>) -> Result<RunOutput> {
    let mut runner = Runner::new(prob, cfg, run_id)?;
    let mut state = IterateState::new(prob, cfg, x0)?;
    let mut trace = vec![runner.initial_record(&state)?];
    let mut diverged = false;
    for _ in 0..cfg.iterations {
        match runner.step(&mut state)? {
            StepOutcome::Continue(rec) => {
                if rec.t % cfg.thin == 0 || rec.t == cfg.iterations {
                    trace.push(*rec);
                }
            }
            StepOutcome::Diverged => {
                log::warn!("run {run_id} diverged at t = {}", state.t);
                diverged = true;
                break;
            }
        }
    }
    let summary = RunSummary {
        run_id: run_id.to_string(),
        final_f: state.f_x,
        final_grad_norm2: linalg::norm2_sq(&state.grad_x),
        diverged,
        wall_ms: runner.elapsed_ms(),
        iterations: state.t,
        rate: runner.rate_summary(),
    };
    Ok(RunOutput { trace, summary, spectra: runner.spectra.clone(), x: state.x, precond: state.precond })
}
