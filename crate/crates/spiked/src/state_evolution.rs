//! Scalar asymptotics of the Bayes-optimal estimators: state-evolution
//! fixed points, MMSE, the replica mutual information and the stability of
//! the uninformative point.

use std::collections::{HashMap, VecDeque};
use std::f64::consts::PI;
use std::sync::{Mutex, OnceLock};

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::channels::{latent_rule, null_moments, psi_out, psi_prior_with_overlap, psi_z, OutIntegrator};
use crate::error::{ensure_finite, Error, Result};
use crate::priors::{rho_v, Activation, ActivationKind, LatentPrior};

/// Order parameters. `q_hat_z` is the conjugate of `q_z`; `q_u` is only set
/// for the Wishart model.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct OverlapState {
    pub q_v: f64,
    pub q_z: f64,
    pub q_hat_z: f64,
    pub q_u: Option<f64>,
}

impl OverlapState {
    pub fn zero() -> Self {
        OverlapState { q_v: 0.0, q_z: 0.0, q_hat_z: 0.0, q_u: None }
    }

    pub fn wigner(q_v: f64, q_z: f64, q_hat_z: f64) -> Self {
        OverlapState { q_v, q_z, q_hat_z, q_u: None }
    }

    pub fn wishart(q_u: f64, q_v: f64, q_z: f64, q_hat_z: f64) -> Self {
        OverlapState { q_v, q_z, q_hat_z, q_u: Some(q_u) }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub enum SeInit {
    /// all overlaps start at eps
    Uninformative(f64),
    /// overlaps start just below their maximal values
    Informative,
}

impl SeInit {
    pub fn name(&self) -> &'static str {
        match self {
            SeInit::Uninformative(_) => "uninformative",
            SeInit::Informative => "informative",
        }
    }
}

/// Relative margin below the maximal overlaps used by the informative start.
pub const INFORMATIVE_MARGIN: f64 = 1e-6;
/// Default eps of the uninformative start.
pub const DEFAULT_EPS: f64 = 1e-6;
/// A converged fixed point is re-checked with this quadrature order.
pub const CHECK_ORDER: usize = 128;
/// Disagreement between the two orders that triggers re-solving at the higher one.
pub const ORDER_DISAGREEMENT: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SeConfig {
    /// mixing weight of the previous q_hat_z
    pub damping: f64,
    pub tol: f64,
    pub max_iter: usize,
    pub init: SeInit,
    pub quad_order: usize,
    /// geometric extrapolation of slow single-mode tails
    pub extrapolate: bool,
}

impl Default for SeConfig {
    fn default() -> Self {
        SeConfig {
            damping: 0.5,
            tol: 1e-10,
            max_iter: 5000,
            init: SeInit::Uninformative(DEFAULT_EPS),
            quad_order: 64,
            extrapolate: true,
        }
    }
}

impl SeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.damping) {
            return Err(Error::invalid(format!("damping must lie in [0, 1), got {}", self.damping)));
        }
        if !(self.tol > 0.0) || !self.tol.is_finite() {
            return Err(Error::invalid(format!("tol must be positive, got {}", self.tol)));
        }
        if self.max_iter == 0 {
            return Err(Error::invalid("max_iter must be positive"));
        }
        if self.quad_order < 2 {
            return Err(Error::invalid(format!("quadrature order must be >= 2, got {}", self.quad_order)));
        }
        if let SeInit::Uninformative(eps) = self.init {
            if !(eps > 0.0) || !eps.is_finite() {
                return Err(Error::invalid(format!("uninformative eps must be positive, got {eps}")));
            }
        }
        Ok(())
    }

    fn eps(&self) -> f64 {
        match self.init {
            SeInit::Uninformative(eps) => eps,
            SeInit::Informative => DEFAULT_EPS,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub enum SeModel {
    Wigner,
    /// `beta = n / p`; `prior_u` is the prior of the left factor.
    Wishart { beta: f64, prior_u: LatentPrior },
}

impl SeModel {
    pub fn name(&self) -> &'static str {
        match self {
            SeModel::Wigner => "wigner",
            SeModel::Wishart { .. } => "wishart",
        }
    }
}

/// Result of one SE solve.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct PhasePoint {
    pub alpha: f64,
    pub delta: f64,
    pub rho_v: f64,
    pub mmse_v: f64,
    pub q_v_star: f64,
    pub q_z: f64,
    pub q_hat_z: f64,
    pub q_u: Option<f64>,
    pub iters: usize,
    pub converged: bool,
    pub init_used: SeInit,
    pub clamp_events: usize,
    pub quad_order: usize,
}

impl PhasePoint {
    pub fn state(&self) -> OverlapState {
        OverlapState { q_v: self.q_v_star, q_z: self.q_z, q_hat_z: self.q_hat_z, q_u: self.q_u }
    }
}

/// Both starts of [`se_fixed_point`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SeOutcome {
    pub uninformative: PhasePoint,
    pub informative: PhasePoint,
}

impl SeOutcome {
    pub fn both_converged(&self) -> bool {
        self.uninformative.converged && self.informative.converged
    }

    /// |q_v(uninformative) - q_v(informative)|
    pub fn gap(&self) -> f64 {
        (self.uninformative.q_v_star - self.informative.q_v_star).abs()
    }

    /// The informative point when it converged, else the uninformative one.
    /// Selecting by free energy when the two differ is done by
    /// [`mutual_information`].
    pub fn preferred(&self) -> &PhasePoint {
        if self.informative.converged || !self.uninformative.converged {
            &self.informative
        } else {
            &self.uninformative
        }
    }
}

fn integrator(order: usize) -> &'static OutIntegrator {
    static CACHE: OnceLock<Mutex<HashMap<usize, &'static OutIntegrator>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let mut guard = cache.lock().unwrap_or_else(|e| e.into_inner());
    guard.entry(order).or_insert_with(|| Box::leak(Box::new(OutIntegrator::new(order))))
}

/// Validated problem data shared by every step of a solve.
#[derive(Clone, Copy, Debug)]
struct Problem<'a> {
    act: Activation,
    latent: &'a LatentPrior,
    alpha: f64,
    delta: f64,
    model: SeModel,
    rho_z: f64,
    rho_v: f64,
}

impl<'a> Problem<'a> {
    fn new(delta: f64, alpha: f64, act: Activation, latent: &'a LatentPrior, model: &SeModel) -> Result<Self> {
        ensure_finite("delta", delta)?;
        ensure_finite("alpha", alpha)?;
        if delta <= 0.0 {
            return Err(Error::invalid(format!("delta must be positive, got {delta}")));
        }
        if alpha < 0.0 {
            return Err(Error::invalid(format!("alpha must be >= 0, got {alpha}")));
        }
        if let SeModel::Wishart { beta, .. } = model {
            ensure_finite("beta", *beta)?;
            if *beta <= 0.0 {
                return Err(Error::invalid(format!("beta must be positive, got {beta}")));
            }
        }
        Ok(Problem { act, latent, alpha, delta, model: *model, rho_z: latent.second_moment(), rho_v: rho_v(act, latent) })
    }

    fn rho_u(&self) -> Option<f64> {
        match self.model {
            SeModel::Wigner => None,
            SeModel::Wishart { prior_u, .. } => Some(prior_u.second_moment()),
        }
    }

    fn start(&self, init: SeInit) -> OverlapState {
        let (q_v, q_z, q_u) = match init {
            SeInit::Uninformative(eps) => (eps.min(self.rho_v), eps.min(self.rho_z), self.rho_u().map(|r| eps.min(r))),
            SeInit::Informative => {
                let m = 1.0 - INFORMATIVE_MARGIN;
                (m * self.rho_v, m * self.rho_z, self.rho_u().map(|r| m * r))
            }
        };
        OverlapState { q_v, q_z, q_hat_z: 0.0, q_u }
    }

    /// One application of the recursion. `mix` blends the new q_hat_z with
    /// the previous one as `(1 - d) new + d old`. Returns the clamped state
    /// and how many components had to be clamped.
    fn step(&self, s: &OverlapState, integ: &OutIntegrator, mix: Option<(f64, f64)>) -> Result<(OverlapState, usize)> {
        let snr = match self.model {
            SeModel::Wigner => s.q_v / self.delta,
            SeModel::Wishart { beta, .. } => beta * s.q_u.unwrap_or(s.q_v) / self.delta,
        };
        let m = integ.moments(self.act, self.rho_z, snr, s.q_z.clamp(0.0, self.rho_z))?;
        let mut q_hat = self.alpha * m.e_fout2;
        if let Some((d, old)) = mix {
            q_hat = (1.0 - d) * q_hat + d * old;
        }
        let mut clamps = 0;
        let mut clamp = |x: f64, hi: f64| {
            let y = x.clamp(0.0, hi);
            if y != x {
                clamps += 1;
            }
            y
        };
        let q_hat = clamp(q_hat, f64::INFINITY);
        let q_z = psi_prior_with_overlap(self.latent, q_hat, &latent_rule(q_hat))?.1;
        let q_z = clamp(q_z, self.rho_z);
        let q_v = clamp(m.e_fv2, self.rho_v);
        let q_u = match self.model {
            SeModel::Wigner => None,
            SeModel::Wishart { prior_u, .. } => {
                let x = s.q_v / self.delta;
                let raw = psi_prior_with_overlap(&prior_u, x, &latent_rule(x))?.1;
                Some(clamp(raw, prior_u.second_moment()))
            }
        };
        let out = OverlapState { q_v, q_z, q_hat_z: q_hat, q_u };
        for (name, v) in [("q_v", q_v), ("q_z", q_z), ("q_hat_z", q_hat)] {
            if !v.is_finite() {
                return Err(Error::numerical(format!("non-finite {name} at delta={}, alpha={}", self.delta, self.alpha)));
            }
        }
        Ok((out, clamps))
    }

    fn point(&self, s: &OverlapState, iters: usize, converged: bool, init: SeInit, clamps: usize, order: usize) -> PhasePoint {
        PhasePoint {
            alpha: self.alpha,
            delta: self.delta,
            rho_v: self.rho_v,
            mmse_v: mmse(s.q_v, self.rho_v),
            q_v_star: s.q_v,
            q_z: s.q_z,
            q_hat_z: s.q_hat_z,
            q_u: s.q_u,
            iters,
            converged,
            init_used: init,
            clamp_events: clamps,
            quad_order: order,
        }
    }
}

/// Sup-norm distance used for convergence; q_hat_z is unbounded and is
/// compared relatively once it exceeds 1.
fn distance(a: &OverlapState, b: &OverlapState) -> f64 {
    let mut d = (a.q_v - b.q_v).abs().max((a.q_z - b.q_z).abs());
    d = d.max((a.q_hat_z - b.q_hat_z).abs() / a.q_hat_z.max(b.q_hat_z).max(1.0));
    if let (Some(x), Some(y)) = (a.q_u, b.q_u) {
        d = d.max((x - y).abs());
    }
    d
}

struct Iteration {
    state: OverlapState,
    iters: usize,
    converged: bool,
    clamps: usize,
    jumps: usize,
}

fn diff(a: &OverlapState, b: &OverlapState) -> [f64; 4] {
    let scale = a.q_hat_z.max(b.q_hat_z).max(1.0);
    [
        b.q_v - a.q_v,
        b.q_z - a.q_z,
        (b.q_hat_z - a.q_hat_z) / scale,
        b.q_u.unwrap_or(0.0) - a.q_u.unwrap_or(0.0),
    ]
}

fn cosine(a: &[f64; 4], b: &[f64; 4]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

/// Tracks the last steps and decides when the tail is a clean geometric
/// contraction along one direction, which can be summed in closed form.
#[derive(Default)]
struct TailDetector {
    ratios: Vec<f64>,
    last: Option<[f64; 4]>,
    aligned: usize,
}

impl TailDetector {
    fn reset(&mut self) {
        *self = TailDetector::default();
    }

    /// Returns the ratio to extrapolate with, if any.
    fn push(&mut self, d: [f64; 4], ratio: f64) -> Option<f64> {
        if let Some(prev) = self.last {
            self.aligned = if cosine(&prev, &d) > 1.0 - 1e-6 { self.aligned + 1 } else { 0 };
        }
        self.last = Some(d);
        if ratio.is_finite() {
            self.ratios.push(ratio);
        }
        let n = self.ratios.len();
        if n < 3 || self.aligned < 3 {
            return None;
        }
        let r = &self.ratios[n - 3..];
        let gap = 1.0 - r[2];
        let steady = r.iter().all(|&x| x > 0.5 && x < 1.0) && (r[2] - r[1]).abs() < 0.05 * gap && (r[1] - r[0]).abs() < 0.05 * gap;
        steady.then_some(r[2])
    }
}

/// Steps below `tol` times this are accepted whatever the ratio: at that
/// size the ratios are dominated by rounding noise.
const NOISE_FRACTION: f64 = 1e-3;
const RATIO_WINDOW: usize = 10;
const MIN_PLAIN_STEPS: usize = 5;

/// Damped fixed-point iteration. A step is accepted as converged when it is
/// below `tol` and the geometric tail estimate `step / (1 - r)` (r = larger of
/// the recent ratios of successive steps) is below `tol` too, or when the
/// step is below `tol / 1000`.
fn iterate(pb: &Problem, start: OverlapState, cfg: &SeConfig, order: usize, budget: usize, damp_first: bool, extrapolate: bool) -> Result<Iteration> {
    let integ = integrator(order);
    let mut s = start;
    let mut prev_step = f64::NAN;
    let mut clamps = 0;
    let mut jumps = 0;
    let mut damp = damp_first;
    let mut tail = TailDetector::default();
    let mut recent: VecDeque<f64> = VecDeque::with_capacity(RATIO_WINDOW);
    for it in 1..=budget {
        let mix = if damp && cfg.damping > 0.0 { Some((cfg.damping, s.q_hat_z)) } else { None };
        let (next, c) = pb.step(&s, integ, mix)?;
        clamps += c;
        damp = true;
        let step = distance(&s, &next);
        let d = diff(&s, &next);
        s = next;
        let ratio = step / prev_step;
        prev_step = step;
        // slowest recent ratio, so that a slow mode is not hidden under a
        // fast one that dominates the first steps after a start or a jump
        if recent.len() == RATIO_WINDOW {
            recent.pop_front();
        }
        recent.push_back(ratio);
        let r = recent.iter().fold(f64::NEG_INFINITY, |m, &x| if x.is_nan() { f64::INFINITY } else { m.max(x) });
        let tail_ok = recent.len() >= MIN_PLAIN_STEPS && r < 1.0 && step / (1.0 - r) < cfg.tol;
        if step < NOISE_FRACTION * cfg.tol || (step < cfg.tol && tail_ok) {
            return Ok(Iteration { state: s, iters: it, converged: true, clamps, jumps });
        }
        if !extrapolate {
            continue;
        }
        if let Some(r) = tail.push(d, ratio) {
            // remaining sum of a geometric tail d (r + r^2 + ...)
            let f = r / (1.0 - r);
            let mut jumped = OverlapState {
                q_v: s.q_v + f * d[0],
                q_z: s.q_z + f * d[1],
                q_hat_z: s.q_hat_z + f * d[2] * s.q_hat_z.max(1.0),
                q_u: s.q_u.map(|u| u + f * d[3]),
            };
            jumped.q_v = jumped.q_v.clamp(0.0, pb.rho_v);
            jumped.q_z = jumped.q_z.clamp(0.0, pb.rho_z);
            jumped.q_hat_z = jumped.q_hat_z.max(0.0);
            if let (Some(u), Some(r_u)) = (jumped.q_u, pb.rho_u()) {
                jumped.q_u = Some(u.clamp(0.0, r_u));
            }
            s = jumped;
            jumps += 1;
            prev_step = f64::NAN;
            recent.clear();
            tail.reset();
        }
    }
    Ok(Iteration { state: s, iters: budget, converged: false, clamps, jumps })
}

fn solve(pb: &Problem, cfg: &SeConfig, init: SeInit) -> Result<PhasePoint> {
    let point = solve_with(pb, cfg, init, cfg.extrapolate)?;
    // an extrapolated run must not settle on an unstable uninformative point
    if cfg.extrapolate && point.q_v_star <= 1e-8 * pb.rho_v && pb.act.zero_mean_output() {
        let j = stability_matrix(pb.delta, pb.alpha, pb.act, pb.latent, &pb.model)?;
        if spectral_radius(&j) >= 1.0 {
            return solve_with(pb, cfg, init, false);
        }
    }
    Ok(point)
}

fn solve_with(pb: &Problem, cfg: &SeConfig, init: SeInit, extrapolate: bool) -> Result<PhasePoint> {
    let start = pb.start(init);
    let mut run = iterate(pb, start, cfg, cfg.quad_order, cfg.max_iter, false, extrapolate)?;
    let mut order = cfg.quad_order;
    if run.converged && order < CHECK_ORDER {
        // re-check the fixed point with the doubled order
        let mix = if cfg.damping > 0.0 { Some((cfg.damping, run.state.q_hat_z)) } else { None };
        let (check, c) = pb.step(&run.state, integrator(CHECK_ORDER), mix)?;
        run.clamps += c;
        if distance(&run.state, &check) > ORDER_DISAGREEMENT {
            order = CHECK_ORDER;
            let budget = cfg.max_iter.saturating_sub(run.iters).max(1);
            let refined = iterate(pb, check, cfg, order, budget, true, extrapolate)?;
            run = Iteration {
                state: refined.state,
                iters: run.iters + 1 + refined.iters,
                converged: refined.converged,
                clamps: run.clamps + refined.clamps,
                jumps: run.jumps + refined.jumps,
            };
        }
    }
    let _ = run.jumps;
    Ok(pb.point(&run.state, run.iters, run.converged, init, run.clamps, order))
}

/// One undamped Wigner step: `q_hat_z = alpha E[Z f_out^2]`,
/// `q_v' = E[Z f_v^2]` at `(q_v / delta, q_z)` and `q_z' = E[Z_z f_z^2](q_hat_z)`.
pub fn se_step_wigner(state: &OverlapState, delta: f64, alpha: f64, act: Activation, latent: &LatentPrior) -> Result<OverlapState> {
    let pb = Problem::new(delta, alpha, act, latent, &SeModel::Wigner)?;
    Ok(pb.step(state, integrator(64), None)?.0)
}

/// One undamped Wishart step. The output channel sees `beta q_u / delta`,
/// the left factor sees `q_v / delta`. A missing `q_u` is read as `q_v`.
pub fn se_step_wishart(
    state: &OverlapState,
    delta: f64,
    alpha: f64,
    beta: f64,
    act: Activation,
    latent: &LatentPrior,
    prior_u: &LatentPrior,
) -> Result<OverlapState> {
    let pb = Problem::new(delta, alpha, act, latent, &SeModel::Wishart { beta, prior_u: *prior_u })?;
    let s = OverlapState { q_u: Some(state.q_u.unwrap_or(state.q_v)), ..*state };
    Ok(pb.step(&s, integrator(64), None)?.0)
}

/// Undamped trajectory of `steps` iterations, starting point included.
pub fn se_trajectory(
    start: &OverlapState,
    steps: usize,
    delta: f64,
    alpha: f64,
    act: Activation,
    latent: &LatentPrior,
    model: &SeModel,
) -> Result<Vec<OverlapState>> {
    let pb = Problem::new(delta, alpha, act, latent, model)?;
    let mut s = *start;
    if matches!(model, SeModel::Wishart { .. }) && s.q_u.is_none() {
        s.q_u = Some(s.q_v);
    }
    let mut out = Vec::with_capacity(steps + 1);
    out.push(s);
    for _ in 0..steps {
        s = pb.step(&s, integrator(64), None)?.0;
        out.push(s);
    }
    Ok(out)
}

/// Solves from the single start `cfg.init`.
pub fn se_run(cfg: &SeConfig, delta: f64, alpha: f64, act: Activation, latent: &LatentPrior, model: &SeModel) -> Result<PhasePoint> {
    cfg.validate()?;
    let pb = Problem::new(delta, alpha, act, latent, model)?;
    solve(&pb, cfg, cfg.init)
}

/// Solves from both the uninformative start (eps from `cfg.init`, default
/// 1e-6) and the informative one.
pub fn se_fixed_point(
    cfg: &SeConfig,
    delta: f64,
    alpha: f64,
    act: Activation,
    latent: &LatentPrior,
    model: &SeModel,
) -> Result<SeOutcome> {
    cfg.validate()?;
    let pb = Problem::new(delta, alpha, act, latent, model)?;
    let uninformative = solve(&pb, cfg, SeInit::Uninformative(cfg.eps()))?;
    let informative = solve(&pb, cfg, SeInit::Informative)?;
    Ok(SeOutcome { uninformative, informative })
}

pub fn mmse(q_v_star: f64, rho_v: f64) -> f64 {
    rho_v - q_v_star
}

pub fn matrix_mmse(q_v_star: f64, rho_v: f64) -> f64 {
    rho_v * rho_v - q_v_star * q_v_star
}

/// Replica mutual information per coordinate evaluated at an overlap state:
/// `rho_v^2/4D + q_v^2/4D + (q_z q_hat/2 - psi_z(q_hat))/alpha - psi_out(q_v/D, q_z)`.
/// At `alpha = 0` the latent bracket drops out.
pub fn i_rs_at(state: &OverlapState, delta: f64, alpha: f64, act: Activation, latent: &LatentPrior) -> Result<f64> {
    let pb = Problem::new(delta, alpha, act, latent, &SeModel::Wigner)?;
    let q = state.q_v.clamp(0.0, pb.rho_v);
    let mut i = (pb.rho_v * pb.rho_v + q * q) / (4.0 * delta);
    if alpha > 0.0 {
        let q_z = state.q_z.clamp(0.0, pb.rho_z);
        let q_hat = state.q_hat_z.max(0.0);
        i += (0.5 * q_z * q_hat - psi_z(latent, q_hat)?) / alpha;
        i -= psi_out(act, latent, q / delta, q_z)?;
    } else {
        i -= psi_out(act, latent, q / delta, 0.0)?;
    }
    Ok(i)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MutualInfo {
    pub i_rs: f64,
    pub q_v_star: f64,
    /// false when no start reached the tolerance; the value is then taken at
    /// the last iterate
    pub converged: bool,
    pub point: PhasePoint,
}

/// `i_RS` at the fixed point with the smallest value among the two starts.
pub fn mutual_information(delta: f64, alpha: f64, act: Activation, latent: &LatentPrior) -> Result<MutualInfo> {
    mutual_information_with(&SeConfig::default(), delta, alpha, act, latent)
}

pub fn mutual_information_with(
    cfg: &SeConfig,
    delta: f64,
    alpha: f64,
    act: Activation,
    latent: &LatentPrior,
) -> Result<MutualInfo> {
    let out = se_fixed_point(cfg, delta, alpha, act, latent, &SeModel::Wigner)?;
    let any = out.uninformative.converged || out.informative.converged;
    let mut best: Option<MutualInfo> = None;
    for p in [out.uninformative, out.informative] {
        if any && !p.converged {
            continue;
        }
        let i_rs = i_rs_at(&p.state(), delta, alpha, act, latent)?;
        if best.map_or(true, |b| i_rs < b.i_rs) {
            best = Some(MutualInfo { i_rs, q_v_star: p.q_v_star, converged: p.converged, point: p });
        }
    }
    best.ok_or_else(|| Error::numerical("no fixed point"))
}

fn require_uninformative_point(act: Activation, latent: &LatentPrior) -> Result<()> {
    if !act.zero_mean_output() || latent.mean() != 0.0 {
        return Err(Error::Domain(format!(
            "uninformative fixed point does not exist for activation {act} (E[v] != 0 under the null channel)"
        )));
    }
    Ok(())
}

/// Linearization of the Wigner recursion at (0, 0, 0), variables ordered
/// `(q_v, q_hat_z, q_z)`.
pub fn jacobian_at_zero(delta: f64, alpha: f64, act: Activation, latent: &LatentPrior) -> Result<DMatrix<f64>> {
    Problem::new(delta, alpha, act, latent, &SeModel::Wigner)?;
    require_uninformative_point(act, latent)?;
    let nm = null_moments(act, latent);
    let rho = latent.second_moment();
    let rho2 = rho * rho;
    let vx2 = nm.e_vx * nm.e_vx;
    let x2 = (nm.e_x2 - rho).powi(2);
    #[rustfmt::skip]
    let j = DMatrix::from_row_slice(3, 3, &[
        nm.e_v2 * nm.e_v2 / delta, 0.0, vx2 / rho2,
        alpha * vx2 / (delta * rho2), 0.0, alpha * x2 / rho2,
        0.0, rho2, 0.0,
    ]);
    Ok(j)
}

/// Linearization of the Wishart recursion at zero, variables ordered
/// `(q_u, q_v, q_z, q_hat_z)`.
pub fn jacobian_at_zero_wishart(
    delta: f64,
    alpha: f64,
    beta: f64,
    act: Activation,
    latent: &LatentPrior,
    prior_u: &LatentPrior,
) -> Result<DMatrix<f64>> {
    Problem::new(delta, alpha, act, latent, &SeModel::Wishart { beta, prior_u: *prior_u })?;
    require_uninformative_point(act, latent)?;
    if prior_u.mean() != 0.0 {
        return Err(Error::Domain("uninformative fixed point needs E[u] = 0".into()));
    }
    let nm = null_moments(act, latent);
    let rho = latent.second_moment();
    let rho2 = rho * rho;
    let rho_u = prior_u.second_moment();
    let vx2 = nm.e_vx * nm.e_vx;
    let x2 = (nm.e_x2 - rho).powi(2);
    #[rustfmt::skip]
    let j = DMatrix::from_row_slice(4, 4, &[
        0.0, rho_u * rho_u / delta, 0.0, 0.0,
        beta * nm.e_v2 * nm.e_v2 / delta, 0.0, vx2 / rho2, 0.0,
        0.0, 0.0, 0.0, rho2,
        alpha * beta * vx2 / (delta * rho2), 0.0, alpha * x2 / rho2, 0.0,
    ]);
    Ok(j)
}

/// Characteristic polynomial coefficients `c_0..c_{n-1}` (monic, `c_n = 1`)
/// by the Faddeev–LeVerrier recursion.
fn char_poly(m: &DMatrix<f64>) -> Vec<f64> {
    let n = m.nrows();
    let mut c = vec![0.0; n + 1];
    c[n] = 1.0;
    let mut mk = DMatrix::<f64>::zeros(n, n);
    for k in 1..=n {
        mk = m * &mk + DMatrix::identity(n, n) * c[n + 1 - k];
        c[n - k] = -(m * &mk).trace() / k as f64;
    }
    c.truncate(n);
    c
}

/// Largest eigenvalue modulus, from the companion matrix of the
/// characteristic polynomial.
pub fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows();
    assert_eq!(n, m.ncols(), "spectral radius needs a square matrix");
    if n == 0 {
        return 0.0;
    }
    let c = char_poly(m);
    let mut comp = DMatrix::<f64>::zeros(n, n);
    for i in 1..n {
        comp[(i, i - 1)] = 1.0;
    }
    for (i, ci) in c.iter().enumerate() {
        comp[(i, n - 1)] = -ci;
    }
    let eig: DVector<num_complex::Complex<f64>> = comp.complex_eigenvalues();
    eig.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

fn stability_matrix(delta: f64, alpha: f64, act: Activation, latent: &LatentPrior, model: &SeModel) -> Result<DMatrix<f64>> {
    match model {
        SeModel::Wigner => jacobian_at_zero(delta, alpha, act, latent),
        SeModel::Wishart { beta, prior_u } => jacobian_at_zero_wishart(delta, alpha, *beta, act, latent, prior_u),
    }
}

/// Noise level below which the uninformative point is unstable: the
/// infimum of the `delta` with spectral radius < 1, found by bisection.
pub fn delta_c(alpha: f64, act: Activation, latent: &LatentPrior, model: &SeModel) -> Result<f64> {
    let stable = |d: f64| -> Result<bool> { Ok(spectral_radius(&stability_matrix(d, alpha, act, latent, model)?) < 1.0) };
    let mut hi = 1.0;
    while !stable(hi)? {
        hi *= 2.0;
        if hi > 1e15 {
            return Err(Error::numerical("uninformative point unstable at every noise level"));
        }
    }
    let mut lo = hi;
    while stable(lo)? {
        lo *= 0.5;
        if lo < 1e-15 {
            return Err(Error::numerical("uninformative point stable at every noise level"));
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if stable(mid)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

/// Closed-form thresholds for a unit-variance latent: `1 + alpha` (linear),
/// `1 + 4 alpha / pi^2` (sign), and `sqrt(beta (...))` for Wishart.
pub fn delta_c_closed_form(alpha: f64, act: Activation, model: &SeModel) -> Result<f64> {
    let wigner = match act.kind {
        ActivationKind::Linear => 1.0 + alpha,
        ActivationKind::Sign => 1.0 + 4.0 * alpha / (PI * PI),
        ActivationKind::Relu => {
            return Err(Error::Domain("uninformative fixed point does not exist for relu".into()));
        }
    };
    Ok(match model {
        SeModel::Wigner => wigner,
        SeModel::Wishart { beta, .. } => (beta * wigner).sqrt(),
    })
}
