//! Bayes-optimal AMP for the spiked Wigner and spiked Wishart models with a
//! single-layer generative prior on `v`.

use std::io::Write;

use nalgebra::DVector;
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::channels::{latent_posterior_unchecked, OmegaContext, MIN_VAR_FRACTION};
use crate::error::{Error, Result};
use crate::priors::{GenerativeModel, LatentPrior, ObservationModel, SpikedInstance};
use crate::rng::{self, derive_seed};

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct AmpConfig {
    pub max_iter: usize,
    /// stop when |v_hat' - v_hat| / |v_hat| < tol
    pub tol: f64,
    /// weight of the previous v_hat and z_hat in the update
    pub damping: f64,
    pub init_sigma2: f64,
    /// Keep the `v_hat^{t-1}` memory term in `B`. Switching it off is only
    /// useful as a diagnostic.
    pub onsager: bool,
}

impl Default for AmpConfig {
    fn default() -> Self {
        AmpConfig { max_iter: 500, tol: 1e-7, damping: 0.0, init_sigma2: 1.0, onsager: true }
    }
}

impl AmpConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iter == 0 {
            return Err(Error::invalid("max_iter must be positive"));
        }
        if !(self.tol > 0.0) {
            return Err(Error::invalid(format!("tol must be positive, got {}", self.tol)));
        }
        if !(0.0..1.0).contains(&self.damping) {
            return Err(Error::invalid(format!("damping must lie in [0, 1), got {}", self.damping)));
        }
        if !(self.init_sigma2 > 0.0) || !self.init_sigma2.is_finite() {
            return Err(Error::invalid(format!("init_sigma2 must be positive, got {}", self.init_sigma2)));
        }
        Ok(())
    }
}

/// Messages at iteration `t`: the estimates `v_hat, z_hat` with variances
/// `c_v, c_z`, the previous-iterate memory `v_hat_prev, g_prev`, and the
/// fields `b_v, a_v, omega, v, g, gamma, lambda` computed from the previous step.
#[derive(Clone, Debug)]
pub struct AmpStateWigner {
    pub t: usize,
    pub v_hat: DVector<f64>,
    pub c_v: DVector<f64>,
    pub z_hat: DVector<f64>,
    pub c_z: DVector<f64>,
    pub v_hat_prev: DVector<f64>,
    pub g_prev: DVector<f64>,
    pub b_v: DVector<f64>,
    pub a_v: f64,
    pub omega: DVector<f64>,
    pub v: f64,
    pub g: DVector<f64>,
    pub gamma: DVector<f64>,
    pub lambda: f64,
}

impl AmpStateWigner {
    /// All estimates zero, unit variances.
    pub fn zeros(p: usize, k: usize) -> Self {
        AmpStateWigner {
            t: 1,
            v_hat: DVector::zeros(p),
            c_v: DVector::from_element(p, 1.0),
            z_hat: DVector::zeros(k),
            c_z: DVector::from_element(k, 1.0),
            v_hat_prev: DVector::zeros(p),
            g_prev: DVector::zeros(p),
            b_v: DVector::zeros(p),
            a_v: 0.0,
            omega: DVector::zeros(p),
            v: 1.0,
            g: DVector::zeros(p),
            gamma: DVector::zeros(k),
            lambda: 0.0,
        }
    }

    /// `v_hat, z_hat ~ N(0, sigma2)` i.i.d., unit variances, zero memory.
    pub fn random(p: usize, k: usize, sigma2: f64, seed: u64) -> Self {
        let mut r = rng::rng(derive_seed(seed, rng::TAG_INIT));
        let sd = sigma2.sqrt();
        let mut s = AmpStateWigner::zeros(p, k);
        s.v_hat = DVector::from_fn(p, |_, _| sd * r.sample::<f64, _>(StandardNormal));
        s.z_hat = DVector::from_fn(k, |_, _| sd * r.sample::<f64, _>(StandardNormal));
        s
    }

    /// Start with prescribed overlaps on the Nishimori line:
    /// `v_hat = (q_v/rho_v) v* + sqrt(q_v - q_v^2/rho_v) xi`, likewise for `z`,
    /// and `c_z = rho_z - q_z` so that `V` matches. The noise is independent of `Y`.
    pub fn with_overlaps(v_star: &DVector<f64>, z_star: &DVector<f64>, q_v: f64, q_z: f64, rho_z: f64, seed: u64) -> Result<Self> {
        let p = v_star.len() as f64;
        let rho_v = v_star.norm_squared() / p;
        let rho_zz = z_star.norm_squared() / z_star.len() as f64;
        if !(0.0..=rho_v).contains(&q_v) || !(0.0..=rho_zz).contains(&q_z) || !(q_z < rho_z) {
            return Err(Error::invalid(format!("overlaps ({q_v}, {q_z}) outside [0, rho)")));
        }
        let mut r = rng::rng(derive_seed(seed, rng::TAG_START));
        let mut s = AmpStateWigner::zeros(v_star.len(), z_star.len());
        s.v_hat = planted_start(v_star, q_v, rho_v, &mut r);
        s.z_hat = planted_start(z_star, q_z, rho_zz, &mut r);
        s.c_z.fill(rho_z - q_z);
        Ok(s)
    }
}

fn planted_start(truth: &DVector<f64>, q: f64, rho: f64, r: &mut rng::Rng) -> DVector<f64> {
    let a = q / rho;
    let b = (q - q * q / rho).max(0.0).sqrt();
    DVector::from_fn(truth.len(), |i, _| a * truth[i] + b * r.sample::<f64, _>(StandardNormal))
}

#[derive(Clone, Debug)]
pub struct AmpStateWishart {
    pub t: usize,
    pub u_hat: DVector<f64>,
    pub c_u: DVector<f64>,
    pub v_hat: DVector<f64>,
    pub c_v: DVector<f64>,
    pub z_hat: DVector<f64>,
    pub c_z: DVector<f64>,
    pub u_hat_prev: DVector<f64>,
    pub v_hat_prev: DVector<f64>,
    pub g_prev: DVector<f64>,
    pub b_u: DVector<f64>,
    pub a_u: f64,
    pub b_v: DVector<f64>,
    pub a_v: f64,
    pub omega: DVector<f64>,
    pub v: f64,
    pub g: DVector<f64>,
    pub gamma: DVector<f64>,
    pub lambda: f64,
}

impl AmpStateWishart {
    pub fn zeros(n: usize, p: usize, k: usize) -> Self {
        AmpStateWishart {
            t: 1,
            u_hat: DVector::zeros(n),
            c_u: DVector::from_element(n, 1.0),
            v_hat: DVector::zeros(p),
            c_v: DVector::from_element(p, 1.0),
            z_hat: DVector::zeros(k),
            c_z: DVector::from_element(k, 1.0),
            u_hat_prev: DVector::zeros(n),
            v_hat_prev: DVector::zeros(p),
            g_prev: DVector::zeros(p),
            b_u: DVector::zeros(n),
            a_u: 0.0,
            b_v: DVector::zeros(p),
            a_v: 0.0,
            omega: DVector::zeros(p),
            v: 1.0,
            g: DVector::zeros(p),
            gamma: DVector::zeros(k),
            lambda: 0.0,
        }
    }

    pub fn random(n: usize, p: usize, k: usize, sigma2: f64, seed: u64) -> Self {
        let mut r = rng::rng(derive_seed(seed, rng::TAG_INIT));
        let sd = sigma2.sqrt();
        let mut s = AmpStateWishart::zeros(n, p, k);
        s.u_hat = DVector::from_fn(n, |_, _| sd * r.sample::<f64, _>(StandardNormal));
        s.v_hat = DVector::from_fn(p, |_, _| sd * r.sample::<f64, _>(StandardNormal));
        s.z_hat = DVector::from_fn(k, |_, _| sd * r.sample::<f64, _>(StandardNormal));
        s
    }

    /// Rectangular analogue of [`AmpStateWigner::with_overlaps`]; `q_u` uses
    /// the empirical second moment of `u*`.
    pub fn with_overlaps(
        u_star: &DVector<f64>,
        v_star: &DVector<f64>,
        z_star: &DVector<f64>,
        (q_u, q_v, q_z): (f64, f64, f64),
        rho_z: f64,
        seed: u64,
    ) -> Result<Self> {
        let base = AmpStateWigner::with_overlaps(v_star, z_star, q_v, q_z, rho_z, seed)?;
        let rho_u = u_star.norm_squared() / u_star.len() as f64;
        if !(0.0..=rho_u).contains(&q_u) {
            return Err(Error::invalid(format!("q_u = {q_u} outside [0, {rho_u}]")));
        }
        let mut r = rng::rng(derive_seed(seed ^ 0x5555, rng::TAG_START));
        let mut s = AmpStateWishart::zeros(u_star.len(), v_star.len(), z_star.len());
        s.u_hat = planted_start(u_star, q_u, rho_u, &mut r);
        s.v_hat = base.v_hat;
        s.z_hat = base.z_hat;
        s.c_z = base.c_z;
        Ok(s)
    }
}

#[derive(Clone, Debug)]
pub struct AmpResult {
    pub v_hat: DVector<f64>,
    pub z_hat: DVector<f64>,
    pub u_hat: Option<DVector<f64>>,
    /// `v_hat^t . v* / p` for t = 1, 2, ...
    pub overlap_trace: Vec<f64>,
    /// `z_hat^t . z* / k`; NaN when the latent truth is unknown
    pub q_z_trace: Vec<f64>,
    /// `u_hat^t . u* / n` (rectangular model only)
    pub q_u_trace: Vec<f64>,
    pub mse_trace: Vec<f64>,
    /// after sign alignment
    pub mse_v: f64,
    pub mse_u: Option<f64>,
    pub sign: f64,
    pub iters: usize,
    pub converged: bool,
    /// iteration at which a non-finite message appeared
    pub diverged_at: Option<usize>,
    /// iterations at which V hit its floor
    pub clamp_events: usize,
}

impl AmpResult {
    pub fn final_overlap(&self) -> f64 {
        *self.overlap_trace.last().expect("trace always holds the start")
    }

    /// CSV `t,q_v,q_z,mse_v`, one row per recorded iterate.
    pub fn write_trace_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["t", "q_v", "q_z", "mse_v"])?;
        for (i, ((q, qz), m)) in self.overlap_trace.iter().zip(&self.q_z_trace).zip(&self.mse_trace).enumerate() {
            w.write_record([(i + 1).to_string(), q.to_string(), qz.to_string(), m.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// `min_s |s v_hat - v*|^2 / p` over `s = +-1`, and the minimizing sign (+1 on ties).
pub fn align_and_mse(v_hat: &DVector<f64>, v_star: &DVector<f64>) -> (f64, f64) {
    let p = v_star.len() as f64;
    let s = if v_hat.dot(v_star) < 0.0 { -1.0 } else { 1.0 };
    let mse = v_hat.iter().zip(v_star.iter()).map(|(a, b)| (s * a - b).powi(2)).sum::<f64>() / p;
    (mse, s)
}

fn check_delta(delta: f64) -> Result<()> {
    if !(delta > 0.0) || !delta.is_finite() {
        return Err(Error::Domain(format!("delta must be positive and finite (A = |v|^2/(delta p)), got {delta}")));
    }
    Ok(())
}

fn check_finite(name: &str, x: &DVector<f64>, t: usize) -> Result<()> {
    if x.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::numerical(format!("non-finite {name} at iteration {t}")))
    }
}

fn check_scalar(name: &str, x: f64, t: usize) -> Result<()> {
    if x.is_finite() {
        Ok(())
    } else {
        Err(Error::numerical(format!("non-finite {name} at iteration {t}")))
    }
}

/// Output of the generative layer shared by both models.
struct GenerativeUpdate {
    v_hat: DVector<f64>,
    c_v: DVector<f64>,
    z_hat: DVector<f64>,
    c_z: DVector<f64>,
    omega: DVector<f64>,
    v: f64,
    g: DVector<f64>,
    gamma: DVector<f64>,
    lambda: f64,
    clamped: bool,
}

/// Generative layer plus marginal updates of `v` and `z` given the spiked-layer
/// fields `(b_v, a_v)`.
#[allow(clippy::too_many_arguments)]
fn generative_layer(
    gm: &GenerativeModel,
    b_v: &DVector<f64>,
    a_v: f64,
    z_hat: &DVector<f64>,
    c_z: &DVector<f64>,
    g_prev: &DVector<f64>,
    v_hat_old: &DVector<f64>,
    damping: f64,
    t: usize,
) -> Result<GenerativeUpdate> {
    let (p, k) = (gm.p, gm.k);
    let sqrt_k = (k as f64).sqrt();
    let floor = MIN_VAR_FRACTION * gm.latent.rho_z;
    let v_raw = c_z.sum() / k as f64;
    let clamped = v_raw < floor;
    let v = v_raw.max(floor);
    check_scalar("V", v, t)?;

    let mut omega = &gm.w * z_hat;
    omega /= sqrt_k;
    omega.axpy(-v, g_prev, 1.0);
    check_finite("omega", &omega, t)?;

    let mut g = DVector::zeros(p);
    let mut v_new = DVector::zeros(p);
    let mut c_v = DVector::zeros(p);
    for i in 0..p {
        let post = OmegaContext::new(gm.act, omega[i], v).posterior(b_v[i], a_v);
        g[i] = post.f_out;
        v_new[i] = post.f_v;
        c_v[i] = post.df_v;
    }
    check_finite("g", &g, t)?;
    check_finite("v_hat", &v_new, t)?;
    check_finite("c_v", &c_v, t)?;

    let lambda = g.norm_squared() / k as f64;
    let mut gamma = gm.w.tr_mul(&g);
    gamma /= sqrt_k;
    gamma.axpy(lambda, z_hat, 1.0);
    check_finite("gamma", &gamma, t)?;

    let mut z_new = DVector::zeros(k);
    let mut c_z_new = DVector::zeros(k);
    for l in 0..k {
        let post = latent_posterior_unchecked(&gm.latent, gamma[l], lambda);
        z_new[l] = post.f;
        c_z_new[l] = post.df;
    }
    check_finite("z_hat", &z_new, t)?;

    if damping > 0.0 {
        v_new = v_new * (1.0 - damping) + v_hat_old * damping;
        z_new = z_new * (1.0 - damping) + z_hat * damping;
    }
    Ok(GenerativeUpdate { v_hat: v_new, c_v, z_hat: z_new, c_z: c_z_new, omega, v, g, gamma, lambda, clamped })
}

fn check_wigner(instance: &SpikedInstance, gm: &GenerativeModel) -> Result<()> {
    if instance.model != ObservationModel::Wigner {
        return Err(Error::invalid("square-model AMP needs a Wigner instance"));
    }
    let (r, c) = instance.y.shape();
    if r != c || c != gm.p {
        return Err(Error::DimensionMismatch(format!("Y is {r}x{c} but the generative model has p = {}", gm.p)));
    }
    check_delta(instance.delta)
}

/// One sweep of the square-model iteration: spiked layer, generative layer,
/// marginal updates.
pub fn amp_wigner_step(
    state: &AmpStateWigner,
    instance: &SpikedInstance,
    gm: &GenerativeModel,
    cfg: &AmpConfig,
) -> Result<AmpStateWigner> {
    check_wigner(instance, gm)?;
    Ok(wigner_step(state, instance, gm, cfg)?.0)
}

fn wigner_step(
    s: &AmpStateWigner,
    instance: &SpikedInstance,
    gm: &GenerativeModel,
    cfg: &AmpConfig,
) -> Result<(AmpStateWigner, bool)> {
    let p = gm.p as f64;
    let delta = instance.delta;
    let t = s.t;

    let mut b_v = DVector::zeros(gm.p);
    b_v.gemv(1.0 / (delta * p.sqrt()), &instance.y, &s.v_hat, 0.0);
    if cfg.onsager {
        b_v.axpy(-s.c_v.sum() / (delta * p), &s.v_hat_prev, 1.0);
    }
    let a_v = s.v_hat.norm_squared() / (delta * p);
    check_finite("B_v", &b_v, t)?;
    check_scalar("A_v", a_v, t)?;

    let up = generative_layer(gm, &b_v, a_v, &s.z_hat, &s.c_z, &s.g_prev, &s.v_hat, cfg.damping, t)?;
    let next = AmpStateWigner {
        t: t + 1,
        v_hat: up.v_hat,
        c_v: up.c_v,
        z_hat: up.z_hat,
        c_z: up.c_z,
        v_hat_prev: s.v_hat.clone(),
        g_prev: up.g.clone(),
        b_v,
        a_v,
        omega: up.omega,
        v: up.v,
        g: up.g,
        gamma: up.gamma,
        lambda: up.lambda,
    };
    Ok((next, up.clamped))
}

/// Rectangular-model sweep: both spiked-layer fields from the current
/// `(u_hat, v_hat)`, then the `u` marginal and the generative layer.
pub fn amp_wishart_step(
    state: &AmpStateWishart,
    instance: &SpikedInstance,
    gm: &GenerativeModel,
    prior_u: &LatentPrior,
    cfg: &AmpConfig,
) -> Result<AmpStateWishart> {
    check_wishart(instance, gm)?;
    Ok(wishart_step(state, instance, gm, prior_u, cfg)?.0)
}

fn check_wishart(instance: &SpikedInstance, gm: &GenerativeModel) -> Result<()> {
    if !matches!(instance.model, ObservationModel::Wishart { .. }) {
        return Err(Error::invalid("rectangular-model AMP needs a Wishart instance"));
    }
    if instance.y.ncols() != gm.p {
        return Err(Error::DimensionMismatch(format!(
            "Y has {} columns but the generative model has p = {}",
            instance.y.ncols(),
            gm.p
        )));
    }
    check_delta(instance.delta)
}

fn wishart_step(
    s: &AmpStateWishart,
    instance: &SpikedInstance,
    gm: &GenerativeModel,
    prior_u: &LatentPrior,
    cfg: &AmpConfig,
) -> Result<(AmpStateWishart, bool)> {
    let p = gm.p as f64;
    let n = instance.y.nrows();
    let delta = instance.delta;
    let t = s.t;
    let scale = 1.0 / (delta * p.sqrt());

    let mut b_u = DVector::zeros(n);
    b_u.gemv(scale, &instance.y, &s.v_hat, 0.0);
    let mut b_v = DVector::zeros(gm.p);
    b_v.gemv_tr(scale, &instance.y, &s.u_hat, 0.0);
    if cfg.onsager {
        b_u.axpy(-s.c_v.sum() / (delta * p), &s.u_hat_prev, 1.0);
        b_v.axpy(-s.c_u.sum() / (delta * p), &s.v_hat_prev, 1.0);
    }
    let a_u = s.v_hat.norm_squared() / (delta * p);
    let a_v = s.u_hat.norm_squared() / (delta * p);
    check_finite("B_u", &b_u, t)?;
    check_finite("B_v", &b_v, t)?;
    check_scalar("A_u", a_u, t)?;
    check_scalar("A_v", a_v, t)?;

    let mut u_new = DVector::zeros(n);
    let mut c_u = DVector::zeros(n);
    for mu in 0..n {
        let post = latent_posterior_unchecked(prior_u, b_u[mu], a_u);
        u_new[mu] = post.f;
        c_u[mu] = post.df;
    }
    check_finite("u_hat", &u_new, t)?;
    if cfg.damping > 0.0 {
        u_new = u_new * (1.0 - cfg.damping) + &s.u_hat * cfg.damping;
    }

    let up = generative_layer(gm, &b_v, a_v, &s.z_hat, &s.c_z, &s.g_prev, &s.v_hat, cfg.damping, t)?;
    let next = AmpStateWishart {
        t: t + 1,
        u_hat: u_new,
        c_u,
        v_hat: up.v_hat,
        c_v: up.c_v,
        z_hat: up.z_hat,
        c_z: up.c_z,
        u_hat_prev: s.u_hat.clone(),
        v_hat_prev: s.v_hat.clone(),
        g_prev: up.g.clone(),
        b_u,
        a_u,
        b_v,
        a_v,
        omega: up.omega,
        v: up.v,
        g: up.g,
        gamma: up.gamma,
        lambda: up.lambda,
    };
    Ok((next, up.clamped))
}

fn overlap(x: &DVector<f64>, truth: Option<&DVector<f64>>) -> f64 {
    match truth {
        Some(t) if t.len() == x.len() => x.dot(t) / x.len() as f64,
        _ => f64::NAN,
    }
}

fn relative_change(new: &DVector<f64>, old: &DVector<f64>) -> f64 {
    let norm = old.norm();
    let diff = (new - old).norm();
    if norm == 0.0 {
        if diff == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        diff / norm
    }
}

struct Recorder {
    q_v: Vec<f64>,
    q_z: Vec<f64>,
    q_u: Vec<f64>,
    mse: Vec<f64>,
}

impl Recorder {
    fn new() -> Self {
        Recorder { q_v: Vec::new(), q_z: Vec::new(), q_u: Vec::new(), mse: Vec::new() }
    }

    fn push(&mut self, instance: &SpikedInstance, v_hat: &DVector<f64>, z_hat: &DVector<f64>, u_hat: Option<&DVector<f64>>) {
        let truth = &instance.truth;
        self.q_v.push(overlap(v_hat, Some(&truth.v)));
        self.q_z.push(overlap(z_hat, truth.z.as_ref()));
        if let Some(u) = u_hat {
            self.q_u.push(overlap(u, truth.u.as_ref()));
        }
        self.mse.push(align_and_mse(v_hat, &truth.v).0);
    }
}

/// Runs the square-model iteration from a random start seeded by `seed`.
pub fn amp_wigner_run(instance: &SpikedInstance, gm: &GenerativeModel, cfg: &AmpConfig, seed: u64) -> Result<AmpResult> {
    cfg.validate()?;
    amp_wigner_run_from(instance, gm, cfg, AmpStateWigner::random(gm.p, gm.k, cfg.init_sigma2, seed))
}

/// Runs the square-model iteration from a given state. A non-finite message
/// ends the run with `converged = false` and `diverged_at` set.
pub fn amp_wigner_run_from(
    instance: &SpikedInstance,
    gm: &GenerativeModel,
    cfg: &AmpConfig,
    start: AmpStateWigner,
) -> Result<AmpResult> {
    cfg.validate()?;
    check_wigner(instance, gm)?;
    if start.v_hat.len() != gm.p || start.z_hat.len() != gm.k {
        return Err(Error::DimensionMismatch("start state does not match (p, k)".into()));
    }
    let mut rec = Recorder::new();
    rec.push(instance, &start.v_hat, &start.z_hat, None);
    let mut state = start;
    let (mut converged, mut diverged_at, mut clamps, mut iters) = (false, None, 0, 0);
    while iters < cfg.max_iter {
        let (next, clamped) = match wigner_step(&state, instance, gm, cfg) {
            Ok(x) => x,
            Err(Error::Numerical(_)) => {
                diverged_at = Some(state.t);
                break;
            }
            Err(e) => return Err(e),
        };
        iters += 1;
        clamps += clamped as usize;
        let change = relative_change(&next.v_hat, &state.v_hat);
        state = next;
        rec.push(instance, &state.v_hat, &state.z_hat, None);
        if change < cfg.tol {
            converged = true;
            break;
        }
    }
    let (mse_v, sign) = align_and_mse(&state.v_hat, &instance.truth.v);
    Ok(AmpResult {
        v_hat: state.v_hat,
        z_hat: state.z_hat,
        u_hat: None,
        overlap_trace: rec.q_v,
        q_z_trace: rec.q_z,
        q_u_trace: rec.q_u,
        mse_trace: rec.mse,
        mse_v,
        mse_u: None,
        sign,
        iters,
        converged,
        diverged_at,
        clamp_events: clamps,
    })
}

pub fn amp_wishart_run(
    instance: &SpikedInstance,
    gm: &GenerativeModel,
    prior_u: &LatentPrior,
    cfg: &AmpConfig,
    seed: u64,
) -> Result<AmpResult> {
    cfg.validate()?;
    let n = instance.y.nrows();
    amp_wishart_run_from(instance, gm, prior_u, cfg, AmpStateWishart::random(n, gm.p, gm.k, cfg.init_sigma2, seed))
}

/// Rectangular-model run from a given state. `(u_hat, v_hat)` are aligned by a
/// single sign chosen on `v`.
pub fn amp_wishart_run_from(
    instance: &SpikedInstance,
    gm: &GenerativeModel,
    prior_u: &LatentPrior,
    cfg: &AmpConfig,
    start: AmpStateWishart,
) -> Result<AmpResult> {
    cfg.validate()?;
    check_wishart(instance, gm)?;
    if start.u_hat.len() != instance.y.nrows() || start.v_hat.len() != gm.p || start.z_hat.len() != gm.k {
        return Err(Error::DimensionMismatch("start state does not match (n, p, k)".into()));
    }
    let mut rec = Recorder::new();
    rec.push(instance, &start.v_hat, &start.z_hat, Some(&start.u_hat));
    let mut state = start;
    let (mut converged, mut diverged_at, mut clamps, mut iters) = (false, None, 0, 0);
    while iters < cfg.max_iter {
        let (next, clamped) = match wishart_step(&state, instance, gm, prior_u, cfg) {
            Ok(x) => x,
            Err(Error::Numerical(_)) => {
                diverged_at = Some(state.t);
                break;
            }
            Err(e) => return Err(e),
        };
        iters += 1;
        clamps += clamped as usize;
        let change = relative_change(&next.v_hat, &state.v_hat);
        state = next;
        rec.push(instance, &state.v_hat, &state.z_hat, Some(&state.u_hat));
        if change < cfg.tol {
            converged = true;
            break;
        }
    }
    let (mse_v, sign) = align_and_mse(&state.v_hat, &instance.truth.v);
    let mse_u = instance.truth.u.as_ref().filter(|u| u.len() == state.u_hat.len()).map(|u| {
        state.u_hat.iter().zip(u.iter()).map(|(a, b)| (sign * a - b).powi(2)).sum::<f64>() / u.len() as f64
    });
    Ok(AmpResult {
        v_hat: state.v_hat,
        z_hat: state.z_hat,
        u_hat: Some(state.u_hat),
        overlap_trace: rec.q_v,
        q_z_trace: rec.q_z,
        q_u_trace: rec.q_u,
        mse_trace: rec.mse,
        mse_v,
        mse_u,
        sign,
        iters,
        converged,
        diverged_at,
        clamp_events: clamps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_change_handles_zero() {
        let z = DVector::<f64>::zeros(3);
        assert_eq!(relative_change(&z, &z), 0.0);
        assert!(relative_change(&DVector::from_element(3, 1.0), &z).is_infinite());
    }

    #[test]
    fn tie_aligns_positive() {
        let v = DVector::from_vec(vec![1.0, 0.0]);
        let w = DVector::from_vec(vec![0.0, 1.0]);
        assert_eq!(align_and_mse(&w, &v).1, 1.0);
    }
}
