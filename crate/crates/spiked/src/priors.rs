//! Generative spike model `v = act(W z / sqrt(k))` and the spiked Wigner /
//! Wishart observation models.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::error::{ensure_finite, Error, Result};
use crate::quadrature::GaussRule;
use crate::rng::{self, derive_seed, Rng};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum LatentKind {
    Gauss,
    Rademacher,
}

/// Separable prior on the latent vector (also used for the left factor `u`
/// of the Wishart model).
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LatentPrior {
    pub kind: LatentKind,
    /// second moment E z^2
    pub rho_z: f64,
    pub third_moment: f64,
}

impl LatentPrior {
    /// Centered Gaussian with variance `rho_z`.
    pub fn gauss(rho_z: f64) -> Result<Self> {
        ensure_finite("rho_z", rho_z)?;
        if rho_z <= 0.0 {
            return Err(Error::invalid(format!("rho_z must be positive, got {rho_z}")));
        }
        Ok(LatentPrior { kind: LatentKind::Gauss, rho_z, third_moment: 0.0 })
    }

    pub fn standard_gauss() -> Self {
        LatentPrior { kind: LatentKind::Gauss, rho_z: 1.0, third_moment: 0.0 }
    }

    /// Uniform on {-1, +1}.
    pub fn rademacher() -> Self {
        LatentPrior { kind: LatentKind::Rademacher, rho_z: 1.0, third_moment: 0.0 }
    }

    /// E z^2 computed from the kind, independently of the stored field.
    pub fn second_moment(&self) -> f64 {
        match self.kind {
            LatentKind::Gauss => self.rho_z,
            LatentKind::Rademacher => 1.0,
        }
    }

    pub fn mean(&self) -> f64 {
        0.0
    }

    pub fn draw(&self, rng: &mut Rng) -> f64 {
        match self.kind {
            LatentKind::Gauss => self.rho_z.sqrt() * rng.sample::<f64, _>(StandardNormal),
            LatentKind::Rademacher => {
                if rng.random::<bool>() {
                    1.0
                } else {
                    -1.0
                }
            }
        }
    }

    pub fn sample(&self, n: usize, rng: &mut Rng) -> DVector<f64> {
        DVector::from_fn(n, |_, _| self.draw(rng))
    }
}

impl FromStr for LatentPrior {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "gauss" | "gaussian" | "normal" => Ok(LatentPrior::standard_gauss()),
            "rademacher" | "binary" | "pm1" => Ok(LatentPrior::rademacher()),
            other => Err(Error::invalid(format!("unknown prior '{other}' (expected gauss|rademacher)"))),
        }
    }
}

impl fmt::Display for LatentPrior {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            LatentKind::Gauss => write!(f, "gauss({})", self.rho_z),
            LatentKind::Rademacher => write!(f, "rademacher"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum ActivationKind {
    Linear,
    Sign,
    Relu,
}

/// Deterministic output channel `v = act(x)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct Activation {
    pub kind: ActivationKind,
}

impl Activation {
    pub const LINEAR: Activation = Activation { kind: ActivationKind::Linear };
    pub const SIGN: Activation = Activation { kind: ActivationKind::Sign };
    pub const RELU: Activation = Activation { kind: ActivationKind::Relu };

    pub fn apply(&self, x: f64) -> f64 {
        match self.kind {
            ActivationKind::Linear => x,
            // sign(0) = +1 so that outputs are always +-1
            ActivationKind::Sign => {
                if x >= 0.0 {
                    1.0
                } else {
                    -1.0
                }
            }
            ActivationKind::Relu => x.max(0.0),
        }
    }

    /// Whether the output has zero mean under a centered Gaussian input.
    pub fn zero_mean_output(&self) -> bool {
        !matches!(self.kind, ActivationKind::Relu)
    }

    pub fn name(&self) -> &'static str {
        match self.kind {
            ActivationKind::Linear => "linear",
            ActivationKind::Sign => "sign",
            ActivationKind::Relu => "relu",
        }
    }
}

impl FromStr for Activation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "linear" | "identity" => Ok(Activation::LINEAR),
            "sign" => Ok(Activation::SIGN),
            "relu" => Ok(Activation::RELU),
            other => Err(Error::invalid(format!(
                "unknown activation '{other}' (expected linear|sign|relu)"
            ))),
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// E[act(x)^2] for x ~ N(0, rho_z).
pub fn rho_v(act: Activation, latent: &LatentPrior) -> f64 {
    let rho_z = latent.second_moment();
    match act.kind {
        ActivationKind::Linear => rho_z,
        ActivationKind::Sign => 1.0,
        ActivationKind::Relu => {
            let s = rho_z.sqrt();
            GaussRule::hermite(64).expect(|xi| act.apply(s * xi).powi(2))
        }
    }
}

/// Single-layer generative model.
#[derive(Clone, Debug)]
pub struct GenerativeModel {
    pub p: usize,
    pub k: usize,
    pub alpha: f64,
    pub w: DMatrix<f64>,
    pub latent: LatentPrior,
    pub act: Activation,
}

impl GenerativeModel {
    pub fn new(w: DMatrix<f64>, latent: LatentPrior, act: Activation) -> Result<Self> {
        let (p, k) = w.shape();
        if p == 0 || k == 0 {
            return Err(Error::invalid("weight matrix must be non-empty"));
        }
        Ok(GenerativeModel { p, k, alpha: p as f64 / k as f64, w, latent, act })
    }

    /// Draws fresh N(0,1) weights.
    pub fn sample(p: usize, k: usize, latent: LatentPrior, act: Activation, seed: u64) -> Result<Self> {
        let w = sample_weights(p, k, seed)?;
        GenerativeModel::new(w, latent, act)
    }

    pub fn rho_v(&self) -> f64 {
        rho_v(self.act, &self.latent)
    }
}

/// p x k matrix with i.i.d. N(0,1) entries.
pub fn sample_weights(p: usize, k: usize, seed: u64) -> Result<DMatrix<f64>> {
    if p == 0 || k == 0 {
        return Err(Error::invalid(format!("weight dimensions must be positive, got {p}x{k}")));
    }
    let mut r = rng::rng(derive_seed(seed, rng::TAG_WEIGHTS));
    Ok(DMatrix::from_fn(p, k, |_, _| r.sample(StandardNormal)))
}

/// Draws `z ~ P_z` and returns `(z, act(W z / sqrt(k)))`.
pub fn generate_spike(gm: &GenerativeModel, seed: u64) -> (DVector<f64>, DVector<f64>) {
    let mut r = rng::rng(derive_seed(seed, rng::TAG_LATENT));
    let z = gm.latent.sample(gm.k, &mut r);
    let v = preactivation(gm, &z).map(|x| gm.act.apply(x));
    (z, v)
}

/// `W z / sqrt(k)`.
pub fn preactivation(gm: &GenerativeModel, z: &DVector<f64>) -> DVector<f64> {
    (&gm.w * z) / (gm.k as f64).sqrt()
}

/// i.i.d. draws from a separable prior.
pub fn sample_prior_vector(prior: &LatentPrior, n: usize, seed: u64) -> DVector<f64> {
    let mut r = rng::rng(derive_seed(seed, rng::TAG_PRIOR_U));
    prior.sample(n, &mut r)
}

/// `n` independent spikes from `gm`, one per row (fresh latent draws, shared weights).
pub fn sample_spikes(gm: &GenerativeModel, n: usize, seed: u64) -> DMatrix<f64> {
    let mut r = rng::rng(derive_seed(seed, rng::TAG_SAMPLES));
    let mut out = DMatrix::<f64>::zeros(n, gm.p);
    for i in 0..n {
        let z = gm.latent.sample(gm.k, &mut r);
        let v = preactivation(gm, &z);
        for j in 0..gm.p {
            out[(i, j)] = gm.act.apply(v[j]);
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ObservationModel {
    Wigner,
    /// `beta = n / p`
    Wishart { beta: f64 },
}

#[derive(Clone, Debug)]
pub struct Truth {
    pub v: DVector<f64>,
    pub z: Option<DVector<f64>>,
    pub u: Option<DVector<f64>>,
}

#[derive(Clone, Debug)]
pub struct SpikedInstance {
    pub model: ObservationModel,
    /// p x p symmetric (Wigner) or n x p (Wishart)
    pub y: DMatrix<f64>,
    pub delta: f64,
    pub truth: Truth,
}

impl SpikedInstance {
    pub fn p(&self) -> usize {
        self.y.ncols()
    }

    pub fn with_latent(mut self, z: DVector<f64>) -> Self {
        self.truth.z = Some(z);
        self
    }
}

fn check_delta(delta: f64) -> Result<()> {
    ensure_finite("delta", delta)?;
    if delta <= 0.0 {
        return Err(Error::invalid(format!("delta must be positive, got {delta}")));
    }
    Ok(())
}

/// `Y = v v^T / sqrt(p) + sqrt(delta) xi` with GOE noise: off-diagonal
/// variance 1, diagonal variance 2.
pub fn sample_wigner(v: &DVector<f64>, delta: f64, seed: u64) -> Result<SpikedInstance> {
    check_delta(delta)?;
    let p = v.len();
    if p == 0 {
        return Err(Error::invalid("spike must be non-empty"));
    }
    let mut r = rng::rng(derive_seed(seed, rng::TAG_NOISE));
    let sd = delta.sqrt();
    let inv_sqrt_p = 1.0 / (p as f64).sqrt();
    let mut y = DMatrix::<f64>::zeros(p, p);
    for j in 0..p {
        for i in 0..=j {
            let xi: f64 = r.sample(StandardNormal);
            let noise = if i == j { std::f64::consts::SQRT_2 * xi } else { xi };
            y[(i, j)] = v[i] * v[j] * inv_sqrt_p + sd * noise;
        }
    }
    for j in 0..p {
        for i in (j + 1)..p {
            y[(i, j)] = y[(j, i)];
        }
    }
    Ok(SpikedInstance {
        model: ObservationModel::Wigner,
        y,
        delta,
        truth: Truth { v: v.clone(), z: None, u: None },
    })
}

/// `Y = u v^T / sqrt(p) + sqrt(delta) xi`, `xi` n x p with i.i.d. N(0,1) entries.
pub fn sample_wishart(u: &DVector<f64>, v: &DVector<f64>, delta: f64, seed: u64) -> Result<SpikedInstance> {
    check_delta(delta)?;
    let (n, p) = (u.len(), v.len());
    if n == 0 || p == 0 {
        return Err(Error::invalid("spike vectors must be non-empty"));
    }
    let mut r = rng::rng(derive_seed(seed, rng::TAG_NOISE));
    let sd = delta.sqrt();
    let inv_sqrt_p = 1.0 / (p as f64).sqrt();
    let y = DMatrix::from_fn(n, p, |i, j| {
        u[i] * v[j] * inv_sqrt_p + sd * r.sample::<f64, _>(StandardNormal)
    });
    Ok(SpikedInstance {
        model: ObservationModel::Wishart { beta: n as f64 / p as f64 },
        y,
        delta,
        truth: Truth { v: v.clone(), z: None, u: Some(u.clone()) },
    })
}

/// Full pipeline: spike from `gm`, then a Wigner observation. The latent
/// vector is kept in the truth record.
pub fn spiked_wigner(gm: &GenerativeModel, delta: f64, seed: u64) -> Result<SpikedInstance> {
    let (z, v) = generate_spike(gm, seed);
    Ok(sample_wigner(&v, delta, seed)?.with_latent(z))
}

/// Full pipeline for the Wishart model with `n = round(beta p)` rows.
pub fn spiked_wishart(
    gm: &GenerativeModel,
    prior_u: &LatentPrior,
    beta: f64,
    delta: f64,
    seed: u64,
) -> Result<SpikedInstance> {
    ensure_finite("beta", beta)?;
    if beta <= 0.0 {
        return Err(Error::invalid(format!("beta must be positive, got {beta}")));
    }
    let n = ((beta * gm.p as f64).round() as usize).max(1);
    let (z, v) = generate_spike(gm, seed);
    let u = sample_prior_vector(prior_u, n, seed);
    Ok(sample_wishart(&u, &v, delta, seed)?.with_latent(z))
}
