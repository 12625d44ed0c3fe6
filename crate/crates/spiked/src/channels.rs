//! Scalar denoisers for the output channel `v = act(x)`, `x ~ N(omega, V)`,
//! and for the separable latent prior, plus the free-entropy integrals
//! `psi_z` / `psi_out` and their gradients.

use std::f64::consts::{PI, SQRT_2};

use crate::error::{Error, Result};
use crate::priors::{Activation, ActivationKind, LatentKind, LatentPrior};
use crate::quadrature::GaussRule;

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_7;
/// ln(1e-300)
const LOG_Z_FLOOR: f64 = -690.775_527_898_213_7;

/// ln Phi(t) for the standard normal cdf, accurate in both tails.
pub fn log_ndtr(t: f64) -> f64 {
    if t > 6.0 {
        (-0.5 * libm::erfc(t / SQRT_2)).ln_1p()
    } else if t > -30.0 {
        (0.5 * libm::erfc(-t / SQRT_2)).ln()
    } else {
        let u2 = t * t;
        let series = 1.0 - 1.0 / u2 + 3.0 / (u2 * u2) - 15.0 / (u2 * u2 * u2) + 105.0 / (u2 * u2 * u2 * u2);
        -0.5 * u2 - (-t).ln() - LN_SQRT_2PI + series.ln()
    }
}

/// phi(t) / Phi(t).
pub fn inv_mills(t: f64) -> f64 {
    if t > -30.0 {
        (-0.5 * t * t - LN_SQRT_2PI - log_ndtr(t)).exp()
    } else {
        let u2 = t * t;
        let series = 1.0 - 1.0 / u2 + 3.0 / (u2 * u2) - 15.0 / (u2 * u2 * u2) + 105.0 / (u2 * u2 * u2 * u2);
        -t / series
    }
}

fn sigmoid(d: f64) -> f64 {
    if d >= 0.0 {
        1.0 / (1.0 + (-d).exp())
    } else {
        let e = d.exp();
        e / (1.0 + e)
    }
}

fn log_add_exp(a: f64, b: f64) -> f64 {
    let m = a.max(b);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// Arguments of the output-channel partition function.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DenoiserParams {
    pub b: f64,
    pub a: f64,
    pub omega: f64,
    pub v: f64,
}

impl DenoiserParams {
    pub fn new(b: f64, a: f64, omega: f64, v: f64) -> Self {
        DenoiserParams { b, a, omega, v }
    }
}

/// Arguments of the latent partition function.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LatentParams {
    pub gamma: f64,
    pub lambda: f64,
}

impl LatentParams {
    pub fn new(gamma: f64, lambda: f64) -> Self {
        LatentParams { gamma, lambda }
    }
}

/// ln Z_out together with the four update functions.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OutPosterior {
    pub log_z: f64,
    pub f_v: f64,
    pub df_v: f64,
    pub f_out: f64,
    pub df_out: f64,
}

/// ln Z_z with the posterior mean and variance.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LatentPosterior {
    pub log_z: f64,
    pub f: f64,
    pub df: f64,
}

/// Everything that depends on `(omega, V)` only; reused across many `(B, A)`.
#[derive(Clone, Copy, Debug)]
pub struct OmegaContext {
    kind: ActivationKind,
    omega: f64,
    var: f64,
    sd: f64,
    t: f64,
    log_cdf_pos: f64,
    log_cdf_neg: f64,
    mills_pos: f64,
    mills_neg: f64,
}

impl OmegaContext {
    pub fn new(act: Activation, omega: f64, var: f64) -> Self {
        let sd = var.sqrt();
        let t = omega / sd;
        let (log_cdf_pos, log_cdf_neg, mills_pos, mills_neg) = match act.kind {
            ActivationKind::Linear => (0.0, 0.0, 0.0, 0.0),
            ActivationKind::Sign => (log_ndtr(t), log_ndtr(-t), inv_mills(t), inv_mills(-t)),
            ActivationKind::Relu => (log_ndtr(t), log_ndtr(-t), inv_mills(t), inv_mills(-t)),
        };
        OmegaContext { kind: act.kind, omega, var, sd, t, log_cdf_pos, log_cdf_neg, mills_pos, mills_neg }
    }

    pub fn posterior(&self, b: f64, a: f64) -> OutPosterior {
        match self.kind {
            ActivationKind::Linear => self.linear(b, a),
            ActivationKind::Sign => self.sign(b, a),
            ActivationKind::Relu => self.relu(b, a),
        }
    }

    /// Gaussian mixture approximating the planted law of `B = a v0 + sqrt(a) xi`
    /// given omega, one component per branch of the channel: `(ln weight, mean, sd)`.
    /// Exact for linear and sign.
    fn b_components(&self, a: f64) -> ([(f64, f64, f64); 2], usize) {
        let sa = a.sqrt();
        match self.kind {
            ActivationKind::Linear => ([(0.0, a * self.omega, (a + a * a * self.var).sqrt()), (0.0, 0.0, 1.0)], 1),
            ActivationKind::Sign => ([(self.log_cdf_pos, a, sa), (self.log_cdf_neg, -a, sa)], 2),
            _ => {
                // v0 = 0 with probability Phi(-t); otherwise v0 = x | x > 0
                let m_pos = self.omega + self.sd * self.mills_pos;
                let var_pos = (self.var * (1.0 - self.t * self.mills_pos - self.mills_pos.powi(2))).max(0.0);
                let pos = (self.log_cdf_pos, a * m_pos, (a + a * a * var_pos).sqrt());
                let zero = (self.log_cdf_neg, 0.0, sa);
                if self.log_cdf_neg < -700.0 {
                    ([pos, zero], 1)
                } else if self.log_cdf_pos < -700.0 {
                    ([zero, pos], 1)
                } else {
                    ([zero, pos], 2)
                }
            }
        }
    }

    fn linear(&self, b: f64, a: f64) -> OutPosterior {
        let (w, v) = (self.omega, self.var);
        let d = 1.0 + a * v;
        OutPosterior {
            log_z: -0.5 * d.ln() + (2.0 * w * b + b * b * v - a * w * w) / (2.0 * d),
            f_v: (w + b * v) / d,
            df_v: v / d,
            f_out: (b - a * w) / d,
            df_out: -a / d,
        }
    }

    fn sign(&self, b: f64, a: f64) -> OutPosterior {
        let lp = b + self.log_cdf_pos;
        let lm = -b + self.log_cdf_neg;
        let d = lp - lm;
        let wp = sigmoid(d);
        let wm = sigmoid(-d);
        let f_out = (wp * self.mills_pos - wm * self.mills_neg) / self.sd;
        OutPosterior {
            log_z: -0.5 * a + log_add_exp(lp, lm),
            f_v: wp - wm,
            df_v: 4.0 * wp * wm,
            f_out,
            df_out: -(self.t / self.sd) * f_out - f_out * f_out,
        }
    }

    fn relu(&self, b: f64, a: f64) -> OutPosterior {
        let (w, v) = (self.omega, self.var);
        let d = 1.0 + a * v;
        let m = (w + b * v) / d;
        let v1 = v / d;
        let sd1 = v1.sqrt();
        let s = m / sd1;
        let log_lin = -0.5 * d.ln() + (2.0 * w * b + b * b * v - a * w * w) / (2.0 * d);
        let log_cdf_s = log_ndtr(s);
        let l1 = log_lin + log_cdf_s;
        let l0 = self.log_cdf_neg;
        // branch weights and ln(e^l0 + e^l1) from a single exponential
        let gap = l1 - l0;
        let e = (-gap.abs()).exp();
        let (w1, w0) = if gap >= 0.0 { (1.0 / (1.0 + e), e / (1.0 + e)) } else { (e / (1.0 + e), 1.0 / (1.0 + e)) };
        let log_z = l0.max(l1) + e.ln_1p();
        // x > 0 branch: N(m, v1) truncated to (0, inf)
        let rs = if s > -30.0 { (-0.5 * s * s - LN_SQRT_2PI - log_cdf_s).exp() } else { inv_mills(s) };
        let e1 = m + sd1 * rs;
        let var1 = (v1 * (1.0 - s * rs - rs * rs)).max(0.0);
        // x <= 0 branch: N(omega, V) truncated to (-inf, 0], centred at omega
        let rm = self.mills_neg;
        let e0c = -self.sd * rm;
        let var0 = (v * (1.0 + self.t * rm - rm * rm)).max(0.0);
        let e1c = e1 - w;
        let f_v = w1 * e1;
        let df_v = w1 * var1 + w0 * w1 * e1 * e1;
        let mean_c = w0 * e0c + w1 * e1c;
        let var_x = w0 * var0 + w1 * var1 + w0 * w1 * (e1c - e0c).powi(2);
        OutPosterior { log_z, f_v, df_v, f_out: mean_c / v, df_out: (var_x - v) / (v * v) }
    }
}

fn check_dp(act: Activation, dp: &DenoiserParams) -> Result<()> {
    for (name, x) in [("B", dp.b), ("A", dp.a), ("omega", dp.omega), ("V", dp.v)] {
        if !x.is_finite() {
            return Err(Error::invalid(format!("{name} must be finite, got {x}")));
        }
    }
    if dp.v <= 0.0 {
        return Err(Error::invalid(format!("V must be positive, got {}", dp.v)));
    }
    if act.kind != ActivationKind::Sign && 1.0 + dp.a * dp.v <= 0.0 {
        return Err(Error::invalid(format!("1 + A V must be positive (A={}, V={})", dp.a, dp.v)));
    }
    Ok(())
}

/// All output-channel quantities at one point. Fails if Z_out < 1e-300.
pub fn out_posterior(act: Activation, dp: &DenoiserParams) -> Result<OutPosterior> {
    check_dp(act, dp)?;
    let post = OmegaContext::new(act, dp.omega, dp.v).posterior(dp.b, dp.a);
    if !(post.log_z >= LOG_Z_FLOOR) {
        return Err(Error::numerical(format!(
            "Z_out underflow (ln Z = {}) at B={}, A={}, omega={}, V={}",
            post.log_z, dp.b, dp.a, dp.omega, dp.v
        )));
    }
    let vals = [post.f_v, post.df_v, post.f_out, post.df_out];
    if vals.iter().any(|x| !x.is_finite()) {
        return Err(Error::numerical(format!("non-finite denoiser output at {dp:?}")));
    }
    Ok(post)
}

pub fn log_z_out(act: Activation, dp: &DenoiserParams) -> Result<f64> {
    out_posterior(act, dp).map(|p| p.log_z)
}

pub fn z_out(act: Activation, dp: &DenoiserParams) -> Result<f64> {
    out_posterior(act, dp).map(|p| p.log_z.exp())
}

pub fn f_v(act: Activation, dp: &DenoiserParams) -> Result<f64> {
    out_posterior(act, dp).map(|p| p.f_v)
}

pub fn df_v(act: Activation, dp: &DenoiserParams) -> Result<f64> {
    out_posterior(act, dp).map(|p| p.df_v)
}

pub fn f_out(act: Activation, dp: &DenoiserParams) -> Result<f64> {
    out_posterior(act, dp).map(|p| p.f_out)
}

pub fn df_out(act: Activation, dp: &DenoiserParams) -> Result<f64> {
    out_posterior(act, dp).map(|p| p.df_out)
}

/// Latent posterior without argument checks (hot path).
#[inline]
pub fn latent_posterior_unchecked(prior: &LatentPrior, gamma: f64, lambda: f64) -> LatentPosterior {
    match prior.kind {
        LatentKind::Gauss => {
            let r = prior.rho_z;
            let d = 1.0 + lambda * r;
            LatentPosterior {
                log_z: -0.5 * d.ln() + gamma * gamma * r / (2.0 * d),
                f: gamma * r / d,
                df: r / d,
            }
        }
        LatentKind::Rademacher => {
            let th = gamma.tanh();
            let ag = gamma.abs();
            LatentPosterior {
                log_z: -0.5 * lambda + ag + (-2.0 * ag).exp().ln_1p() - std::f64::consts::LN_2,
                f: th,
                df: 1.0 - th * th,
            }
        }
    }
}

pub fn latent_posterior(prior: &LatentPrior, lp: &LatentParams) -> Result<LatentPosterior> {
    if !lp.gamma.is_finite() || !lp.lambda.is_finite() {
        return Err(Error::invalid(format!("latent parameters must be finite: {lp:?}")));
    }
    if prior.kind == LatentKind::Gauss && 1.0 + lp.lambda * prior.rho_z <= 0.0 {
        return Err(Error::invalid(format!("1 + Lambda rho_z must be positive: {lp:?}")));
    }
    Ok(latent_posterior_unchecked(prior, lp.gamma, lp.lambda))
}

pub fn z_z(prior: &LatentPrior, lp: &LatentParams) -> Result<f64> {
    latent_posterior(prior, lp).map(|p| p.log_z.exp())
}

pub fn f_z(prior: &LatentPrior, lp: &LatentParams) -> Result<f64> {
    latent_posterior(prior, lp).map(|p| p.f)
}

pub fn df_z(prior: &LatentPrior, lp: &LatentParams) -> Result<f64> {
    latent_posterior(prior, lp).map(|p| p.df)
}

/// Denoiser for the left factor of the Wishart model; same contract as [`f_z`].
pub fn f_u(prior_u: &LatentPrior, b: f64, a: f64) -> Result<f64> {
    f_z(prior_u, &LatentParams::new(b, a))
}

pub fn df_u(prior_u: &LatentPrior, b: f64, a: f64) -> Result<f64> {
    df_z(prior_u, &LatentParams::new(b, a))
}

/// `(psi, 2 d psi/dx)` for a separable prior at `x >= 0`, i.e. the free
/// entropy of the scalar channel `gamma = x z0 + sqrt(x) xi` and its overlap
/// `E[Z f^2]`.
pub fn psi_prior_with_overlap(prior: &LatentPrior, x: f64, rule: &GaussRule) -> Result<(f64, f64)> {
    if !(x >= 0.0) || !x.is_finite() {
        return Err(Error::invalid(format!("psi argument must be finite and >= 0, got {x}")));
    }
    Ok(match prior.kind {
        LatentKind::Gauss => {
            let r = prior.rho_z;
            (0.5 * x * r - 0.5 * (x * r).ln_1p(), x * r * r / (1.0 + x * r))
        }
        LatentKind::Rademacher => {
            if x == 0.0 {
                return Ok((0.0, 0.0));
            }
            let sx = x.sqrt();
            let mut psi = 0.0;
            let mut ov = 0.0;
            for &(xi, w) in &rule.points {
                let g = x + sx * xi;
                let post = latent_posterior_unchecked(prior, g, x);
                psi += w * post.log_z;
                ov += w * post.f * post.f;
            }
            (psi, ov)
        }
    })
}

/// Expectation rule for the latent channel at signal-to-noise `x`. The
/// Rademacher integrand `ln cosh(x + sqrt(x) xi)` has complex poles at
/// distance `pi / (2 sqrt(x))` from the real xi axis, which Gauss–Hermite
/// resolves poorly, so uniform Gauss–Legendre panels narrower than that are used.
pub fn latent_rule(x: f64) -> GaussRule {
    let width = (0.25 * std::f64::consts::PI / x.sqrt().max(1.0)).min(0.5);
    GaussRule::uniform_panels(width, 8, 9.0)
}

/// Latent free entropy `E_xi[Z_z log Z_z]` at `(sqrt(x) xi, x)`.
pub fn psi_z(prior: &LatentPrior, x: f64) -> Result<f64> {
    psi_prior_with_overlap(prior, x, &latent_rule(x)).map(|r| r.0)
}

/// `d psi_z / dx`, from the moment identity `2 psi_z' = E[Z_z f_z^2]`.
pub fn psi_z_grad(prior: &LatentPrior, x: f64) -> Result<f64> {
    psi_prior_with_overlap(prior, x, &latent_rule(x)).map(|r| 0.5 * r.1)
}

/// Planted-measure expectations of the output channel at `(x, y)`:
/// `E_{xi,eta}[Z_out F]` for `F = ln Z_out, 1, f_v^2, f_out^2` with arguments
/// `(sqrt(x) xi, x, sqrt(y) eta, rho_z - y)`.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct PlantedMoments {
    pub psi: f64,
    pub mass: f64,
    pub e_fv2: f64,
    pub e_fout2: f64,
}

/// Two-dimensional quadrature for [`PlantedMoments`].
///
/// The xi axis uses Gauss–Hermite nodes placed on the conditional law of
/// `B` given `omega` (mean `x E[v]`, variance `x + x^2 Var[v]`) and reweighted
/// by `Z_out N(B; 0, x) / N(B; mu, s^2)`. The eta axis is plain Gauss–Hermite
/// for the linear channel and a graded Gauss–Legendre rule otherwise, since
/// sign and ReLU integrands change over an eta-width `sqrt(V / y)`.
#[derive(Clone, Debug)]
pub struct OutIntegrator {
    pub order: usize,
    xi: GaussRule,
    eta: GaussRule,
    pub panel_order: usize,
}

/// V is kept above this fraction of rho_z.
pub const MIN_VAR_FRACTION: f64 = 1e-14;

impl OutIntegrator {
    pub fn new(order: usize) -> Self {
        OutIntegrator { order, xi: GaussRule::hermite(order), eta: GaussRule::hermite(order), panel_order: 16 }
    }

    pub fn moments(&self, act: Activation, rho_z: f64, x: f64, y: f64) -> Result<PlantedMoments> {
        if !x.is_finite() || x < 0.0 {
            return Err(Error::invalid(format!("x must be finite and >= 0, got {x}")));
        }
        if !y.is_finite() || y < 0.0 || y > rho_z * (1.0 + 1e-12) {
            return Err(Error::invalid(format!("y must lie in [0, rho_z={rho_z}], got {y}")));
        }
        let y = y.min(rho_z);
        let var = (rho_z - y).max(MIN_VAR_FRACTION * rho_z);
        let graded;
        let eta: &GaussRule = if y == 0.0 {
            graded = GaussRule::single_point();
            &graded
        } else if act.kind == ActivationKind::Linear {
            &self.eta
        } else {
            graded = GaussRule::graded((var / y).sqrt().min(1.0), self.panel_order, 9.0);
            &graded
        };
        let sy = y.sqrt();
        let mut acc = PlantedMoments::default();
        let half_ln_x = 0.5 * x.ln();
        for &(e, we) in &eta.points {
            let ctx = OmegaContext::new(act, sy * e, var);
            if x == 0.0 {
                let null = ctx.posterior(0.0, 0.0);
                acc.psi += we * null.log_z;
                acc.mass += we * null.log_z.exp();
                acc.e_fv2 += we * null.f_v * null.f_v;
                acc.e_fout2 += we * null.f_out * null.f_out;
                continue;
            }
            let (comps, nc) = ctx.b_components(x);
            let comps = &comps[..nc];
            // for linear and sign the components are the exact conditional law of B
            let exact = act.kind != ActivationKind::Relu;
            let ln_sd = [comps[0].2.ln(), comps.get(1).map_or(0.0, |c| c.2.ln())];
            for (ci, &(ln_pi, m, sd)) in comps.iter().enumerate() {
                let pi_c = ln_pi.exp();
                for &(z, wz) in &self.xi.points {
                    let b = m + sd * z;
                    let post = ctx.posterior(b, x);
                    let w = if exact {
                        we * wz * pi_c
                    } else {
                        let ln_target = post.log_z - b * b / (2.0 * x) - half_ln_x;
                        let ln_q = if nc == 1 {
                            -0.5 * z * z - ln_sd[ci]
                        } else {
                            let t0 = comps[0].0 - (b - comps[0].1).powi(2) / (2.0 * comps[0].2 * comps[0].2) - ln_sd[0];
                            let t1 = comps[1].0 - (b - comps[1].1).powi(2) / (2.0 * comps[1].2 * comps[1].2) - ln_sd[1];
                            log_add_exp(t0, t1)
                        };
                        we * wz * (ln_pi + ln_target - ln_q).exp()
                    };
                    if w == 0.0 {
                        continue;
                    }
                    acc.psi += w * post.log_z;
                    acc.mass += w;
                    acc.e_fv2 += w * post.f_v * post.f_v;
                    acc.e_fout2 += w * post.f_out * post.f_out;
                }
            }
        }
        let vals = [acc.psi, acc.mass, acc.e_fv2, acc.e_fout2];
        if vals.iter().any(|v| !v.is_finite()) {
            return Err(Error::numerical(format!("non-finite channel integral at x={x}, y={y}")));
        }
        Ok(acc)
    }
}

/// Public evaluators always run the doubled order: switching orders on a
/// disagreement test would make the result discontinuous in `(x, y)`.
fn moments_checked(act: Activation, latent: &LatentPrior, x: f64, y: f64) -> Result<PlantedMoments> {
    OutIntegrator::new(128).moments(act, latent.second_moment(), x, y)
}

/// Output free entropy `Psi_out(x, y)`.
pub fn psi_out(act: Activation, latent: &LatentPrior, x: f64, y: f64) -> Result<f64> {
    moments_checked(act, latent, x, y).map(|m| m.psi)
}

/// `(d Psi_out/dx, d Psi_out/dy)` from `2 d_x Psi = E[Z f_v^2]`, `2 d_y Psi = E[Z f_out^2]`.
pub fn psi_out_grads(act: Activation, latent: &LatentPrior, x: f64, y: f64) -> Result<(f64, f64)> {
    moments_checked(act, latent, x, y).map(|m| (0.5 * m.e_fv2, 0.5 * m.e_fout2))
}

/// `E_{xi,eta}[Z_out]`; equals 1 under the planted measure.
pub fn planted_mass(act: Activation, latent: &LatentPrior, x: f64, y: f64) -> Result<f64> {
    moments_checked(act, latent, x, y).map(|m| m.mass)
}

/// Moments of `(v, x)` under the null measure `x ~ N(0, rho_z)`, `v = act(x)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NullMoments {
    pub e_v: f64,
    pub e_v2: f64,
    pub e_vx: f64,
    pub e_x2: f64,
}

pub fn null_moments(act: Activation, latent: &LatentPrior) -> NullMoments {
    let r = latent.second_moment();
    match act.kind {
        ActivationKind::Linear => NullMoments { e_v: 0.0, e_v2: r, e_vx: r, e_x2: r },
        ActivationKind::Sign => NullMoments { e_v: 0.0, e_v2: 1.0, e_vx: (2.0 * r / PI).sqrt(), e_x2: r },
        ActivationKind::Relu => NullMoments {
            e_v: (r / (2.0 * PI)).sqrt(),
            e_v2: 0.5 * r,
            e_vx: 0.5 * r,
            e_x2: r,
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_ndtr_tails_are_continuous() {
        for t in [-30.0f64, 6.0] {
            let a = log_ndtr(t - 1e-9);
            let b = log_ndtr(t + 1e-9);
            assert!((a - b).abs() < 1e-6 * a.abs().max(1e-12), "t={t}: {a} vs {b}");
        }
        assert!((log_ndtr(0.0) - 0.5f64.ln()).abs() < 1e-15);
        let r = inv_mills(-30.0 - 1e-9) / inv_mills(-30.0 + 1e-9);
        assert!((r - 1.0).abs() < 1e-9);
    }

    #[test]
    fn sign_matches_symmetric_two_point_value() {
        let p = out_posterior(Activation::SIGN, &DenoiserParams::new(1.0, 0.0, 0.0, 1.0)).unwrap();
        assert!((p.log_z.exp() - 1f64.cosh()).abs() < 1e-14);
    }
}
