//! Large-size spectrum of the linear LAMP operator.
//!
//! With a linear activation and Gaussian latent, the noise part of the LAMP
//! operator restricted to the latent space is `W^T T W / k`, where `T` has a
//! known limiting law (the base law): a shifted semicircle for the symmetric
//! model and a shifted Marchenko–Pastur law for the rectangular one. Its
//! Stieltjes transform solves the Silverstein equation, which gives the bulk
//! density, the bulk edge `lambda_max`, the trace hierarchy `S^(r)`,
//! `S^(r,q)` and from it the squared overlap of the top eigenvector.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::Serialize;

use crate::error::ensure_finite;
use crate::quadrature::{integrate, QuadValue};
use crate::{Error, Result};

/// Absolute tolerance of every base-law integral.
pub const QUAD_ABS_TOL: f64 = 1e-11;
const QUAD_REL_TOL: f64 = 1e-13;
/// Distance kept from the ends of the `s_edge` bracket.
pub const EDGE_GUARD: f64 = 1e-10;
/// Imaginary offset for Stieltjes inversion.
pub const DENSITY_EPS: f64 = 1e-6;
pub const DENSITY_DAMPING: f64 = 0.5;
pub const DENSITY_MAX_ITER: usize = 10_000;
const DENSITY_TOL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub enum RmtModel {
    Wigner,
    Wishart { beta: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub enum BaseKind {
    /// Semicircle centred at `-1/delta` with radius `2/sqrt(delta)`.
    SemicircleShifted { delta: f64 },
    /// Law of `beta m/(1+delta) - beta/delta` with `m` Marchenko–Pastur of ratio `beta`.
    MpShifted { beta: f64, delta: f64 },
}

/// Limiting eigenvalue law of the noise factor `T`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct BaseLaw {
    kind: BaseKind,
    // continuous part as t = offset + scale * m, m on [m_lo, m_hi]
    m_lo: f64,
    m_hi: f64,
    scale: f64,
    offset: f64,
    atom: Option<(f64, f64)>,
}

impl BaseLaw {
    pub fn semicircle(delta: f64) -> Result<Self> {
        check_positive("delta", delta)?;
        let radius = 2.0 / delta.sqrt();
        Ok(BaseLaw {
            kind: BaseKind::SemicircleShifted { delta },
            m_lo: -radius,
            m_hi: radius,
            scale: 1.0,
            offset: -1.0 / delta,
            atom: None,
        })
    }

    pub fn marchenko_pastur(beta: f64, delta: f64) -> Result<Self> {
        check_positive("beta", beta)?;
        check_positive("delta", delta)?;
        let r = 1.0 / beta.sqrt();
        let scale = beta / (1.0 + delta);
        let offset = -beta / delta;
        let atom = if beta < 1.0 { Some((offset, 1.0 - beta)) } else { None };
        Ok(BaseLaw {
            kind: BaseKind::MpShifted { beta, delta },
            m_lo: (1.0 - r) * (1.0 - r),
            m_hi: (1.0 + r) * (1.0 + r),
            scale,
            offset,
            atom,
        })
    }

    pub fn kind(&self) -> BaseKind {
        self.kind
    }

    /// Supremum of the support, `z_1`.
    pub fn z1(&self) -> f64 {
        self.offset + self.scale * self.m_hi
    }

    /// Infimum of the support (including the atom).
    pub fn t_min(&self) -> f64 {
        let lo = self.offset + self.scale * self.m_lo;
        match self.atom {
            Some((loc, _)) => lo.min(loc),
            None => lo,
        }
    }

    /// Point mass `(location, mass)` of the law, if any.
    pub fn atom(&self) -> Option<(f64, f64)> {
        self.atom
    }

    /// Density of the continuous part at `t`.
    pub fn density(&self, t: f64) -> f64 {
        let m = (t - self.offset) / self.scale;
        if m <= self.m_lo || m >= self.m_hi {
            return 0.0;
        }
        let root = ((self.m_hi - m) * (m - self.m_lo)).sqrt();
        let dm = match self.kind {
            BaseKind::SemicircleShifted { .. } => 2.0 * root / (PI * self.m_hi * self.m_hi),
            BaseKind::MpShifted { beta, .. } => beta * root / (2.0 * PI * m),
        };
        dm / self.scale
    }

    /// Expectation of `f` under the law. The continuous part is mapped onto
    /// `theta` in `[0, pi]` through `m = mid - half cos(theta)`, which removes the
    /// square-root endpoints, then integrated adaptively.
    pub fn expect<T: QuadValue>(&self, mut f: impl FnMut(f64) -> T) -> T {
        let mid = 0.5 * (self.m_hi + self.m_lo);
        let half = 0.5 * (self.m_hi - self.m_lo);
        let kind = self.kind;
        let (scale, offset) = (self.scale, self.offset);
        let (cont, _) = integrate(
            |theta: f64| {
                let (sn, cs) = theta.sin_cos();
                let m = mid - half * cs;
                let weight = match kind {
                    BaseKind::SemicircleShifted { .. } => 2.0 / PI * sn * sn,
                    BaseKind::MpShifted { beta, .. } => {
                        if m <= 0.0 {
                            0.0
                        } else {
                            beta * half * half * sn * sn / (2.0 * PI * m)
                        }
                    }
                };
                if weight == 0.0 {
                    T::zero()
                } else {
                    f(offset + scale * m) * weight
                }
            },
            0.0,
            PI,
            QUAD_ABS_TOL,
            QUAD_REL_TOL,
        );
        match self.atom {
            Some((loc, mass)) => cont + f(loc) * mass,
            None => cont,
        }
    }

    /// Mass sitting exactly at `t = 0`.
    fn mass_at_zero(&self) -> f64 {
        match self.atom {
            Some((loc, mass)) if loc == 0.0 => mass,
            _ => 0.0,
        }
    }
}

/// Base law of the noise factor for the given model.
pub fn base_law(model: RmtModel, delta: f64) -> Result<BaseLaw> {
    match model {
        RmtModel::Wigner => BaseLaw::semicircle(delta),
        RmtModel::Wishart { beta } => BaseLaw::marchenko_pastur(beta, delta),
    }
}

/// Noise level below which the rectangular base law lives on the negative half line.
pub fn delta_pos(beta: f64) -> f64 {
    beta / (1.0 + 2.0 * beta.sqrt())
}

fn check_positive(name: &str, x: f64) -> Result<()> {
    ensure_finite(name, x)?;
    if x <= 0.0 {
        return Err(Error::invalid(format!("{name} must be positive, got {x}")));
    }
    Ok(())
}

fn check_pole(base: &BaseLaw, s: f64) -> Result<()> {
    if s >= 0.0 {
        return Err(Error::Domain(format!("s must be negative, got {s}")));
    }
    let z1 = base.z1();
    if z1 > 0.0 && 1.0 + s * z1 <= 0.0 {
        return Err(Error::Domain(format!("1 + s t vanishes on the support at s = {s}")));
    }
    Ok(())
}

/// `g^-1(s) = -1/s + alpha E[t/(1+st)]`. Returns `+inf` at `s = 0`.
pub fn silverstein_g_inverse(base: &BaseLaw, alpha: f64, s: f64) -> Result<f64> {
    ensure_finite("s", s)?;
    if s == 0.0 {
        return Ok(f64::INFINITY);
    }
    check_pole(base, s)?;
    Ok(-1.0 / s + alpha * base.expect(|t| t / (1.0 + s * t)))
}

/// Derivative of `g^-1` in `s`.
fn g_inverse_prime(base: &BaseLaw, alpha: f64, s: f64) -> f64 {
    1.0 / (s * s) - alpha * base.expect(|t| (t / (1.0 + s * t)).powi(2))
}

/// `alpha E[(st/(1+st))^2] - 1`, zero at the edge.
fn edge_residual(base: &BaseLaw, alpha: f64, s: f64) -> f64 {
    alpha * base.expect(|t| (s * t / (1.0 + s * t)).powi(2)) - 1.0
}

/// Bulk edge of the noise operator.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct EdgeResult {
    pub alpha: f64,
    pub base: BaseLaw,
    /// Stationary point of `g^-1`; `-inf` when `g^-1` is increasing on all of `s < 0`.
    pub s_edge: f64,
    /// `g^-1(s_edge)`, the right end of the continuous bulk of `W^T T W / k`.
    pub z_edge: f64,
    /// Right end of the support of `W^T T W / k`, including its zero eigenvalues when `alpha < 1`.
    pub nu_edge: f64,
    /// Right end of the support of the `p x p` operator.
    pub lambda_max: f64,
    /// Edge equation residual at `s_edge`.
    pub residual: f64,
}

/// Solves `alpha E[(st/(1+st))^2] = 1` on `(-1/z_1, 0)` by bisection and maps it
/// to the bulk edge. When `z_1 <= 0` the bracket is `(-inf, 0)`; if the equation
/// has no root there (`alpha <= 1`) the bulk ends at 0.
pub fn solve_s_edge(base: &BaseLaw, alpha: f64) -> Result<EdgeResult> {
    check_positive("alpha", alpha)?;
    let z1 = base.z1();
    let bracket = if z1 > 0.0 {
        Some((-1.0 / z1 + EDGE_GUARD, -EDGE_GUARD))
    } else {
        // the left-hand side grows towards alpha (1 - mass at 0) as s -> -inf
        let mut lo = -1.0;
        let mut found = None;
        if alpha * (1.0 - base.mass_at_zero()) > 1.0 {
            for _ in 0..200 {
                if edge_residual(base, alpha, lo) > 0.0 {
                    found = Some((lo, -EDGE_GUARD));
                    break;
                }
                lo *= 2.0;
            }
        }
        found
    };
    let (s_edge, residual) = match bracket {
        Some((mut lo, mut hi)) => {
            let r_lo = edge_residual(base, alpha, lo);
            let r_hi = edge_residual(base, alpha, hi);
            if !(r_lo > 0.0 && r_hi < 0.0) {
                return Err(Error::numerical(format!("edge equation has no sign change on [{lo}, {hi}] ({r_lo}, {r_hi})")));
            }
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if mid <= lo || mid >= hi {
                    break;
                }
                if edge_residual(base, alpha, mid) > 0.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            let s = 0.5 * (lo + hi);
            (s, edge_residual(base, alpha, s))
        }
        None => (f64::NEG_INFINITY, 0.0),
    };
    let z_edge = if s_edge.is_finite() { silverstein_g_inverse(base, alpha, s_edge)? } else { 0.0 };
    let nu_edge = if alpha < 1.0 { z_edge.max(0.0) } else { z_edge };
    let lambda_max = if alpha > 1.0 { z_edge.max(0.0) } else { z_edge };
    Ok(EdgeResult { alpha, base: *base, s_edge, z_edge, nu_edge, lambda_max, residual })
}

/// Stieltjes transform and its derivative at a real point.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct StieltjesPoint {
    pub g: f64,
    pub g_prime: f64,
}

impl EdgeResult {
    /// `g_nu(lambda)` for `lambda` right of the support of `W^T T W / k`:
    /// the root of `g^-1(s) = lambda` on `(s_edge, 0)`.
    pub fn g_nu(&self, lambda: f64) -> Result<StieltjesPoint> {
        ensure_finite("lambda", lambda)?;
        if lambda <= self.nu_edge {
            return Err(Error::Domain(format!("lambda = {lambda} is not right of the bulk edge {}", self.nu_edge)));
        }
        let (base, alpha) = (&self.base, self.alpha);
        let ginv = |s: f64| silverstein_g_inverse(base, alpha, s);
        // right end: g^-1 -> +inf as s -> 0-
        let mut hi = -0.5 / (lambda.abs() + alpha * base.expect(|t: f64| t.abs()) + 1.0);
        while ginv(hi)? <= lambda {
            hi *= 0.5;
        }
        let mut lo = if self.s_edge.is_finite() {
            self.s_edge
        } else {
            let mut lo = 2.0 * hi;
            while ginv(lo)? >= lambda {
                lo *= 2.0;
                if !lo.is_finite() {
                    return Err(Error::numerical("no left bracket for g_nu"));
                }
            }
            lo
        };
        // safeguarded Newton
        let mut s = 0.5 * (lo + hi);
        for _ in 0..300 {
            let f = ginv(s)? - lambda;
            if f.abs() <= 1e-14 * lambda.abs().max(1.0) {
                break;
            }
            if f > 0.0 {
                hi = s;
            } else {
                lo = s;
            }
            let d = g_inverse_prime(base, alpha, s);
            let newton = s - f / d;
            s = if d > 0.0 && newton > lo && newton < hi { newton } else { 0.5 * (lo + hi) };
            if hi - lo <= 4.0 * f64::EPSILON * s.abs() {
                break;
            }
        }
        Ok(StieltjesPoint { g: s, g_prime: 1.0 / g_inverse_prime(base, alpha, s) })
    }

    /// Trace hierarchy at `lambda`.
    pub fn hierarchy(&self, lambda: f64) -> Result<SHierarchy> {
        let StieltjesPoint { g, g_prime } = self.g_nu(lambda)?;
        let a = self.alpha;
        let l = 1.0 + lambda * g;
        let s0 = g;
        let s1 = g * (a - l);
        let s2 = g * (a * (1.0 + a) - (1.0 + 2.0 * a) * l + l * l);
        let s3 = g * ((a + 3.0 * a * a + a * a * a) - (1.0 + 5.0 * a + 3.0 * a * a) * l + (2.0 + 3.0 * a) * l * l - l * l * l);
        // d/dlambda of g (a - 1 - lambda g)
        let s10 = g_prime * (a - l) - g * (g + lambda * g_prime);
        let second = self.base.expect(|t| (t / (1.0 + t * g)).powi(2));
        let first = self.base.expect(|t| t / (1.0 + t * g).powi(2));
        let inner = s10 * second - g * first;
        let s11 = g * s2 - l * s10 + a * g * (g + s1) * inner;
        let s12 = g * s3 - l * (s11 + (1.0 + a) * s10) + a * g * ((1.0 + a) * g + s1 + s2) * inner;
        Ok(SHierarchy { at: lambda, g, g_prime, s0, s1, s2, s3, s10, s11, s12 })
    }
}

/// Limits of `(1/k) Tr[(G - lambda)^-1 M^r]` and `(1/k) Tr[(G - lambda)^-1 M^r (G - lambda)^-1 M^q]`
/// with `G = W^T T W / k`, `M = W^T W / k`.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct SHierarchy {
    pub at: f64,
    pub g: f64,
    pub g_prime: f64,
    pub s0: f64,
    pub s1: f64,
    pub s2: f64,
    pub s3: f64,
    /// `S^(1,0) = d S^(1) / d lambda`.
    pub s10: f64,
    pub s11: f64,
    pub s12: f64,
}

/// `g_nu(lambda)` for `lambda` right of the bulk.
pub fn g_nu_at(base: &BaseLaw, alpha: f64, lambda: f64) -> Result<f64> {
    Ok(solve_s_edge(base, alpha)?.g_nu(lambda)?.g)
}

pub fn s_hierarchy(base: &BaseLaw, alpha: f64, lambda: f64) -> Result<SHierarchy> {
    solve_s_edge(base, alpha)?.hierarchy(lambda)
}

/// Asymptotic squared overlap between the top LAMP eigenvector and the spike,
/// symmetric model with linear activation, `rho_v = 1`. Zero from `delta = 1 + alpha` on.
pub fn epsilon_overlap(alpha: f64, delta: f64) -> Result<f64> {
    check_positive("alpha", alpha)?;
    check_positive("delta", delta)?;
    if delta >= 1.0 + alpha {
        return Ok(0.0);
    }
    let h = s_hierarchy(&BaseLaw::semicircle(delta)?, alpha, 1.0)?;
    Ok(h.s2 * h.s2 / (alpha * h.s12))
}

/// Samples of the limiting bulk density.
#[derive(Clone, Debug, Serialize)]
pub struct BulkDensity {
    pub x: Vec<f64>,
    /// Density of `W^T T W / k` (`k x k`, what the Stieltjes inversion returns).
    pub nu_density: Vec<f64>,
    /// Continuous part of the `p x p` operator's law: `nu_density / alpha`, less
    /// the zero eigenvalues of `W^T T W / k` when `alpha < 1`.
    pub mu_density: Vec<f64>,
    /// Mass of the `p x p` operator's law at zero, `(1 - 1/alpha)_+`.
    pub zero_atom: f64,
    pub converged: Vec<bool>,
    pub iterations: Vec<usize>,
}

/// Stieltjes–Perron inversion: at `z = x + i eps` the damped iteration
/// `g <- d g + (1-d) (-1/(z - alpha E[t/(1+tg)]))` from `g = i`, density `Im g / pi`.
pub fn bulk_density(base: &BaseLaw, alpha: f64, x_grid: &[f64], epsilon: f64) -> Result<BulkDensity> {
    check_positive("alpha", alpha)?;
    check_positive("epsilon", epsilon)?;
    let mut out = BulkDensity {
        x: x_grid.to_vec(),
        nu_density: Vec::with_capacity(x_grid.len()),
        mu_density: Vec::with_capacity(x_grid.len()),
        zero_atom: (1.0 - 1.0 / alpha).max(0.0),
        converged: Vec::with_capacity(x_grid.len()),
        iterations: Vec::with_capacity(x_grid.len()),
    };
    for &x in x_grid {
        ensure_finite("x", x)?;
        let z = Complex64::new(x, epsilon);
        let mut g = Complex64::new(0.0, 1.0);
        let mut converged = false;
        let mut iters = 0;
        while iters < DENSITY_MAX_ITER {
            iters += 1;
            let r = base.expect(|t| Complex64::new(t, 0.0) / (1.0 + g * t));
            let next = -1.0 / (z - alpha * r);
            let upd = DENSITY_DAMPING * g + (1.0 - DENSITY_DAMPING) * next;
            let step = (upd - g).norm();
            g = upd;
            if step <= DENSITY_TOL * g.norm().max(1.0) {
                converged = true;
                break;
            }
        }
        let d = (g.im / PI).max(0.0);
        // for alpha < 1 the k x k operator has k - p zero eigenvalues; they are
        // not part of the p x p law, so their smoothed contribution is removed
        let zeros = (1.0 - alpha).max(0.0) * epsilon / (PI * (x * x + epsilon * epsilon));
        out.nu_density.push(d);
        out.mu_density.push(((d - zeros) / alpha).max(0.0));
        out.converged.push(converged);
        out.iterations.push(iters);
    }
    Ok(out)
}
