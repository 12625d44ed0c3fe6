//! LAMP spectral estimators, covariance-LAMP and the PCA baseline.
//!
//! Every operator has the form `Γ = s · P · D` with a preconditioner `P`
//! and a symmetric-or-not data part `D`. When `P` is positive semidefinite
//! and `D` symmetric, `T = D P` is self-adjoint in the `P` inner product and
//! shares the spectrum of `Γ`; Lanczos runs on `T` and eigenvectors map back
//! through `P`. Anything else goes through shifted block power iteration.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::channels::null_moments;
use crate::error::{Error, Result};
use crate::priors::{Activation, GenerativeModel, LatentPrior, ObservationModel, SpikedInstance};
use crate::quadrature::GaussRule;
use crate::rng::{self, derive_seed};

/// Largest dimension for which a dense operator is assembled.
pub const DENSE_MAX_DIM: usize = 4000;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LampCoeffs {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    /// `rho_u`, Wishart only
    pub d: Option<f64>,
}

/// Moments of the null output distribution. `prior_u = Some(..)` selects the
/// Wishart variant.
pub fn lamp_coefficients(act: Activation, latent: &LatentPrior, prior_u: Option<&LatentPrior>) -> Result<LampCoeffs> {
    if !act.zero_mean_output() {
        return Err(Error::invalid(format!(
            "LAMP needs a zero-mean output channel; {} has E[v] != 0",
            act.name()
        )));
    }
    let m = null_moments(act, latent);
    let rho_z = latent.second_moment();
    let sd = rho_z.sqrt();
    let e_vx2 = GaussRule::hermite(64).expect(|xi| act.apply(sd * xi) * rho_z * xi * xi);
    let c = 0.5 * latent.third_moment * e_vx2 * m.e_vx / rho_z.powi(3);
    Ok(LampCoeffs {
        a: m.e_v2,
        b: m.e_vx * m.e_vx / rho_z,
        c,
        d: prior_u.map(|u| u.second_moment()),
    })
}

#[derive(Clone, Debug)]
enum Precond<'a> {
    Identity,
    Generative { w: &'a DMatrix<f64>, a: f64, b: f64, c: f64 },
    Matrix(&'a DMatrix<f64>),
}

#[derive(Clone, Debug)]
enum DataPart<'a> {
    /// `Y x / sqrt(p) - shift x`
    Square { y: &'a DMatrix<f64>, shift: f64 },
    /// `scale Y^T Y x / p - shift x`
    Gram { y: &'a DMatrix<f64>, scale: f64, shift: f64 },
}

/// `Γ = scale · P · D`, borrowing the data and weights.
#[derive(Clone, Debug)]
pub struct LampOperator<'a> {
    p: usize,
    scale: f64,
    precond: Precond<'a>,
    data: DataPart<'a>,
    data_symmetric: bool,
}

fn check_delta(delta: f64) -> Result<()> {
    if !delta.is_finite() || delta <= 0.0 {
        return Err(Error::Domain(format!("noise variance must be positive and finite, got {delta}")));
    }
    Ok(())
}

fn is_symmetric(m: &DMatrix<f64>) -> bool {
    let tol = 1e-12 * m.amax().max(1.0);
    let n = m.nrows();
    (0..n).all(|j| (0..j).all(|i| (m[(i, j)] - m[(j, i)]).abs() <= tol))
}

fn check_generative(gm: &GenerativeModel, p: usize) -> Result<()> {
    if gm.p != p || gm.w.nrows() != p {
        return Err(Error::DimensionMismatch(format!("weights have {} rows, data has p = {p}", gm.w.nrows())));
    }
    Ok(())
}

/// `(1/Δ) P (Y/sqrt(p) - a I)` for the symmetric model.
pub fn build_lamp_wigner<'a>(
    instance: &'a SpikedInstance,
    gm: &'a GenerativeModel,
    coeffs: &LampCoeffs,
) -> Result<LampOperator<'a>> {
    if instance.model != ObservationModel::Wigner {
        return Err(Error::invalid("build_lamp_wigner needs a Wigner instance"));
    }
    let y = &instance.y;
    if y.nrows() != y.ncols() {
        return Err(Error::DimensionMismatch(format!("Wigner data must be square, got {:?}", y.shape())));
    }
    check_generative(gm, y.ncols())?;
    check_delta(instance.delta)?;
    Ok(LampOperator {
        p: y.ncols(),
        scale: 1.0 / instance.delta,
        precond: Precond::Generative { w: &gm.w, a: coeffs.a, b: coeffs.b, c: coeffs.c },
        data: DataPart::Square { y, shift: coeffs.a },
        data_symmetric: is_symmetric(y),
    })
}

/// `(1/Δ) P ((1/(a + Δ/d)) Y^T Y / p - d β I)` for the rectangular model.
pub fn build_lamp_wishart<'a>(
    instance: &'a SpikedInstance,
    gm: &'a GenerativeModel,
    coeffs: &LampCoeffs,
) -> Result<LampOperator<'a>> {
    let beta = match instance.model {
        ObservationModel::Wishart { beta } => beta,
        ObservationModel::Wigner => return Err(Error::invalid("build_lamp_wishart needs a Wishart instance")),
    };
    let d = coeffs.d.ok_or_else(|| Error::invalid("Wishart LAMP needs the coefficient d = rho_u"))?;
    let y = &instance.y;
    check_generative(gm, y.ncols())?;
    check_delta(instance.delta)?;
    let delta = instance.delta;
    Ok(LampOperator {
        p: y.ncols(),
        scale: 1.0 / delta,
        precond: Precond::Generative { w: &gm.w, a: coeffs.a, b: coeffs.b, c: coeffs.c },
        data: DataPart::Gram { y, scale: 1.0 / (coeffs.a + delta / d), shift: d * beta },
        data_symmetric: true,
    })
}

/// `(1/Δ) Σ (Y/sqrt(p) - I)` with a user-supplied covariance of the spike.
pub fn build_cov_lamp<'a>(y: &'a DMatrix<f64>, sigma_hat: &'a DMatrix<f64>, delta: f64) -> Result<LampOperator<'a>> {
    let p = y.ncols();
    if y.nrows() != p {
        return Err(Error::DimensionMismatch(format!("observation must be square, got {:?}", y.shape())));
    }
    if sigma_hat.shape() != (p, p) {
        return Err(Error::DimensionMismatch(format!(
            "covariance is {:?}, observation is {p}x{p}",
            sigma_hat.shape()
        )));
    }
    if !is_symmetric(sigma_hat) {
        return Err(Error::invalid("covariance matrix must be symmetric"));
    }
    check_delta(delta)?;
    Ok(LampOperator {
        p,
        scale: 1.0 / delta,
        precond: Precond::Matrix(sigma_hat),
        data: DataPart::Square { y, shift: 1.0 },
        data_symmetric: is_symmetric(y),
    })
}

/// Plain `(1/n) X^T X` over the rows of `samples`.
pub fn empirical_second_moment(samples: &DMatrix<f64>) -> DMatrix<f64> {
    let n = samples.nrows().max(1) as f64;
    samples.tr_mul(samples) / n
}

fn pca_operator(instance: &SpikedInstance) -> Result<LampOperator<'_>> {
    let y = &instance.y;
    let data = match instance.model {
        ObservationModel::Wigner => {
            if y.nrows() != y.ncols() {
                return Err(Error::DimensionMismatch(format!("Wigner data must be square, got {:?}", y.shape())));
            }
            DataPart::Square { y, shift: 0.0 }
        }
        ObservationModel::Wishart { .. } => DataPart::Gram { y, scale: 1.0, shift: 0.0 },
    };
    Ok(LampOperator {
        p: y.ncols(),
        scale: 1.0,
        precond: Precond::Identity,
        data_symmetric: match data {
            DataPart::Square { y, .. } => is_symmetric(y),
            DataPart::Gram { .. } => true,
        },
        data,
    })
}

impl LampOperator<'_> {
    pub fn dim(&self) -> usize {
        self.p
    }

    fn apply_data(&self, x: &DVector<f64>) -> DVector<f64> {
        let sp = (self.p as f64).sqrt();
        match self.data {
            DataPart::Square { y, shift } => {
                let mut out = y * x / sp;
                out.axpy(-shift, x, 1.0);
                out
            }
            DataPart::Gram { y, scale, shift } => {
                let yx = y * x;
                let mut out = y.tr_mul(&yx) * (scale / self.p as f64);
                out.axpy(-shift, x, 1.0);
                out
            }
        }
    }

    fn apply_precond(&self, x: &DVector<f64>) -> DVector<f64> {
        match self.precond {
            Precond::Identity => x.clone(),
            Precond::Matrix(s) => s * x,
            Precond::Generative { w, a, b, c } => {
                let k = w.ncols() as f64;
                let wtx = w.tr_mul(x);
                let mut out = w * &wtx * (b / k);
                out.axpy(a - b, x, 1.0);
                if c != 0.0 {
                    out.add_scalar_mut(c * wtx.sum() / k.powf(1.5));
                }
                out
            }
        }
    }

    /// Scalar factor `s` in `Γ = s P D`.
    pub fn scale(&self) -> f64 {
        self.scale
    }

    /// Matrix-free `Γ x`.
    pub fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        self.apply_precond(&self.apply_data(x)) * self.scale
    }

    fn check_dense(&self) -> Result<()> {
        if self.p > DENSE_MAX_DIM {
            return Err(Error::invalid(format!(
                "dense assembly limited to p <= {DENSE_MAX_DIM}, got {}",
                self.p
            )));
        }
        Ok(())
    }

    pub fn preconditioner_dense(&self) -> Result<DMatrix<f64>> {
        self.check_dense()?;
        let p = self.p;
        Ok(match self.precond {
            Precond::Identity => DMatrix::identity(p, p),
            Precond::Matrix(s) => s.clone(),
            Precond::Generative { w, a, b, c } => {
                let k = w.ncols() as f64;
                let mut m = w * w.transpose() * (b / k);
                for i in 0..p {
                    m[(i, i)] += a - b;
                }
                if c != 0.0 {
                    let colsum = w.row_sum();
                    for j in 0..p {
                        let add = c * colsum[j] / k.powf(1.5);
                        for i in 0..p {
                            m[(i, j)] += add;
                        }
                    }
                }
                m
            }
        })
    }

    pub fn data_dense(&self) -> Result<DMatrix<f64>> {
        self.check_dense()?;
        let p = self.p;
        let sp = (p as f64).sqrt();
        let (mut m, shift) = match self.data {
            DataPart::Square { y, shift } => (y / sp, shift),
            DataPart::Gram { y, scale, shift } => (y.tr_mul(y) * (scale / p as f64), shift),
        };
        for i in 0..p {
            m[(i, i)] -= shift;
        }
        Ok(m)
    }

    /// Assembled `Γ`, only for `p <= DENSE_MAX_DIM`.
    pub fn dense(&self) -> Result<DMatrix<f64>> {
        Ok(self.preconditioner_dense()? * self.data_dense()? * self.scale)
    }

    /// `Some(null dimension of P)` when `P` is positive semidefinite.
    fn psd_null_dim(&self) -> Option<usize> {
        match self.precond {
            Precond::Identity => Some(0),
            Precond::Generative { w, a, b, c } => {
                if c != 0.0 || b < 0.0 || a < b {
                    return None;
                }
                let rank = if a > b { self.p } else if b > 0.0 { w.ncols().min(self.p) } else { 0 };
                Some(self.p - rank)
            }
            Precond::Matrix(s) => {
                let eig = s.clone().symmetric_eigenvalues();
                let top = eig.amax().max(f64::MIN_POSITIVE);
                if eig.min() < -1e-10 * top {
                    return None;
                }
                Some(eig.iter().filter(|&&e| e <= 1e-10 * top).count())
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveMethod {
    /// Lanczos on the self-adjoint form
    Symmetric,
    /// shifted block power iteration on the non-normal operator
    General,
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct EigConfig {
    pub tol: f64,
    pub max_iter: usize,
    pub seed: u64,
}

impl Default for EigConfig {
    fn default() -> Self {
        EigConfig { tol: 1e-8, max_iter: 10_000, seed: 0 }
    }
}

#[derive(Clone, Debug)]
pub struct SpectralResult {
    /// descending by real part
    pub eigenvalues: Vec<f64>,
    /// leading eigenvector scaled to squared norm `p`
    pub eigenvector: DVector<f64>,
    pub overlap_sq: Option<f64>,
    /// `||Γ v - λ_1 v|| / ||v||`
    pub residual: f64,
    pub iters: usize,
    pub converged: bool,
    pub method: SolveMethod,
}

impl SpectralResult {
    /// Records `(v·v*)^2 / p^2`.
    pub fn set_truth(&mut self, v_star: &DVector<f64>) {
        let p = self.eigenvector.len() as f64;
        let d = self.eigenvector.dot(v_star);
        self.overlap_sq = Some(d * d / (p * p));
    }

    /// Aligned mean squared error against the spike.
    pub fn mse(&self, v_star: &DVector<f64>) -> f64 {
        let p = self.eigenvector.len() as f64;
        (self.eigenvector.norm_squared() - 2.0 * self.eigenvector.dot(v_star).abs() + v_star.norm_squared()) / p
    }
}

fn normalize_to_p(mut v: DVector<f64>) -> DVector<f64> {
    let p = v.len() as f64;
    let n = v.norm();
    if n > 0.0 {
        v *= p.sqrt() / n;
    }
    let i = v.iamax();
    if v[i] < 0.0 {
        v.neg_mut();
    }
    v
}

fn random_unit(p: usize, seed: u64, tag: u64) -> DVector<f64> {
    let mut r = rng::rng(derive_seed(seed, tag));
    let v = DVector::from_fn(p, |_, _| r.sample::<f64, _>(StandardNormal));
    let n = v.norm();
    v / n
}

fn residual(op: &LampOperator, lambda: f64, v: &DVector<f64>) -> f64 {
    let mut r = op.apply(v);
    r.axpy(-lambda, v, 1.0);
    r.norm() / v.norm()
}

/// Leading `num` eigenpairs of `Γ`, ordered by real part. Non-convergence is
/// flagged, not raised; a complex leading pair is an error.
pub fn leading_eigs(op: &LampOperator, num: usize, cfg: &EigConfig) -> Result<SpectralResult> {
    if num == 0 || num > op.p {
        return Err(Error::invalid(format!("num must be in 1..={}, got {num}", op.p)));
    }
    if !(cfg.tol > 0.0) || cfg.max_iter == 0 {
        return Err(Error::invalid("tol must be positive and max_iter nonzero"));
    }
    match (op.data_symmetric, op.psd_null_dim()) {
        (true, Some(null)) => symmetric_solve(op, num, null, cfg),
        _ => general_solve(op, num, cfg),
    }
}

fn tridiagonal_eigen(alpha: &[f64], beta: &[f64]) -> (Vec<f64>, DMatrix<f64>) {
    let m = alpha.len();
    let t = DMatrix::from_fn(m, m, |i, j| {
        if i == j {
            alpha[i]
        } else if i + 1 == j {
            beta[i]
        } else if j + 1 == i {
            beta[j]
        } else {
            0.0
        }
    });
    let eig = SymmetricEigen::new(t);
    let mut idx: Vec<usize> = (0..m).collect();
    idx.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let vals = idx.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vecs = DMatrix::from_fn(m, m, |r, c| eig.eigenvectors[(r, idx[c])]);
    (vals, vecs)
}

struct Ritz {
    values: Vec<f64>,
    /// eigenvectors of Γ (the `P`-images)
    vectors: Vec<DVector<f64>>,
    /// restart vectors in `T` coordinates
    restart: DVector<f64>,
    converged: bool,
}

/// Lanczos with full reorthogonalization on `T = s D P` in the `P` inner
/// product, explicit restarts. Returns after `budget` applications of `T`.
fn lanczos(op: &LampOperator, num: usize, start: DVector<f64>, tol: f64, budget: usize, used: &mut usize) -> Ritz {
    let p = op.p;
    let m_max = p.min(300.max(6 * num + 40));
    let mut start = start;
    loop {
        let mut xs: Vec<DVector<f64>> = Vec::new();
        let mut pxs: Vec<DVector<f64>> = Vec::new();
        let px0 = op.apply_precond(&start);
        let n0 = start.dot(&px0).max(0.0).sqrt();
        xs.push(&start / n0);
        pxs.push(px0 / n0);
        let (mut alpha, mut beta) = (Vec::new(), Vec::new());
        loop {
            let j = xs.len() - 1;
            let mut w = op.apply_data(&pxs[j]) * op.scale;
            *used += 1;
            let a = pxs[j].dot(&w);
            alpha.push(a);
            for _ in 0..2 {
                for (x, px) in xs.iter().zip(&pxs) {
                    let c = px.dot(&w);
                    w.axpy(-c, x, 1.0);
                }
            }
            let pw = op.apply_precond(&w);
            let b = w.dot(&pw).max(0.0).sqrt();
            let m = alpha.len();
            let scale = alpha.iter().map(|v| v.abs()).fold(0.0, f64::max).max(1.0);
            let exhausted = b <= 1e-12 * scale || m >= p;
            let check_every = if m <= 40 { 4 } else { 10 };
            let out_of_budget = *used >= budget;
            if exhausted || m == m_max || out_of_budget || m % check_every == 0 {
                let (vals, vecs) = tridiagonal_eigen(&alpha, &beta);
                let take = num.min(m);
                let converged = exhausted
                    || (take == num && (0..take).all(|i| b * vecs[(m - 1, i)].abs() <= tol * vals[i].abs().max(1.0)));
                if converged || m == m_max || out_of_budget {
                    let mut vectors = Vec::with_capacity(take);
                    let mut restart = DVector::zeros(p);
                    for i in 0..take {
                        let mut v = DVector::zeros(p);
                        let mut x = DVector::zeros(p);
                        for r in 0..m {
                            v.axpy(vecs[(r, i)], &pxs[r], 1.0);
                            x.axpy(vecs[(r, i)], &xs[r], 1.0);
                        }
                        vectors.push(v);
                        restart += x;
                    }
                    if converged || out_of_budget {
                        return Ritz { values: vals[..take].to_vec(), vectors, restart, converged };
                    }
                    start = restart;
                    break;
                }
            }
            beta.push(b);
            xs.push(&w / b);
            pxs.push(pw / b);
        }
    }
}

fn symmetric_solve(op: &LampOperator, num: usize, null_dim: usize, cfg: &EigConfig) -> Result<SpectralResult> {
    let mut used = 0usize;
    let mut inner_tol = cfg.tol;
    let mut start = random_unit(op.p, cfg.seed, rng::TAG_EIG);
    // operator-space rank is p - null_dim
    let want = num.min(op.p - null_dim).max(1);
    let ritz = loop {
        let ritz = lanczos(op, want, start.clone(), inner_tol, cfg.max_iter, &mut used);
        if !ritz.converged || used >= cfg.max_iter {
            break ritz;
        }
        let r = residual(op, ritz.values[0], &ritz.vectors[0]);
        if r <= cfg.tol || inner_tol < 1e-15 {
            break ritz;
        }
        inner_tol *= 0.5 * cfg.tol / r;
        start = ritz.restart.clone();
    };
    let mut pairs: Vec<(f64, Option<DVector<f64>>)> =
        ritz.values.iter().copied().zip(ritz.vectors.into_iter().map(Some)).collect();
    // unconverged Ritz values are not yet ordered against the null space
    if ritz.converged {
        pairs.extend(std::iter::repeat_n((0.0, None), null_dim.min(num)));
    }
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0));
    pairs.truncate(num);
    let top = pairs[0]
        .1
        .clone()
        .ok_or_else(|| Error::numerical("leading eigenvalue is the null-space zero of the preconditioner"))?;
    let eigenvector = normalize_to_p(top);
    let res = residual(op, pairs[0].0, &eigenvector);
    Ok(SpectralResult {
        eigenvalues: pairs.iter().map(|p| p.0).collect(),
        eigenvector,
        overlap_sq: None,
        residual: res,
        iters: used,
        converged: ritz.converged && res <= cfg.tol,
        method: SolveMethod::Symmetric,
    })
}

fn orthonormalize(x: DMatrix<f64>) -> DMatrix<f64> {
    x.qr().q()
}

/// Shifted block power iteration with Rayleigh-Ritz extraction.
fn general_solve(op: &LampOperator, num: usize, cfg: &EigConfig) -> Result<SpectralResult> {
    let p = op.p;
    let nb = p.min(num + 6);
    // rough spectral radius for the shift
    let mut x = random_unit(p, cfg.seed ^ 0x9e37, rng::TAG_EIG);
    let mut radius: f64 = 0.0;
    for _ in 0..30 {
        let y = op.apply(&x);
        let n = y.norm();
        radius = radius.max(n);
        if n == 0.0 {
            break;
        }
        x = y / n;
    }
    let sigma = 1.1 * radius + 1e-12;
    let mut r = rng::rng(derive_seed(cfg.seed, rng::TAG_EIG));
    let mut q = orthonormalize(DMatrix::from_fn(p, nb, |_, _| r.sample::<f64, _>(StandardNormal)));
    let apply_block = |q: &DMatrix<f64>| {
        let mut z = DMatrix::zeros(p, nb);
        for j in 0..nb {
            z.set_column(j, &op.apply(&q.column(j).into_owned()));
        }
        z
    };
    let mut last: Option<(Vec<f64>, DVector<f64>, f64)> = None;
    for it in 1..=cfg.max_iter {
        let z = apply_block(&q);
        let h = q.tr_mul(&z);
        let mut eig: Vec<num_complex::Complex64> = h.complex_eigenvalues().iter().copied().collect();
        eig.sort_by(|a, b| b.re.total_cmp(&a.re));
        let hnorm = h.norm().max(1.0);
        let invariant = (&z - &q * &h).norm() <= cfg.tol * hnorm;
        let complex_top = eig[..num].iter().any(|e| e.im.abs() > 1e-8 * e.norm().max(1.0));
        if complex_top && (invariant || it == cfg.max_iter) {
            return Err(Error::numerical(format!(
                "leading eigenvalues form a complex pair ({:.6} {:+.6}i)",
                eig[0].re, eig[0].im
            )));
        }
        if !complex_top {
            let vals: Vec<f64> = eig[..num].iter().map(|e| e.re).collect();
            let mut all_ok = true;
            let mut lead: Option<(DVector<f64>, f64)> = None;
            for (i, &theta) in vals.iter().enumerate() {
                let mut shifted = h.clone();
                for d in 0..nb {
                    shifted[(d, d)] -= theta;
                }
                let svd = shifted.svd(false, true);
                let vt = svd.v_t.expect("requested right vectors");
                let s = vt.row(svd.singular_values.imin()).transpose();
                let u = &q * &s;
                let res = (&z * &s - &u * theta).norm() / u.norm();
                all_ok &= res <= cfg.tol;
                if i == 0 {
                    lead = Some((u, res));
                }
            }
            let (u, res) = lead.expect("num >= 1");
            last = Some((vals, u, res));
            if all_ok {
                let (vals, u, _) = last.take().expect("just set");
                let v = normalize_to_p(u);
                let res = residual(op, vals[0], &v);
                return Ok(SpectralResult {
                    eigenvalues: vals,
                    eigenvector: v,
                    overlap_sq: None,
                    residual: res,
                    iters: it,
                    converged: res <= cfg.tol,
                    method: SolveMethod::General,
                });
            }
        }
        let mut next = z;
        next += &q * sigma;
        q = orthonormalize(next);
    }
    let (vals, u, _) = last.ok_or_else(|| Error::numerical("block iteration produced no real Ritz pair"))?;
    let v = normalize_to_p(u);
    let res = residual(op, vals[0], &v);
    Ok(SpectralResult {
        eigenvalues: vals,
        eigenvector: v,
        overlap_sq: None,
        residual: res,
        iters: cfg.max_iter,
        converged: false,
        method: SolveMethod::General,
    })
}

/// Builds the model-appropriate LAMP operator, takes its top two
/// eigenpairs and records the overlap with the planted spike.
pub fn lamp_estimate(
    instance: &SpikedInstance,
    gm: &GenerativeModel,
    coeffs: &LampCoeffs,
    cfg: &EigConfig,
) -> Result<SpectralResult> {
    let op = match instance.model {
        ObservationModel::Wigner => build_lamp_wigner(instance, gm, coeffs)?,
        ObservationModel::Wishart { .. } => build_lamp_wishart(instance, gm, coeffs)?,
    };
    let mut res = leading_eigs(&op, 2, cfg)?;
    res.set_truth(&instance.truth.v);
    Ok(res)
}

/// Top eigenpair of `Y / sqrt(p)` (symmetric) or of `Y^T Y / p` (rectangular).
pub fn pca_estimate(instance: &SpikedInstance, cfg: &EigConfig) -> Result<SpectralResult> {
    let op = pca_operator(instance)?;
    let mut res = leading_eigs(&op, 2.min(op.p), cfg)?;
    res.set_truth(&instance.truth.v);
    Ok(res)
}
