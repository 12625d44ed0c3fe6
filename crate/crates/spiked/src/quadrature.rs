//! Gauss–Hermite / Gauss–Legendre rules, Gaussian-expectation rules and an
//! adaptive Gauss–Kronrod integrator.

use std::f64::consts::PI;
use std::ops::{Add, Mul, Sub};

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;

/// Gauss–Hermite rule for the weight `exp(-t^2)`.
#[derive(Clone, Debug)]
pub struct QuadGrid {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
    pub order: usize,
}

impl QuadGrid {
    /// Nodes from the eigenvalues of the Jacobi matrix, polished by Newton
    /// steps on the normalized Hermite recurrence (which also gives the weights).
    pub fn hermite(order: usize) -> Self {
        assert!(order >= 1, "quadrature order must be positive");
        let n = order;
        let jacobi = DMatrix::from_fn(n, n, |i, j| {
            if i + 1 == j || j + 1 == i {
                (i.max(j) as f64 / 2.0).sqrt()
            } else {
                0.0
            }
        });
        let mut guess: Vec<f64> = SymmetricEigen::new(jacobi).eigenvalues.iter().copied().collect();
        guess.sort_by(f64::total_cmp);
        let pim4 = PI.powf(-0.25);
        let nf = n as f64;
        let mut nodes = Vec::with_capacity(n);
        let mut weights = Vec::with_capacity(n);
        for (i, &g) in guess.iter().enumerate() {
            // symmetric rule: polish the non-negative half and mirror
            let mut z = if i < n / 2 { -guess[n - 1 - i] } else { g };
            if n % 2 == 1 && i == n / 2 {
                z = 0.0;
            }
            for _ in 0..8 {
                let (p1, p2) = hermite_pair(n, z, pim4);
                let step = p1 / ((2.0 * nf).sqrt() * p2);
                z -= step;
                if step.abs() <= 1e-16 * z.abs().max(1.0) {
                    break;
                }
            }
            let pp = (2.0 * nf).sqrt() * hermite_pair(n, z, pim4).1;
            nodes.push(z);
            weights.push(2.0 / (pp * pp));
        }
        for i in 0..n / 2 {
            nodes[i] = -nodes[n - 1 - i];
            weights[i] = weights[n - 1 - i];
        }
        QuadGrid { nodes, weights, order: n }
    }

    /// Same rule rescaled for expectations over a standard normal:
    /// `E f(xi) ≈ sum w_i f(x_i)`.
    pub fn gaussian(&self) -> GaussRule {
        let s = PI.sqrt();
        let pts = self
            .nodes
            .iter()
            .zip(&self.weights)
            .map(|(t, w)| (std::f64::consts::SQRT_2 * t, w / s))
            .collect();
        GaussRule { points: pts }
    }
}

fn hermite_pair(n: usize, z: f64, p0: f64) -> (f64, f64) {
    let mut p1 = p0;
    let mut p2 = 0.0;
    for j in 1..=n {
        let p3 = p2;
        p2 = p1;
        let jf = j as f64;
        p1 = z * (2.0 / jf).sqrt() * p2 - ((jf - 1.0) / jf).sqrt() * p3;
    }
    (p1, p2)
}

/// Expectation rule over N(0,1): pairs `(node, weight)`.
#[derive(Clone, Debug)]
pub struct GaussRule {
    pub points: Vec<(f64, f64)>,
}

impl GaussRule {
    pub fn hermite(order: usize) -> Self {
        QuadGrid::hermite(order).gaussian()
    }

    pub fn single_point() -> Self {
        GaussRule { points: vec![(0.0, 1.0)] }
    }

    pub fn expect(&self, mut f: impl FnMut(f64) -> f64) -> f64 {
        self.points.iter().map(|&(x, w)| w * f(x)).sum()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Composite Gauss–Legendre rule for N(0,1) expectations with panels
    /// that shrink geometrically towards 0, down to width `scale`.
    /// Meant for integrands with a kink or a sharp step of width `scale` at the origin.
    pub fn graded(scale: f64, panel_order: usize, cutoff: f64) -> Self {
        let scale = scale.clamp(1e-300, 1.0);
        let gl = legendre(panel_order);
        let mut breaks = vec![0.0];
        let mut b = scale;
        while b < cutoff {
            breaks.push(b);
            b *= 2.0;
        }
        breaks.push(cutoff);
        let norm = 1.0 / (2.0 * PI).sqrt();
        let mut pts = Vec::with_capacity(2 * (breaks.len() - 1) * panel_order);
        for win in breaks.windows(2) {
            let (lo, hi) = (win[0], win[1]);
            let half = 0.5 * (hi - lo);
            let mid = 0.5 * (hi + lo);
            for (t, w) in gl.iter() {
                let x = mid + half * t;
                let wt = w * half * norm * (-0.5 * x * x).exp();
                pts.push((x, wt));
                pts.push((-x, wt));
            }
        }
        GaussRule { points: pts }
    }
}

impl GaussRule {
    /// Composite Gauss–Legendre rule for N(0,1) expectations on `[-cutoff, cutoff]`
    /// with panels of (at most) `width`.
    pub fn uniform_panels(width: f64, panel_order: usize, cutoff: f64) -> Self {
        let gl = legendre(panel_order);
        let panels = (2.0 * cutoff / width).ceil().max(1.0) as usize;
        let h = 2.0 * cutoff / panels as f64;
        let norm = 1.0 / (2.0 * PI).sqrt();
        let mut pts = Vec::with_capacity(panels * panel_order);
        for i in 0..panels {
            let mid = -cutoff + (i as f64 + 0.5) * h;
            for (t, w) in gl.iter() {
                let x = mid + 0.5 * h * t;
                pts.push((x, w * 0.5 * h * norm * (-0.5 * x * x).exp()));
            }
        }
        GaussRule { points: pts }
    }
}

/// Gauss–Legendre nodes/weights on [-1, 1].
pub fn legendre(n: usize) -> Vec<(f64, f64)> {
    assert!(n >= 1);
    let mut out = vec![(0.0, 0.0); n];
    let m = n.div_ceil(2);
    let nf = n as f64;
    for i in 0..m {
        let mut z = (PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
        for _ in 0..100 {
            let (p1, p2) = legendre_pair(n, z);
            let z1 = z;
            z = z1 - p1 / (nf * (z * p1 - p2) / (z * z - 1.0));
            if (z - z1).abs() < 1e-16 {
                break;
            }
        }
        let (p1, p2) = legendre_pair(n, z);
        let pp = nf * (z * p1 - p2) / (z * z - 1.0);
        let w = 2.0 / ((1.0 - z * z) * pp * pp);
        out[i] = (-z, w);
        out[n - 1 - i] = (z, w);
    }
    out
}

fn legendre_pair(n: usize, z: f64) -> (f64, f64) {
    let mut p1 = 1.0;
    let mut p2 = 0.0;
    for j in 1..=n {
        let p3 = p2;
        p2 = p1;
        let jf = j as f64;
        p1 = ((2.0 * jf - 1.0) * z * p2 - (jf - 1.0) * p3) / jf;
    }
    (p1, p2)
}

/// Values the adaptive integrator can accumulate.
pub trait QuadValue: Copy + Add<Output = Self> + Sub<Output = Self> + Mul<f64, Output = Self> {
    fn zero() -> Self;
    fn magnitude(self) -> f64;
}

impl QuadValue for f64 {
    fn zero() -> Self {
        0.0
    }
    fn magnitude(self) -> f64 {
        self.abs()
    }
}

impl QuadValue for Complex64 {
    fn zero() -> Self {
        Complex64::new(0.0, 0.0)
    }
    fn magnitude(self) -> f64 {
        self.norm()
    }
}

const XGK: [f64; 8] = [
    0.991_455_371_120_812_639_206_854_697_526_329,
    0.949_107_912_342_758_524_526_189_684_047_851,
    0.864_864_423_359_769_072_789_712_788_640_926,
    0.741_531_185_599_394_439_863_864_773_280_788,
    0.586_087_235_467_691_130_294_144_845_693_013,
    0.405_845_151_377_397_166_906_606_412_076_961,
    0.207_784_955_007_898_467_600_689_403_773_245,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_224_963_732_008_058_970,
    0.063_092_092_629_978_553_290_700_663_189_204,
    0.104_790_010_322_250_183_839_876_322_541_518,
    0.140_653_259_715_525_918_745_189_590_510_238,
    0.169_004_726_639_267_902_826_583_426_598_550,
    0.190_350_578_064_785_409_913_256_402_421_014,
    0.204_432_940_075_298_892_414_161_999_234_649,
    0.209_482_141_084_727_828_012_999_174_891_714,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_693_270_611_432_679_082,
    0.279_705_391_489_276_667_901_467_771_423_780,
    0.381_830_050_505_118_944_950_369_775_488_975,
    0.417_959_183_673_469_387_755_102_040_816_327,
];

fn gk15<T: QuadValue>(f: &mut impl FnMut(f64) -> T, a: f64, b: f64) -> (T, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kron = fc * WGK[7];
    let mut gauss = fc * WG[3];
    for j in 0..7 {
        let dx = h * XGK[j];
        let s = f(c - dx) + f(c + dx);
        kron = kron + s * WGK[j];
        if j % 2 == 1 {
            gauss = gauss + s * WG[j / 2];
        }
    }
    let kron = kron * h;
    let gauss = gauss * h;
    (kron, (kron - gauss).magnitude())
}

/// Adaptive G7/K15 integration of `f` over `[a, b]` (finite). Returns the
/// estimate and the summed error estimate.
pub fn integrate<T: QuadValue>(
    mut f: impl FnMut(f64) -> T,
    a: f64,
    b: f64,
    abs_tol: f64,
    rel_tol: f64,
) -> (T, f64) {
    const MAX_SEGMENTS: usize = 2000;
    let mut segs: Vec<(f64, f64, T, f64)> = Vec::new();
    let (v, e) = gk15(&mut f, a, b);
    segs.push((a, b, v, e));
    let mut total = v;
    let mut err = e;
    while err > abs_tol.max(rel_tol * total.magnitude()) && segs.len() < MAX_SEGMENTS {
        let (idx, _) = segs
            .iter()
            .enumerate()
            .max_by(|x, y| x.1 .3.total_cmp(&y.1 .3))
            .expect("non-empty");
        let (lo, hi, v0, e0) = segs.swap_remove(idx);
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            segs.push((lo, hi, v0, 0.0));
            err -= e0;
            continue;
        }
        let (v1, e1) = gk15(&mut f, lo, mid);
        let (v2, e2) = gk15(&mut f, mid, hi);
        total = total - v0 + v1 + v2;
        err += e1 + e2 - e0;
        segs.push((lo, mid, v1, e1));
        segs.push((mid, hi, v2, e2));
    }
    // re-sum to drop accumulated cancellation in the running total
    let mut sum = T::zero();
    let mut esum = 0.0;
    for s in &segs {
        sum = sum + s.2;
        esum += s.3;
    }
    (sum, esum)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hermite_weights_sum_to_sqrt_pi() {
        for n in [1, 2, 5, 16, 64, 128, 256] {
            let g = QuadGrid::hermite(n);
            let s: f64 = g.weights.iter().sum();
            assert!((s - PI.sqrt()).abs() < 1e-12, "n={n} sum={s}");
        }
    }

    #[test]
    fn hermite_integrates_gaussian_moments() {
        let r = GaussRule::hermite(64);
        // E xi^{2m} = (2m-1)!!
        let want = [1.0, 1.0, 3.0, 15.0, 105.0];
        for (m, w) in want.iter().enumerate() {
            let got = r.expect(|x| x.powi(2 * m as i32));
            assert!((got - w).abs() < 1e-10 * w, "m={m} got={got}");
        }
        assert!(r.expect(|x| x.powi(7)).abs() < 1e-10);
    }

    #[test]
    fn legendre_is_exact_for_polynomials() {
        let gl = legendre(16);
        let s: f64 = gl.iter().map(|(_, w)| w).sum();
        assert!((s - 2.0).abs() < 1e-14);
        let i8: f64 = gl.iter().map(|(x, w)| w * x.powi(8)).sum();
        assert!((i8 - 2.0 / 9.0).abs() < 1e-14);
    }

    #[test]
    fn graded_rule_handles_steps() {
        let r = GaussRule::graded(1e-3, 16, 12.0);
        assert!((r.expect(|_| 1.0) - 1.0).abs() < 1e-13);
        assert!((r.expect(|x| x * x) - 1.0).abs() < 1e-12);
        // E[1{xi > 0.3}] , a step off the origin
        let got = r.expect(|x| if x > 0.0 { 1.0 } else { 0.0 });
        assert!((got - 0.5).abs() < 1e-13);
    }

    #[test]
    fn adaptive_integrates_sqrt_singularity() {
        let (v, _) = integrate(|x: f64| (1.0 - x * x).max(0.0).sqrt(), -1.0, 1.0, 1e-12, 0.0);
        assert!((v - PI / 2.0).abs() < 1e-10, "{v}");
        let (c, _) = integrate(|x: f64| Complex64::new(x.cos(), x.sin()), 0.0, PI, 1e-13, 0.0);
        assert!((c - Complex64::new(0.0, 2.0)).norm() < 1e-12);
    }
}
