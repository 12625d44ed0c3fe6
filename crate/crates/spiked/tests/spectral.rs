use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use spiked::priors::*;
use spiked::rmt::{base_law, epsilon_overlap, solve_s_edge, RmtModel};
use spiked::spectral::*;
use spiked::state_evolution::{delta_c_closed_form, se_fixed_point, SeConfig, SeModel};
use spiked::Error;

fn wigner_problem(p: usize, alpha: f64, act: Activation, delta: f64, seed: u64) -> (GenerativeModel, SpikedInstance) {
    let k = (p as f64 / alpha).round() as usize;
    let gm = GenerativeModel::sample(p, k, LatentPrior::standard_gauss(), act, seed).unwrap();
    let inst = spiked_wigner(&gm, delta, seed).unwrap();
    (gm, inst)
}

fn random_vector(n: usize, seed: u64) -> DVector<f64> {
    spiked::priors::sample_prior_vector(&LatentPrior::standard_gauss(), n, seed)
}

fn lamp(inst: &SpikedInstance, gm: &GenerativeModel, seed: u64) -> SpectralResult {
    let coeffs = lamp_coefficients(gm.act, &gm.latent, None).unwrap();
    lamp_estimate(inst, gm, &coeffs, &EigConfig { seed, ..EigConfig::default() }).unwrap()
}

#[test]
fn coefficients_for_supported_channels() {
    let g = LatentPrior::standard_gauss();
    let c = lamp_coefficients(Activation::LINEAR, &g, None).unwrap();
    assert!((c.a - 1.0).abs() < 1e-12 && (c.b - 1.0).abs() < 1e-12 && c.c == 0.0 && c.d.is_none());
    let c = lamp_coefficients(Activation::SIGN, &g, None).unwrap();
    assert!((c.a - 1.0).abs() < 1e-12 && (c.b - 2.0 / PI).abs() < 1e-12 && c.c == 0.0);
    let c = lamp_coefficients(Activation::SIGN, &g, Some(&g)).unwrap();
    assert!((c.a - 1.0).abs() < 1e-12 && (c.b - 2.0 / PI).abs() < 1e-12 && c.c == 0.0);
    assert_eq!(c.d, Some(1.0));
    // b scales as E[vx]^2 / rho_z: linear with rho_z = 2 gives a = 2, b = 2
    let c = lamp_coefficients(Activation::LINEAR, &LatentPrior::gauss(2.0).unwrap(), None).unwrap();
    assert!((c.a - 2.0).abs() < 1e-12 && (c.b - 2.0).abs() < 1e-12);
    assert!(lamp_coefficients(Activation::RELU, &g, None).is_err());
}

#[test]
fn linear_preconditioner_is_the_weight_covariance() {
    let (gm, inst) = wigner_problem(120, 2.0, Activation::LINEAR, 1.0, 1);
    let coeffs = lamp_coefficients(gm.act, &gm.latent, None).unwrap();
    let op = build_lamp_wigner(&inst, &gm, &coeffs).unwrap();
    let k = gm.k as f64;
    let expected = &gm.w * gm.w.transpose() / k;
    let got = op.preconditioner_dense().unwrap();
    assert!((got - &expected).amax() < 1e-12);
    assert!(expected.symmetric_eigenvalues().iter().all(|&e| e > -1e-10));
}

fn check_dual_path(op: &LampOperator, seed: u64) {
    let dense = op.dense().unwrap();
    for s in 0..3 {
        let x = random_vector(op.dim(), seed + s);
        let a = op.apply(&x);
        let b = &dense * &x;
        let scale = a.amax().max(1.0);
        assert!((a - b).amax() <= 1e-10 * scale);
    }
}

#[test]
fn applicator_matches_dense_assembly() {
    let (gm, inst) = wigner_problem(300, 2.0, Activation::SIGN, 1.3, 2);
    let coeffs = lamp_coefficients(gm.act, &gm.latent, None).unwrap();
    check_dual_path(&build_lamp_wigner(&inst, &gm, &coeffs).unwrap(), 10);

    let pu = LatentPrior::standard_gauss();
    let inst_w = spiked_wishart(&gm, &pu, 0.7, 1.1, 3).unwrap();
    let coeffs_w = lamp_coefficients(gm.act, &gm.latent, Some(&pu)).unwrap();
    check_dual_path(&build_lamp_wishart(&inst_w, &gm, &coeffs_w).unwrap(), 20);

    let sigma = &gm.w * gm.w.transpose() / gm.k as f64;
    check_dual_path(&build_cov_lamp(&inst.y, &sigma, 1.3).unwrap(), 30);
}

#[test]
fn dense_assembly_is_capped() {
    let (gm, inst) = wigner_problem(4002, 2.0, Activation::LINEAR, 1.0, 4);
    let coeffs = lamp_coefficients(gm.act, &gm.latent, None).unwrap();
    let op = build_lamp_wigner(&inst, &gm, &coeffs).unwrap();
    assert!(op.dense().is_err());
}

#[test]
fn dimension_mismatch_is_reported() {
    let (gm, inst) = wigner_problem(100, 2.0, Activation::LINEAR, 1.0, 5);
    let (gm_small, _) = wigner_problem(80, 2.0, Activation::LINEAR, 1.0, 5);
    let coeffs = lamp_coefficients(gm.act, &gm.latent, None).unwrap();
    assert!(matches!(build_lamp_wigner(&inst, &gm_small, &coeffs), Err(Error::DimensionMismatch(_))));
    let pu = LatentPrior::standard_gauss();
    let inst_w = spiked_wishart(&gm, &pu, 1.0, 1.0, 5).unwrap();
    let coeffs_w = lamp_coefficients(gm.act, &gm.latent, Some(&pu)).unwrap();
    assert!(matches!(build_lamp_wishart(&inst_w, &gm_small, &coeffs_w), Err(Error::DimensionMismatch(_))));
    // square operator needs the square model and vice versa
    assert!(build_lamp_wishart(&inst, &gm, &coeffs_w).is_err());
    assert!(build_lamp_wishart(&inst_w, &gm, &coeffs).is_err());
    let bad_sigma = DMatrix::<f64>::identity(80, 80);
    assert!(matches!(build_cov_lamp(&inst.y, &bad_sigma, 1.0), Err(Error::DimensionMismatch(_))));
}

#[test]
fn leading_eigenvalues_match_dense_spectrum() {
    for act in [Activation::LINEAR, Activation::SIGN] {
        let (gm, inst) = wigner_problem(300, 2.0, act, 1.0, 6);
        let coeffs = lamp_coefficients(gm.act, &gm.latent, None).unwrap();
        let op = build_lamp_wigner(&inst, &gm, &coeffs).unwrap();
        let mut eig: Vec<f64> = op.dense().unwrap().complex_eigenvalues().iter().map(|z| z.re).collect();
        eig.sort_by(|a, b| b.partial_cmp(a).unwrap());
        let res = leading_eigs(&op, 2, &EigConfig::default()).unwrap();
        assert!(res.converged);
        assert!((res.eigenvalues[0] - eig[0]).abs() < 1e-8, "{} {} vs {}", act.name(), res.eigenvalues[0], eig[0]);
        assert!((res.eigenvalues[1] - eig[1]).abs() < 1e-8, "{} {} vs {}", act.name(), res.eigenvalues[1], eig[1]);
        assert!(res.eigenvalues[0] >= res.eigenvalues[1]);
        assert!((res.eigenvector.norm_squared() - 300.0).abs() < 1e-8 * 300.0);
        let r = (op.apply(&res.eigenvector) - &res.eigenvector * res.eigenvalues[0]).norm() / res.eigenvector.norm();
        assert!(r <= 1e-8, "residual {r}");
        assert!(res.residual <= 1e-8);
    }
}

#[test]
fn lamp_at_critical_noise_has_unit_top_eigenvalue() {
    let (gm, inst) = wigner_problem(4000, 2.0, Activation::LINEAR, 3.0, 7);
    let res = lamp(&inst, &gm, 7);
    assert!((res.eigenvalues[0] - 1.0).abs() <= 0.05, "lambda_1 = {}", res.eigenvalues[0]);
}

#[test]
fn lamp_spectrum_matches_random_matrix_predictions() {
    let alpha = 2.0;
    let (gm, inst) = wigner_problem(4000, alpha, Activation::LINEAR, 2.0, 8);
    let res = lamp(&inst, &gm, 8);
    let edge = solve_s_edge(&base_law(RmtModel::Wigner, 2.0).unwrap(), alpha).unwrap();
    assert!((res.eigenvalues[0] - 1.0).abs() <= 0.05, "lambda_1 = {}", res.eigenvalues[0]);
    assert!((res.eigenvalues[1] - edge.lambda_max).abs() <= 0.05, "lambda_2 = {} edge {}", res.eigenvalues[1], edge.lambda_max);
    let eps = epsilon_overlap(alpha, 2.0).unwrap();
    let ov = res.overlap_sq.unwrap();
    assert!(ov >= 0.9 * eps - 0.05, "overlap {ov} vs {eps}");
    assert!(res.residual <= 1e-8);
}

// single-seed overlaps scatter by +-0.1 at p = 4000 (they follow the realized |v*|^2 / p)
#[test]
fn mean_lamp_overlap_matches_random_matrix_prediction() {
    let seeds = 6u64;
    for delta in [1.0, 2.0] {
        let mut mean = 0.0;
        for seed in 0..seeds {
            let (gm, inst) = wigner_problem(4000, 2.0, Activation::LINEAR, delta, 100 + seed);
            mean += lamp(&inst, &gm, seed).overlap_sq.unwrap() / seeds as f64;
        }
        let eps = epsilon_overlap(2.0, delta).unwrap();
        assert!((mean - eps).abs() <= 0.05, "delta {delta}: mean {mean} vs {eps}");
    }
}

#[test]
fn no_outlier_far_above_threshold() {
    let (gm, inst) = wigner_problem(4000, 2.0, Activation::LINEAR, 6.0, 9);
    let res = lamp(&inst, &gm, 9);
    assert!(res.eigenvalues[0] - res.eigenvalues[1] <= 0.02, "{:?}", res.eigenvalues);
    let edge = solve_s_edge(&base_law(RmtModel::Wigner, 6.0).unwrap(), 2.0).unwrap();
    assert!((res.eigenvalues[0] - edge.lambda_max).abs() <= 0.05);
}

fn mean_overlap(p: usize, delta: f64, seeds: std::ops::Range<u64>) -> f64 {
    let n = (seeds.end - seeds.start) as f64;
    seeds
        .map(|seed| {
            let (gm, inst) = wigner_problem(p, 2.0, Activation::LINEAR, delta, seed);
            lamp(&inst, &gm, seed).overlap_sq.unwrap()
        })
        .sum::<f64>()
        / n
}

#[test]
fn overlap_decays_with_dimension_above_threshold() {
    let dc = 3.0;
    let small = mean_overlap(1000, 1.5 * dc, 200..220);
    let large = mean_overlap(4000, 1.5 * dc, 200..205);
    // O(1/p): a fourfold increase in p must at least halve the mean overlap
    assert!(large <= 0.5 * small, "p=1000: {small}, p=4000: {large}");
    assert!(large <= 0.1, "{large}");
}

#[test]
fn overlap_persists_below_threshold() {
    let dc = 3.0;
    for (delta, seed) in [(0.5 * dc, 12u64), (0.8 * dc, 13)] {
        let (gm, inst) = wigner_problem(4000, 2.0, Activation::LINEAR, delta, seed);
        let ov = lamp(&inst, &gm, seed).overlap_sq.unwrap();
        assert!(ov >= 0.1, "delta {delta}: {ov}");
    }
}

#[test]
fn wishart_lamp_separates_below_threshold() {
    let pu = LatentPrior::standard_gauss();
    let model = SeModel::Wishart { beta: 1.0, prior_u: pu };
    let dc = delta_c_closed_form(2.0, Activation::LINEAR, &model).unwrap();
    let k = 1000;
    let gm = GenerativeModel::sample(2000, k, LatentPrior::standard_gauss(), Activation::LINEAR, 14).unwrap();
    let inst = spiked_wishart(&gm, &pu, 1.0, 0.5 * dc, 14).unwrap();
    let coeffs = lamp_coefficients(gm.act, &gm.latent, Some(&pu)).unwrap();
    let op = build_lamp_wishart(&inst, &gm, &coeffs).unwrap();
    let res = leading_eigs(&op, 2, &EigConfig::default()).unwrap();
    assert!(res.eigenvalues[0] - res.eigenvalues[1] > 0.05, "{:?}", res.eigenvalues);
    assert!(res.residual <= 1e-8);
}

#[test]
fn identity_covariance_reduces_to_pca() {
    let (gm, inst) = wigner_problem(400, 2.0, Activation::LINEAR, 0.5, 15);
    let _ = gm;
    let eye = DMatrix::identity(400, 400);
    let op = build_cov_lamp(&inst.y, &eye, 0.5).unwrap();
    let cov = leading_eigs(&op, 2, &EigConfig::default()).unwrap();
    let pca = pca_estimate(&inst, &EigConfig::default()).unwrap();
    let cos = cov.eigenvector.dot(&pca.eigenvector).abs() / 400.0;
    assert!((cos - 1.0).abs() < 1e-8, "cos {cos}");
}

#[test]
fn non_symmetric_covariance_is_rejected() {
    let (_, inst) = wigner_problem(50, 2.0, Activation::LINEAR, 1.0, 16);
    let mut s = DMatrix::<f64>::identity(50, 50);
    s[(0, 1)] = 0.3;
    assert!(matches!(build_cov_lamp(&inst.y, &s, 1.0), Err(Error::InvalidArgument(_))));
}

#[test]
fn estimated_covariance_matches_oracle_preconditioner() {
    let p = 100;
    let (gm, inst) = wigner_problem(p, 2.0, Activation::LINEAR, 0.8, 17);
    let samples = sample_spikes(&gm, 10_000, 17);
    assert_eq!(samples.shape(), (10_000, p));
    let sigma = empirical_second_moment(&samples);
    let op = build_cov_lamp(&inst.y, &sigma, 0.8).unwrap();
    let mut est = leading_eigs(&op, 2, &EigConfig::default()).unwrap();
    est.set_truth(&inst.truth.v);
    let oracle = lamp(&inst, &gm, 1);
    let (a, b) = (est.overlap_sq.unwrap(), oracle.overlap_sq.unwrap());
    assert!((a - b).abs() <= 0.05, "estimated {a} oracle {b}");
}

#[test]
fn pca_threshold_at_unit_signal_to_noise() {
    let p = 4000;
    let (_, inst) = wigner_problem(p, 2.0, Activation::LINEAR, 0.5, 18);
    let below = pca_estimate(&inst, &EigConfig::default()).unwrap();
    assert!(below.overlap_sq.unwrap() > 0.05, "{}", below.overlap_sq.unwrap());
    // E[p overlap] grows like (1 - 1/delta)^-2 near the threshold; take delta well above it
    let seeds = 10u64;
    let mut mean = 0.0;
    for seed in 0..seeds {
        let (_, inst) = wigner_problem(p, 2.0, Activation::LINEAR, 10.0, 400 + seed);
        mean += pca_estimate(&inst, &EigConfig::default()).unwrap().overlap_sq.unwrap() / seeds as f64;
    }
    assert!(mean <= 3.0 / p as f64, "{mean}");
}

#[test]
fn noiseless_pca_recovers_the_spike() {
    let p = 500;
    let gm = GenerativeModel::sample(p, 250, LatentPrior::standard_gauss(), Activation::SIGN, 20).unwrap();
    let (_, v) = generate_spike(&gm, 20);
    let y = &v * v.transpose() / (p as f64).sqrt();
    let inst = SpikedInstance { model: ObservationModel::Wigner, y, delta: 0.0, truth: Truth { v, z: None, u: None } };
    let res = pca_estimate(&inst, &EigConfig::default()).unwrap();
    assert!(res.overlap_sq.unwrap() >= 1.0 - 1.0 / p as f64);
}

#[test]
fn wishart_pca_uses_right_singular_vector() {
    let gm = GenerativeModel::sample(600, 300, LatentPrior::standard_gauss(), Activation::SIGN, 21).unwrap();
    let inst = spiked_wishart(&gm, &LatentPrior::standard_gauss(), 1.5, 0.2, 21).unwrap();
    let res = pca_estimate(&inst, &EigConfig::default()).unwrap();
    let svd = inst.y.clone().svd(false, true);
    let i = svd.singular_values.imax();
    let top = svd.v_t.unwrap().row(i).transpose();
    let cos = res.eigenvector.dot(&top).abs() / (600f64).sqrt();
    assert!((cos - 1.0).abs() < 1e-8);
    assert!((res.eigenvalues[0] - svd.singular_values[i].powi(2) / 600.0).abs() < 1e-8 * res.eigenvalues[0]);
}

#[test]
fn estimates_are_deterministic() {
    let (gm, inst) = wigner_problem(300, 2.0, Activation::SIGN, 1.0, 22);
    let a = pca_estimate(&inst, &EigConfig::default()).unwrap();
    let b = pca_estimate(&inst, &EigConfig::default()).unwrap();
    assert_eq!(a.eigenvector, b.eigenvector);
    let c = lamp(&inst, &gm, 3);
    let d = lamp(&inst, &gm, 3);
    assert_eq!(c.eigenvector, d.eigenvector);
    assert_eq!(c.eigenvalues, d.eigenvalues);
}

#[test]
fn complex_leading_pair_is_reported() {
    // Sigma D with Sigma = [[0,1],[1,0]] and D = diag(1,-1) has eigenvalues +-i
    let y = DMatrix::from_row_slice(2, 2, &[2.0 * 2f64.sqrt(), 0.0, 0.0, 0.0]);
    let sigma = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
    let op = build_cov_lamp(&y, &sigma, 1.0).unwrap();
    let err = leading_eigs(&op, 1, &EigConfig::default()).unwrap_err();
    assert!(matches!(err, Error::Numerical(ref m) if m.contains("complex")), "{err}");
}

#[test]
fn indefinite_covariance_uses_general_iteration() {
    let (_, inst) = wigner_problem(200, 2.0, Activation::LINEAR, 0.5, 23);
    // symmetric, indefinite, real leading eigenvalue
    let mut sigma = DMatrix::<f64>::identity(200, 200);
    sigma[(199, 199)] = -0.5;
    let op = build_cov_lamp(&inst.y, &sigma, 0.5).unwrap();
    let res = leading_eigs(&op, 2, &EigConfig::default()).unwrap();
    let mut eig: Vec<f64> = op.dense().unwrap().complex_eigenvalues().iter().map(|z| z.re).collect();
    eig.sort_by(|a, b| b.partial_cmp(a).unwrap());
    assert!((res.eigenvalues[0] - eig[0]).abs() < 1e-7, "{} vs {}", res.eigenvalues[0], eig[0]);
    assert!((res.eigenvalues[1] - eig[1]).abs() < 1e-7, "{} vs {}", res.eigenvalues[1], eig[1]);
    assert!(res.residual <= 1e-8);
}

#[test]
fn lamp_beats_pca_on_average() {
    let seeds = 10u64;
    for act in [Activation::LINEAR, Activation::SIGN] {
        let dc = delta_c_closed_form(2.0, act, &SeModel::Wigner).unwrap();
        for frac in [0.2, 0.6, 1.0] {
            let (mut lamp_ov, mut pca_ov) = (0.0, 0.0);
            for seed in 0..seeds {
                let (gm, inst) = wigner_problem(4000, 2.0, act, frac * dc, 300 + seed);
                lamp_ov += lamp(&inst, &gm, seed).overlap_sq.unwrap() / seeds as f64;
                pca_ov += pca_estimate(&inst, &EigConfig { seed, ..EigConfig::default() }).unwrap().overlap_sq.unwrap() / seeds as f64;
            }
            assert!(lamp_ov >= pca_ov - 0.02, "{} {frac}: lamp {lamp_ov} pca {pca_ov}", act.name());
        }
    }
}

#[test]
fn normalized_lamp_error_follows_fixed_point_overlap() {
    for delta in [1.0, 2.0] {
        let q = se_fixed_point(&SeConfig::default(), delta, 2.0, Activation::LINEAR, &LatentPrior::standard_gauss(), &SeModel::Wigner)
            .unwrap()
            .preferred()
            .q_v_star;
        let predicted = 1.0 + 1.0 - 2.0 * q.sqrt();
        let seeds = 3u64;
        let mut mse = 0.0;
        for seed in 0..seeds {
            let (gm, inst) = wigner_problem(10_000, 2.0, Activation::LINEAR, delta, 500 + seed);
            mse += lamp(&inst, &gm, seed).mse(&inst.truth.v) / seeds as f64;
        }
        assert!((mse - predicted).abs() <= 0.05, "delta {delta}: mse {mse} predicted {predicted}");
    }
}
