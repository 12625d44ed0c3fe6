use nalgebra::DVector;
use spiked::amp::*;
use spiked::priors::*;
use spiked::state_evolution::*;
use spiked::Error;

fn wigner_problem(k: usize, alpha: f64, act: Activation, delta: f64, seed: u64) -> (GenerativeModel, SpikedInstance) {
    let p = (alpha * k as f64).round() as usize;
    let gm = GenerativeModel::sample(p, k, LatentPrior::standard_gauss(), act, seed).unwrap();
    let inst = spiked_wigner(&gm, delta, seed).unwrap();
    (gm, inst)
}

fn wishart_problem(k: usize, alpha: f64, beta: f64, act: Activation, delta: f64, seed: u64) -> (GenerativeModel, SpikedInstance) {
    let p = (alpha * k as f64).round() as usize;
    let gm = GenerativeModel::sample(p, k, LatentPrior::standard_gauss(), act, seed).unwrap();
    let inst = spiked_wishart(&gm, &LatentPrior::standard_gauss(), beta, delta, seed).unwrap();
    (gm, inst)
}

fn critical(alpha: f64, act: Activation) -> f64 {
    delta_c_closed_form(alpha, act, &SeModel::Wigner).unwrap()
}

#[test]
fn align_and_mse_examples() {
    let v = DVector::from_vec(vec![1.0, -2.0, 0.5, 3.0]);
    let (mse, s) = align_and_mse(&(-&v), &v);
    assert_eq!(mse, 0.0);
    assert_eq!(s, -1.0);
    let (mse, s) = align_and_mse(&v, &v);
    assert_eq!((mse, s), (0.0, 1.0));

    let zero = DVector::zeros(4);
    let (mse, _) = align_and_mse(&zero, &v);
    assert!((mse - v.norm_squared() / 4.0).abs() < 1e-15);

    // orthogonal estimate: mse = |v*|^2/p + |v_hat|^2/p whatever the sign
    let w = DVector::from_vec(vec![2.0, 1.0, 0.0, 0.0]);
    assert_eq!(w.dot(&v), 0.0);
    let (mse, _) = align_and_mse(&w, &v);
    assert!((mse - (v.norm_squared() + w.norm_squared()) / 4.0).abs() < 1e-14);
}

#[test]
fn align_and_mse_random_orthogonal_estimate() {
    // v* with rho_v = 1, v_hat a random vector projected orthogonal to v*
    let gm = GenerativeModel::sample(4000, 2000, LatentPrior::standard_gauss(), Activation::SIGN, 3).unwrap();
    let (_, v) = generate_spike(&gm, 3);
    let (_, mut w) = generate_spike(&gm, 4);
    w -= &v * (w.dot(&v) / v.norm_squared());
    let p = v.len() as f64;
    let (mse, _) = align_and_mse(&w, &v);
    assert!((mse - (1.0 + w.norm_squared() / p)).abs() < 1e-12);
}

#[test]
fn zero_state_is_a_fixed_point_for_zero_mean_channels() {
    for act in [Activation::LINEAR, Activation::SIGN] {
        let (gm, inst) = wigner_problem(100, 2.0, act, 1.0, 11);
        let cfg = AmpConfig::default();
        let mut state = AmpStateWigner::zeros(gm.p, gm.k);
        for _ in 0..5 {
            state = amp_wigner_step(&state, &inst, &gm, &cfg).unwrap();
            assert!(state.v_hat.iter().all(|&x| x == 0.0), "{}", act.name());
            assert!(state.z_hat.iter().all(|&x| x == 0.0), "{}", act.name());
            assert!(state.c_v.iter().all(|&x| x >= 0.0));
            assert!(state.c_z.iter().all(|&x| x >= 0.0));
            assert!(state.v > 0.0);
        }
    }
}

#[test]
fn low_noise_overlap_rises_monotonically() {
    let (gm, inst) = wigner_problem(1000, 2.0, Activation::LINEAR, 0.1, 5);
    let cfg = AmpConfig { max_iter: 50, ..AmpConfig::default() };
    let res = amp_wigner_run(&inst, &gm, &cfg, 5).unwrap();
    let target = 0.9 * gm.rho_v();
    let q: Vec<f64> = res.overlap_trace.iter().map(|q| q.abs()).collect();
    let hit = q.iter().position(|&x| x > target).expect("overlap never exceeded 0.9 rho_v");
    assert!(hit <= 50, "reached target only at t={hit}");
    for t in 1..=hit {
        assert!(q[t] > q[t - 1], "overlap fell at t={t}: {} -> {}", q[t - 1], q[t]);
    }
}

const TRACK_START: f64 = 0.2;

/// Seed-averaged `|q_v^t|` over the first `steps` iterations, started on the
/// Nishimori line with overlap `TRACK_START`, and the largest gap to the SE
/// trajectory started from the averaged empirical first-iterate overlaps.
fn se_tracking_gap(k: usize, act: Activation, delta: f64, seeds: &[u64], steps: usize, onsager: bool) -> f64 {
    let alpha = 2.0;
    let lat = LatentPrior::standard_gauss();
    let mut q_v = vec![0.0; steps + 1];
    let (mut q_v1, mut q_z1) = (0.0, 0.0);
    for &seed in seeds {
        let (gm, inst) = wigner_problem(k, alpha, act, delta, seed);
        let start = AmpStateWigner::with_overlaps(&inst.truth.v, inst.truth.z.as_ref().unwrap(), TRACK_START, TRACK_START, 1.0, seed)
            .unwrap();
        let cfg = AmpConfig { max_iter: steps, tol: 1e-300, onsager, ..AmpConfig::default() };
        let res = amp_wigner_run_from(&inst, &gm, &cfg, start).unwrap();
        assert_eq!(res.overlap_trace.len(), steps + 1);
        for t in 0..=steps {
            q_v[t] += res.overlap_trace[t].abs() / seeds.len() as f64;
        }
        q_v1 += res.overlap_trace[0] / seeds.len() as f64;
        q_z1 += res.q_z_trace[0] / seeds.len() as f64;
    }
    let se = se_trajectory(&OverlapState::wigner(q_v1, q_z1, 0.0), steps, delta, alpha, act, &lat, &SeModel::Wigner).unwrap();
    (0..=steps).map(|t| (q_v[t] - se[t].q_v).abs()).fold(0.0, f64::max)
}

fn check_tracking(k: usize, seeds: &[u64]) {
    for act in [Activation::LINEAR, Activation::SIGN] {
        for frac in [0.5, 0.9] {
            let delta = frac * critical(2.0, act);
            let gap = se_tracking_gap(k, act, delta, seeds, 20, true);
            let tol = 5.0 / (k as f64).sqrt();
            assert!(gap <= tol, "k={k} {} delta={delta:.3}: gap {gap:.4} > {tol:.4}", act.name());
        }
    }
}

#[test]
fn overlaps_track_state_evolution() {
    check_tracking(1000, &[1, 2, 3, 4]);
    check_tracking(2000, &[5, 6, 7, 8]);
}

#[test]
fn overlaps_track_state_evolution_large() {
    check_tracking(5000, &[9, 10, 11]);
}

#[test]
fn removing_onsager_term_breaks_state_evolution() {
    let k = 2000;
    let act = Activation::LINEAR;
    let delta = 0.9 * critical(2.0, act);
    let seeds = [21, 22, 23, 24];
    let sigma = 1.0 / (k as f64).sqrt();
    let good = se_tracking_gap(k, act, delta, &seeds, 20, true);
    let bad = se_tracking_gap(k, act, delta, &seeds, 20, false);
    assert!(good <= 5.0 * sigma, "full AMP gap {good}");
    assert!(bad > 5.0 * sigma, "ablated AMP still tracks SE (gap {bad})");
}

#[test]
fn null_result_above_threshold() {
    for act in [Activation::LINEAR, Activation::SIGN] {
        let delta = 1.5 * critical(2.0, act);
        let (gm, inst) = wigner_problem(2000, 2.0, act, delta, 31);
        let cfg = AmpConfig { max_iter: 100, ..AmpConfig::default() };
        let res = amp_wigner_run(&inst, &gm, &cfg, 31).unwrap();
        let q = res.final_overlap();
        let bound = 3.0 / (gm.p as f64).sqrt();
        assert!(q.abs() <= bound, "{}: |q| = {} > {bound}", act.name(), q.abs());
    }
}

#[test]
fn nishimori_identity_at_fixed_point() {
    let k = 1000;
    for act in [Activation::LINEAR, Activation::SIGN] {
        let delta = 0.5 * critical(2.0, act);
        let (gm, inst) = wigner_problem(k, 2.0, act, delta, 41);
        let res = amp_wigner_run(&inst, &gm, &AmpConfig::default(), 41).unwrap();
        assert!(res.converged, "{} did not converge in {} iterations", act.name(), res.iters);
        let p = gm.p as f64;
        let m = res.v_hat.dot(&inst.truth.v).abs() / p;
        let q = res.v_hat.norm_squared() / p;
        assert!((m - q).abs() <= 5.0 / (k as f64).sqrt(), "{}: m={m} q={q}", act.name());
    }
}

#[test]
fn final_overlap_matches_state_evolution() {
    // linear, alpha = 2, Delta = 1.5, k = 5000, random start; seed-averaged
    let lat = LatentPrior::standard_gauss();
    let se = se_fixed_point(&SeConfig::default(), 1.5, 2.0, Activation::LINEAR, &lat, &SeModel::Wigner).unwrap();
    let q_se = se.preferred().q_v_star;
    let seeds = [51u64, 52, 53];
    let (mut q, mut mse) = (0.0, 0.0);
    for &seed in &seeds {
        let (gm, inst) = wigner_problem(5000, 2.0, Activation::LINEAR, 1.5, seed);
        let res = amp_wigner_run(&inst, &gm, &AmpConfig { max_iter: 150, ..AmpConfig::default() }, seed).unwrap();
        assert!(res.mse_v >= 0.0);
        q += res.final_overlap().abs() / seeds.len() as f64;
        mse += res.mse_v / seeds.len() as f64;
    }
    assert!((q - q_se).abs() <= 0.05, "amp {q} se {q_se}");
    assert!((mse - mmse(q_se, 1.0)).abs() <= 0.1, "mse {mse}");
}

#[test]
fn runs_are_deterministic() {
    let (gm, inst) = wigner_problem(300, 2.0, Activation::SIGN, 1.0, 61);
    let cfg = AmpConfig { max_iter: 30, ..AmpConfig::default() };
    let a = amp_wigner_run(&inst, &gm, &cfg, 8).unwrap();
    let b = amp_wigner_run(&inst, &gm, &cfg, 8).unwrap();
    assert_eq!(a.v_hat, b.v_hat);
    assert_eq!(a.z_hat, b.z_hat);
    assert_eq!(a.overlap_trace, b.overlap_trace);
    let c = amp_wigner_run(&inst, &gm, &cfg, 9).unwrap();
    assert_ne!(a.overlap_trace[0], c.overlap_trace[0]);
}

#[test]
fn permuting_coordinates_permutes_the_estimate() {
    let (gm, inst) = wigner_problem(200, 2.0, Activation::SIGN, 0.6, 71);
    let p = gm.p;
    let perm: Vec<usize> = (0..p).map(|i| (i * 37 + 11) % p).collect();
    let w_perm = gm.w.select_rows(perm.iter());
    let gm_perm = GenerativeModel::new(w_perm, gm.latent, gm.act).unwrap();
    let y_perm = inst.y.select_rows(perm.iter()).select_columns(perm.iter());
    let v_perm = DVector::from_iterator(p, perm.iter().map(|&i| inst.truth.v[i]));
    let inst_perm = SpikedInstance {
        y: y_perm,
        truth: Truth { v: v_perm, z: inst.truth.z.clone(), u: None },
        ..inst.clone()
    };
    let start = AmpStateWigner::random(p, gm.k, 1.0, 5);
    let mut start_perm = start.clone();
    start_perm.v_hat = DVector::from_iterator(p, perm.iter().map(|&i| start.v_hat[i]));
    let cfg = AmpConfig { max_iter: 40, ..AmpConfig::default() };
    let a = amp_wigner_run_from(&inst, &gm, &cfg, start).unwrap();
    let b = amp_wigner_run_from(&inst_perm, &gm_perm, &cfg, start_perm).unwrap();
    let scale = a.v_hat.amax();
    for (j, &i) in perm.iter().enumerate() {
        assert!((b.v_hat[j] - a.v_hat[i]).abs() <= 1e-10 * scale, "coordinate {i}");
    }
    for (x, y) in a.z_hat.iter().zip(b.z_hat.iter()) {
        assert!((x - y).abs() <= 1e-10 * a.z_hat.amax());
    }
}

#[test]
fn trace_csv_has_stable_header() {
    let (gm, inst) = wigner_problem(100, 2.0, Activation::LINEAR, 1.0, 81);
    let res = amp_wigner_run(&inst, &gm, &AmpConfig { max_iter: 3, ..AmpConfig::default() }, 1).unwrap();
    let mut buf = Vec::new();
    res.write_trace_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "t,q_v,q_z,mse_v");
    assert_eq!(lines.count(), res.overlap_trace.len());
}

#[test]
fn zero_noise_is_rejected() {
    let (gm, mut inst) = wigner_problem(50, 2.0, Activation::LINEAR, 1.0, 91);
    inst.delta = 0.0;
    assert!(matches!(amp_wigner_run(&inst, &gm, &AmpConfig::default(), 1), Err(Error::Domain(_))));

    let (gm, mut inst) = wishart_problem(50, 2.0, 1.0, Activation::LINEAR, 1.0, 91);
    inst.delta = 0.0;
    let pu = LatentPrior::standard_gauss();
    assert!(matches!(amp_wishart_run(&inst, &gm, &pu, &AmpConfig::default(), 1), Err(Error::Domain(_))));
}

#[test]
fn config_and_model_checks() {
    let (gm, inst) = wigner_problem(50, 2.0, Activation::LINEAR, 1.0, 92);
    for bad in [
        AmpConfig { tol: 0.0, ..AmpConfig::default() },
        AmpConfig { damping: 1.0, ..AmpConfig::default() },
        AmpConfig { init_sigma2: 0.0, ..AmpConfig::default() },
        AmpConfig { max_iter: 0, ..AmpConfig::default() },
    ] {
        assert!(amp_wigner_run(&inst, &gm, &bad, 1).is_err());
    }
    let pu = LatentPrior::standard_gauss();
    assert!(amp_wishart_run(&inst, &gm, &pu, &AmpConfig::default(), 1).is_err());
    let (gm2, _) = wigner_problem(40, 2.0, Activation::LINEAR, 1.0, 93);
    assert!(matches!(amp_wigner_run(&inst, &gm2, &AmpConfig::default(), 1), Err(Error::DimensionMismatch(_))));
}

#[test]
fn damping_keeps_the_fixed_point() {
    let (gm, inst) = wigner_problem(1000, 2.0, Activation::LINEAR, 1.0, 95);
    let plain = amp_wigner_run(&inst, &gm, &AmpConfig::default(), 2).unwrap();
    let damped = amp_wigner_run(&inst, &gm, &AmpConfig { damping: 0.2, ..AmpConfig::default() }, 2).unwrap();
    assert!(plain.converged && damped.converged);
    let (mse, _) = align_and_mse(&damped.v_hat, &plain.v_hat);
    assert!(mse < 1e-10, "fixed points differ: {mse}");
}

#[test]
fn wishart_low_noise_recovers_the_spike() {
    let (gm, inst) = wishart_problem(2000, 2.0, 1.0, Activation::LINEAR, 1e-2, 101);
    let pu = LatentPrior::standard_gauss();
    let res = amp_wishart_run(&inst, &gm, &pu, &AmpConfig::default(), 3).unwrap();
    assert!(res.mse_v <= 0.02, "mse_v {}", res.mse_v);
    assert!(res.u_hat.is_some());
    assert_eq!(res.q_u_trace.len(), res.overlap_trace.len());
}

#[test]
fn wishart_tracks_state_evolution() {
    let (alpha, beta, k, steps) = (2.0, 1.0, 2000usize, 20);
    let pu = LatentPrior::standard_gauss();
    let lat = LatentPrior::standard_gauss();
    let model = SeModel::Wishart { beta, prior_u: pu };
    let seeds = [111u64, 112, 113, 114];
    let m = seeds.len() as f64;
    for act in [Activation::LINEAR, Activation::SIGN] {
        let delta = 0.6 * delta_c_closed_form(alpha, act, &model).unwrap();
        let mut q_v = vec![0.0; steps + 1];
        let mut q_u = vec![0.0; steps + 1];
        let mut first = (0.0, 0.0, 0.0);
        for &seed in &seeds {
            let (gm, inst) = wishart_problem(k, alpha, beta, act, delta, seed);
            let t = &inst.truth;
            let start = AmpStateWishart::with_overlaps(
                t.u.as_ref().unwrap(),
                &t.v,
                t.z.as_ref().unwrap(),
                (TRACK_START, TRACK_START, TRACK_START),
                1.0,
                seed,
            )
            .unwrap();
            let cfg = AmpConfig { max_iter: steps, tol: 1e-300, ..AmpConfig::default() };
            let res = amp_wishart_run_from(&inst, &gm, &pu, &cfg, start).unwrap();
            for t in 0..=steps {
                q_v[t] += res.overlap_trace[t].abs() / m;
                q_u[t] += res.q_u_trace[t].abs() / m;
            }
            first.0 += res.q_u_trace[0] / m;
            first.1 += res.overlap_trace[0] / m;
            first.2 += res.q_z_trace[0] / m;
        }
        let start = OverlapState::wishart(first.0, first.1, first.2, 0.0);
        let se = se_trajectory(&start, steps, delta, alpha, act, &lat, &model).unwrap();
        let tol = 5.0 / (k as f64).sqrt();
        for t in 0..=steps {
            assert!((q_v[t] - se[t].q_v).abs() <= tol, "{} t={t}: {} vs {}", act.name(), q_v[t], se[t].q_v);
            assert!((q_u[t] - se[t].q_u.unwrap()).abs() <= tol, "{} t={t} (u): {} vs {:?}", act.name(), q_u[t], se[t].q_u);
        }
    }
}

/// A symmetric observation fed to the rectangular algorithm with n = p and a
/// tied start: the u-side uses a separable Gaussian prior, so the run follows
/// the beta = 1 rectangular state evolution rather than the square one.
#[test]
fn tied_symmetric_run_follows_rectangular_state_evolution() {
    let (alpha, k) = (2.0, 1000usize);
    let act = Activation::LINEAR;
    let delta = 1.0;
    let pu = LatentPrior::standard_gauss();
    let model = SeModel::Wishart { beta: 1.0, prior_u: pu };
    let se = se_fixed_point(&SeConfig::default(), delta, alpha, act, &LatentPrior::standard_gauss(), &model).unwrap();
    let q_se = se.preferred().q_v_star;
    let mut q = Vec::new();
    for seed in 0..4u64 {
        let (gm, inst) = wigner_problem(k, alpha, act, delta, 200 + seed);
        let rect = SpikedInstance {
            model: ObservationModel::Wishart { beta: 1.0 },
            truth: Truth { u: Some(inst.truth.v.clone()), ..inst.truth.clone() },
            ..inst.clone()
        };
        let mut start = AmpStateWishart::random(gm.p, gm.p, gm.k, 1.0, seed);
        start.u_hat = start.v_hat.clone();
        let res = amp_wishart_run_from(&rect, &gm, &pu, &AmpConfig::default(), start).unwrap();
        q.push(res.final_overlap().abs());
        let square = amp_wigner_run(&inst, &gm, &AmpConfig::default(), seed).unwrap();
        assert!(res.final_overlap().abs() <= square.final_overlap().abs() + 3.0 / (k as f64).sqrt());
    }
    let mean = q.iter().sum::<f64>() / q.len() as f64;
    let sd = (q.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (q.len() - 1) as f64).sqrt();
    let se_err = (sd / (q.len() as f64).sqrt()).max(1.0 / (k as f64).sqrt());
    assert!((mean - q_se).abs() <= 3.0 * se_err, "mean {mean} se {q_se} err {se_err}");
}
