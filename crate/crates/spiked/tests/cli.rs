use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use spiked::cli::*;
use spiked::io;
use spiked::priors::*;

fn bin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_spiked")).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn first_line(s: &str) -> &str {
    s.lines().next().unwrap_or("")
}

fn config(pairs: &[(&str, &str)]) -> ExperimentConfig {
    let mut c = ExperimentConfig::default();
    for (k, v) in pairs {
        c.set(k, v).unwrap();
    }
    c
}

fn sweep_text(cfg: &ExperimentConfig, workers: usize) -> String {
    let mut buf = Vec::new();
    run_sweep(cfg, workers, &mut buf).unwrap();
    String::from_utf8(buf).unwrap()
}

#[test]
fn se_record_needs_no_sampling() {
    let o = bin(&["se", "--alpha", "2", "--delta", "1.5"]);
    assert_eq!(o.status.code(), Some(0));
    let v: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert!(v["p"].is_null() && v["k"].is_null());
    let q = v["metrics"]["se"]["q_v"].as_f64().unwrap();
    assert!((q - 0.4386).abs() < 1e-3, "{q}");
    assert!((v["metrics"]["se"]["delta_c"].as_f64().unwrap() - 3.0).abs() < 1e-6);
    assert_eq!(v["config"]["delta"], "1.5");
}

#[test]
fn usage_errors_exit_with_two() {
    for args in [
        vec!["se", "--activation", "tanh"],
        vec!["se", "--set", "nonsense=1"],
        vec!["compare-rmt-se", "--delta", ""],
        vec!["amp", "--p", "100", "--k", "50"],
        vec!["amp"],
        vec!["se", "--delta", "1,2"],
        vec!["frobnicate"],
        vec![],
    ] {
        let o = bin(&args);
        assert_eq!(o.status.code(), Some(2), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    }
    let o = bin(&["se", "--activation", "tanh"]);
    assert!(String::from_utf8_lossy(&o.stderr).contains("activation"));
}

#[test]
fn unconverged_eigen_iteration_exits_with_three() {
    let o = bin(&["lamp", "--p", "200", "--delta", "1", "--set", "eig_max_iter=3"]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
    let v: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["metrics"]["lamp"]["converged"], false);
    assert!(!v["failures"].as_array().unwrap().is_empty());
}

#[test]
fn csv_headers_are_stable() {
    let dir = tempfile::tempdir().unwrap();
    let o = bin(&["rmt", "--alpha", "2", "--delta", "1,2"]);
    assert_eq!(first_line(&stdout(&o)), "delta,lambda_max,s_edge,epsilon");
    let o = bin(&["rmt", "--alpha", "2", "--delta", "3", "--x-grid", "lin:-1:1:5"]);
    assert_eq!(first_line(&stdout(&o)), "x,density");
    assert_eq!(stdout(&o).lines().count(), 6);
    let o = bin(&["compare-rmt-se", "--alpha", "2", "--delta", "1"]);
    assert_eq!(first_line(&stdout(&o)), "delta,q_v_se,epsilon_rmt,abs_diff");
    let o = bin(&["mi", "--alpha", "2", "--delta", "1"]);
    assert_eq!(first_line(&stdout(&o)), "alpha,delta,i_rs,q_v,mmse_v,converged");
    let o = bin(&["sweep", "--alpha", "1,2", "--delta", "1"]);
    assert_eq!(first_line(&stdout(&o)), "alpha,delta,q_v,q_z,mmse_v,converged,iters,init");
    let o = bin(&["sweep", "--alpha", "2", "--delta", "1", "--methods", "se,pca", "--p", "100"]);
    assert_eq!(first_line(&stdout(&o)), "alpha,delta,seed,method,q_v,mse_v,converged,iters,status");

    let trace = dir.path().join("trace.csv");
    let est = dir.path().join("v.csv");
    let o = bin(&["amp", "--p", "200", "--delta", "1", "--trace", trace.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    let t = std::fs::read_to_string(&trace).unwrap();
    assert_eq!(first_line(&t), "t,q_v,q_z,mse_v");
    let o = bin(&["pca", "--p", "200", "--delta", "1", "--estimate", est.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    let e = std::fs::read_to_string(&est).unwrap();
    assert_eq!(first_line(&e), "i,v");
    assert_eq!(e.lines().count(), 201);
}

#[test]
fn output_flag_writes_file() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("se.json");
    let o = bin(&["se", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    assert!(o.stdout.is_empty());
    let v: Value = serde_json::from_str(&std::fs::read_to_string(out).unwrap()).unwrap();
    assert_eq!(v["command"], "run");
}

#[test]
fn config_file_is_overridden_by_flags() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.cfg");
    std::fs::write(&path, "# experiment\nalpha = 2\ndelta = 1.0  # noise\nactivation = sign\n").unwrap();
    let o = bin(&["se", "--config", path.to_str().unwrap(), "--delta", "2"]);
    assert_eq!(o.status.code(), Some(0));
    let v: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["config"]["delta"], "2");
    assert_eq!(v["config"]["activation"], "sign");
    assert_eq!(v["delta"], 2.0);
    std::fs::write(&path, "delta 1\n").unwrap();
    assert_eq!(bin(&["se", "--config", path.to_str().unwrap()]).status.code(), Some(2));
}

#[test]
fn sweeps_do_not_depend_on_worker_count() {
    let sorted = |s: String| {
        let mut l: Vec<String> = s.lines().map(String::from).collect();
        l.sort();
        l
    };
    let se = config(&[("alpha", "0.5,2"), ("delta", "0.5,1.5,3")]);
    assert_eq!(sorted(sweep_text(&se, 1)), sorted(sweep_text(&se, 2)));
    let mixed = config(&[("alpha", "1,2"), ("delta", "0.5,2"), ("methods", "pca,amp"), ("p", "150"), ("seeds", "2")]);
    let one = sweep_text(&mixed, 1);
    assert_eq!(one.lines().count(), 1 + 2 * 2 * 2 * 2);
    assert_eq!(sorted(one), sorted(sweep_text(&mixed, 2)));
}

#[test]
fn one_point_sweep_equals_single_run() {
    let cfg = config(&[("alpha", "2"), ("delta", "0.7"), ("methods", "pca,amp"), ("p", "300"), ("seed", "5")]);
    let rec = run_single(&cfg).unwrap();
    let text = sweep_text(&cfg, 1);
    let rows: Vec<Vec<&str>> = text.lines().skip(1).map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 2);
    for r in rows {
        assert_eq!(r[2].parse::<u64>().unwrap(), rec.instance_seed);
        let m = &rec.metrics[r[3]];
        let q = if r[3] == "pca" { m["overlap_sq"].as_f64() } else { m["q_v"].as_f64() }.unwrap();
        assert_eq!(r[4].parse::<f64>().unwrap(), q);
        assert_eq!(r[5].parse::<f64>().unwrap(), m["mse_v"].as_f64().unwrap());
    }
}

#[test]
fn failed_points_are_flagged_and_sweep_continues() {
    // relu has no zero-mean output, so LAMP is refused at every point
    let cfg = config(&[("activation", "relu"), ("alpha", "2"), ("delta", "1,2"), ("methods", "lamp"), ("p", "100")]);
    let text = sweep_text(&cfg, 1);
    let rows: Vec<&str> = text.lines().skip(1).collect();
    assert_eq!(rows.len(), 2);
    assert!(rows.iter().all(|r| r.contains(",error")), "{text}");
    let mut buf = Vec::new();
    let summary = run_sweep(&cfg, 1, &mut buf).unwrap();
    assert_eq!((summary.points, summary.errors), (2, 2));
}

#[test]
fn metrics_reproduce_bit_exactly() {
    let cfg = config(&[("alpha", "2"), ("delta", "1"), ("methods", "amp,lamp,pca,se"), ("p", "300"), ("seed", "11")]);
    let a = run_single(&cfg).unwrap();
    let b = run_single(&cfg).unwrap();
    assert_eq!(serde_json::to_string(&a.metrics).unwrap(), serde_json::to_string(&b.metrics).unwrap());
    let c = run_single(&config(&[("alpha", "2"), ("delta", "1"), ("methods", "amp"), ("p", "300"), ("seed", "12")])).unwrap();
    assert_ne!(a.metrics["amp"], c.metrics["amp"]);
}

#[test]
fn dimension_rounding_is_recorded() {
    let rec = run_single(&config(&[("alpha", "3"), ("delta", "1"), ("methods", "pca"), ("p", "100")])).unwrap();
    assert_eq!((rec.p, rec.k), (Some(100), Some(33)));
    assert_eq!(rec.notes.len(), 1);
}

#[test]
fn mse_curves_increase_with_noise_across_compression_ratios() {
    let cfg = config(&[("alpha", "0,1,10,100,1000"), ("delta", "lin:0.2:4:12")]);
    let text = sweep_text(&cfg, 1);
    let mut rows: Vec<(f64, f64, f64)> = text
        .lines()
        .skip(1)
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            assert_eq!(f[5], "true", "{l}");
            (f[0].parse().unwrap(), f[1].parse().unwrap(), f[4].parse().unwrap())
        })
        .collect();
    rows.sort_by(|a, b| a.partial_cmp(b).unwrap());
    for w in rows.windows(2) {
        if w[0].0 == w[1].0 {
            assert!(w[1].2 >= w[0].2 - 1e-9, "alpha {}: {:?} -> {:?}", w[0].0, w[0], w[1]);
        }
    }
    // more compression helps at fixed noise
    let at = |a: f64| rows.iter().find(|r| r.0 == a && (r.1 - 1.9273).abs() < 0.01).unwrap().2;
    assert!(at(1000.0) <= at(0.0));
}

#[test]
fn state_evolution_and_random_matrix_overlaps_agree() {
    let grid: Vec<f64> = (1..=8).map(|i| 0.5 * i as f64).collect();
    let rows = compare_rmt_se(2.0, &grid).unwrap();
    let worst = rows.iter().map(|r| r.abs_diff).fold(0.0, f64::max);
    assert!(worst <= 1e-3, "{worst}");
    for r in rows.iter().filter(|r| r.delta >= 3.0) {
        assert!(r.q_v_se <= 1e-6 && r.epsilon_rmt <= 1e-6, "{r:?}");
    }
    assert!(compare_rmt_se(2.0, &[]).is_err());
}

fn write_cov_inputs(dir: &Path) -> (String, String, String) {
    let gm = GenerativeModel::sample(60, 30, LatentPrior::standard_gauss(), Activation::LINEAR, 3).unwrap();
    let inst = spiked_wigner(&gm, 0.5, 3).unwrap();
    let spikes = sample_spikes(&gm, 3000, 3);
    let s = dir.join("spikes.csv");
    let y = dir.join("y.bin");
    let t = dir.join("truth.csv");
    io::save_matrix(&s, &spikes).unwrap();
    io::save_matrix(&y, &inst.y).unwrap();
    io::save_matrix(&t, &nalgebra::DMatrix::from_column_slice(60, 1, inst.truth.v.as_slice())).unwrap();
    (s.to_str().unwrap().into(), y.to_str().unwrap().into(), t.to_str().unwrap().into())
}

#[test]
fn cov_lamp_runs_from_files() {
    let dir = tempfile::tempdir().unwrap();
    let (s, y, t) = write_cov_inputs(dir.path());
    let est = dir.path().join("est.csv");
    let o = bin(&[
        "cov-lamp", "--spikes", &s, "--observation", &y, "--truth", &t, "--delta", "0.5", "--estimate",
        est.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let v: Value = serde_json::from_str(&stdout(&o)).unwrap();
    let m = &v["metrics"]["cov_lamp"];
    assert_eq!(m["eigenvalues"].as_array().unwrap().len(), 2);
    assert!(m["overlap_sq"].as_f64().unwrap() > 0.3, "{m}");
    assert!(m["residual"].as_f64().unwrap() <= 1e-8);
    let e = std::fs::read_to_string(est).unwrap();
    assert_eq!(first_line(&e), "i,v");
    assert_eq!(bin(&["cov-lamp", "--observation", &y]).status.code(), Some(2));
}

#[test]
fn three_methods_share_one_instance() {
    let cfg = config(&[("alpha", "2"), ("delta", "1.5"), ("methods", "amp,lamp,pca"), ("k", "5000"), ("seed", "1")]);
    let rec = run_single(&cfg).unwrap();
    assert_eq!((rec.p, rec.k), (Some(10_000), Some(5000)));
    let mse = |m: &str| rec.metrics[m]["mse_v"].as_f64().unwrap();
    assert!(mse("lamp") <= mse("pca"), "lamp {} pca {}", mse("lamp"), mse("pca"));
    assert!(mse("amp") <= mse("lamp") + 0.05, "amp {} lamp {}", mse("amp"), mse("lamp"));
    assert!(rec.failures.is_empty(), "{:?}", rec.failures);
}
