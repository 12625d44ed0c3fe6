//! Experiment configuration, single runs, grid sweeps, analytic tables and
//! the command-line front end.
//!
//! Configuration is a flat `key = value` file; command-line flags override
//! it. Grid-valued keys (`alpha`, `delta`, `x_grid`) take a comma list,
//! `lin:start:stop:n` or `log:start:stop:n`.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Mutex;
use std::time::Instant;

use clap::{Parser, Subcommand};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use crate::amp::{amp_wigner_run, amp_wishart_run, AmpConfig};
use crate::error::{Error, Result};
use crate::io;
use crate::priors::{spiked_wigner, spiked_wishart, Activation, GenerativeModel, LatentKind, LatentPrior, SpikedInstance};
use crate::rmt::{base_law, bulk_density, epsilon_overlap, solve_s_edge, RmtModel, DENSITY_EPS};
use crate::rng::{mix64, point_seed};
use crate::spectral::{
    build_cov_lamp, empirical_second_moment, lamp_coefficients, lamp_estimate, leading_eigs, pca_estimate, EigConfig,
    SpectralResult,
};
use crate::state_evolution::{delta_c, mutual_information_with, se_fixed_point, SeConfig, SeModel};

pub const SWEEP_SE_HEADER: &str = "alpha,delta,q_v,q_z,mmse_v,converged,iters,init";
pub const SWEEP_HEADER: &str = "alpha,delta,seed,method,q_v,mse_v,converged,iters,status";
pub const RMT_EDGE_HEADER: &str = "delta,lambda_max,s_edge,epsilon";
pub const RMT_DENSITY_HEADER: &str = "x,density";
pub const COMPARE_HEADER: &str = "delta,q_v_se,epsilon_rmt,abs_diff";
pub const MI_HEADER: &str = "alpha,delta,i_rs,q_v,mmse_v,converged";

pub const BUILD_ID: &str = match option_env!("SPIKED_GIT_REV") {
    Some(rev) => rev,
    None => concat!("spiked-", env!("CARGO_PKG_VERSION")),
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Se,
    Amp,
    Lamp,
    Pca,
    Rmt,
    Mi,
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Se => "se",
            Method::Amp => "amp",
            Method::Lamp => "lamp",
            Method::Pca => "pca",
            Method::Rmt => "rmt",
            Method::Mi => "mi",
        }
    }

    fn needs_instance(&self) -> bool {
        matches!(self, Method::Amp | Method::Lamp | Method::Pca)
    }
}

impl FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.trim().to_ascii_lowercase().as_str() {
            "se" => Method::Se,
            "amp" => Method::Amp,
            "lamp" => Method::Lamp,
            "pca" => Method::Pca,
            "rmt" => Method::Rmt,
            "mi" => Method::Mi,
            other => return Err(Error::invalid(format!("methods: unknown method '{other}'"))),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Wigner,
    Wishart,
}

/// Comma list, `lin:a:b:n` or `log:a:b:n`.
pub fn parse_grid(s: &str) -> Result<Vec<f64>> {
    let s = s.trim();
    let ranged = |kind: &str, rest: &str| -> Result<Vec<f64>> {
        let parts: Vec<&str> = rest.split(':').collect();
        if parts.len() != 3 {
            return Err(Error::invalid(format!("grid '{s}': expected {kind}:start:stop:n")));
        }
        let a: f64 = parse_num(parts[0])?;
        let b: f64 = parse_num(parts[1])?;
        let n: usize = parts[2].trim().parse().map_err(|_| Error::invalid(format!("grid '{s}': bad count")))?;
        if n == 0 {
            return Err(Error::invalid(format!("grid '{s}' is empty")));
        }
        if n == 1 {
            return Ok(vec![a]);
        }
        Ok((0..n)
            .map(|i| {
                let t = i as f64 / (n - 1) as f64;
                if kind == "log" {
                    (a.ln() + t * (b.ln() - a.ln())).exp()
                } else {
                    a + t * (b - a)
                }
            })
            .collect())
    };
    let out = if let Some(rest) = s.strip_prefix("lin:") {
        ranged("lin", rest)?
    } else if let Some(rest) = s.strip_prefix("log:") {
        let g = ranged("log", rest)?;
        if g.iter().any(|&x| x <= 0.0) {
            return Err(Error::invalid(format!("grid '{s}': log grid needs positive ends")));
        }
        g
    } else {
        s.split(',').filter(|t| !t.trim().is_empty()).map(parse_num).collect::<Result<Vec<_>>>()?
    };
    if out.is_empty() {
        return Err(Error::invalid("grid is empty"));
    }
    if out.iter().any(|x| !x.is_finite()) {
        return Err(Error::invalid(format!("grid '{s}' has non-finite entries")));
    }
    Ok(out)
}

fn parse_num(s: &str) -> Result<f64> {
    s.trim().parse::<f64>().map_err(|_| Error::invalid(format!("'{s}' is not a number")))
}

fn parse_bool(s: &str) -> Result<bool> {
    match s.trim().to_ascii_lowercase().as_str() {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        other => Err(Error::invalid(format!("'{other}' is not a boolean"))),
    }
}

/// Recognised configuration keys.
pub const KEYS: &[&str] = &[
    "model", "activation", "latent", "rho_z", "prior_u", "alpha", "beta", "delta", "p", "k", "seed", "seeds",
    "methods", "se_tol", "se_max_iter", "se_damping", "quad_order", "amp_tol", "amp_max_iter", "amp_damping",
    "init_sigma2", "onsager", "eig_tol", "eig_max_iter", "x_grid", "trace", "estimate", "spikes", "observation",
    "truth", "workers",
];

#[derive(Clone, Debug, Serialize)]
pub struct ExperimentConfig {
    pub model: ModelKind,
    pub activation: Activation,
    pub latent: LatentPrior,
    pub prior_u: LatentPrior,
    pub alpha: Vec<f64>,
    pub beta: f64,
    pub delta: Vec<f64>,
    pub p: Option<usize>,
    pub k: Option<usize>,
    pub seed: u64,
    pub seeds: usize,
    pub methods: Vec<Method>,
    pub se: SeConfig,
    pub amp: AmpConfig,
    pub eig: EigConfig,
    pub x_grid: Option<Vec<f64>>,
    pub trace: Option<PathBuf>,
    pub estimate: Option<PathBuf>,
    pub spikes: Option<PathBuf>,
    pub observation: Option<PathBuf>,
    pub truth: Option<PathBuf>,
    pub workers: usize,
    /// every key that was set, in its final textual form
    pub echo: BTreeMap<String, String>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            model: ModelKind::Wigner,
            activation: Activation::LINEAR,
            latent: LatentPrior::standard_gauss(),
            prior_u: LatentPrior::standard_gauss(),
            alpha: vec![2.0],
            beta: 1.0,
            delta: vec![1.0],
            p: None,
            k: None,
            seed: 0,
            seeds: 1,
            methods: vec![Method::Se],
            se: SeConfig::default(),
            amp: AmpConfig::default(),
            eig: EigConfig::default(),
            x_grid: None,
            trace: None,
            estimate: None,
            spikes: None,
            observation: None,
            truth: None,
            workers: 1,
            echo: BTreeMap::new(),
        }
    }
}

impl ExperimentConfig {
    /// Applies one `key = value` setting; errors name the key.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let key = key.trim();
        let value = value.trim();
        self.set_inner(key, value).map_err(|e| match e {
            Error::InvalidArgument(m) if !m.starts_with(&format!("{key}:")) => Error::invalid(format!("{key}: {m}")),
            other => other,
        })?;
        self.echo.insert(key.to_string(), value.to_string());
        Ok(())
    }

    fn set_inner(&mut self, key: &str, value: &str) -> Result<()> {
        let usize_of = |v: &str| v.parse::<usize>().map_err(|_| Error::invalid(format!("'{v}' is not a count")));
        match key {
            "model" => {
                self.model = match value.to_ascii_lowercase().as_str() {
                    "wigner" => ModelKind::Wigner,
                    "wishart" => ModelKind::Wishart,
                    other => return Err(Error::invalid(format!("unknown model '{other}' (expected wigner|wishart)"))),
                }
            }
            "activation" => self.activation = value.parse()?,
            "latent" => {
                let rho = self.latent.rho_z;
                self.latent = value.parse()?;
                if self.latent.kind == LatentKind::Gauss {
                    self.latent = LatentPrior::gauss(rho)?;
                }
            }
            "rho_z" => {
                if self.latent.kind != LatentKind::Gauss {
                    return Err(Error::invalid("only the Gaussian latent prior takes rho_z"));
                }
                self.latent = LatentPrior::gauss(parse_num(value)?)?;
            }
            "prior_u" => self.prior_u = value.parse()?,
            "alpha" => {
                let g = parse_grid(value)?;
                if g.iter().any(|&a| a < 0.0) {
                    return Err(Error::invalid("must be non-negative"));
                }
                self.alpha = g;
            }
            "beta" => {
                let b = parse_num(value)?;
                if !(b > 0.0) {
                    return Err(Error::invalid("must be positive"));
                }
                self.beta = b;
            }
            "delta" => {
                let g = parse_grid(value)?;
                if g.iter().any(|&d| d <= 0.0) {
                    return Err(Error::invalid("must be positive"));
                }
                self.delta = g;
            }
            "p" => self.p = Some(usize_of(value)?),
            "k" => self.k = Some(usize_of(value)?),
            "seed" => self.seed = value.parse().map_err(|_| Error::invalid(format!("'{value}' is not a seed")))?,
            "seeds" => {
                self.seeds = usize_of(value)?;
                if self.seeds == 0 {
                    return Err(Error::invalid("must be at least 1"));
                }
            }
            "methods" => {
                let mut m = value.split(',').filter(|s| !s.trim().is_empty()).map(Method::from_str).collect::<Result<Vec<_>>>()?;
                m.sort();
                m.dedup();
                if m.is_empty() {
                    return Err(Error::invalid("no methods given"));
                }
                self.methods = m;
            }
            "se_tol" => self.se.tol = parse_num(value)?,
            "se_max_iter" => self.se.max_iter = usize_of(value)?,
            "se_damping" => self.se.damping = parse_num(value)?,
            "quad_order" => self.se.quad_order = usize_of(value)?,
            "amp_tol" => self.amp.tol = parse_num(value)?,
            "amp_max_iter" => self.amp.max_iter = usize_of(value)?,
            "amp_damping" => self.amp.damping = parse_num(value)?,
            "init_sigma2" => self.amp.init_sigma2 = parse_num(value)?,
            "onsager" => self.amp.onsager = parse_bool(value)?,
            "eig_tol" => self.eig.tol = parse_num(value)?,
            "eig_max_iter" => self.eig.max_iter = usize_of(value)?,
            "x_grid" => self.x_grid = Some(parse_grid(value)?),
            "trace" => self.trace = Some(PathBuf::from(value)),
            "estimate" => self.estimate = Some(PathBuf::from(value)),
            "spikes" => self.spikes = Some(PathBuf::from(value)),
            "observation" => self.observation = Some(PathBuf::from(value)),
            "truth" => self.truth = Some(PathBuf::from(value)),
            "workers" => {
                self.workers = usize_of(value)?;
                if self.workers == 0 {
                    return Err(Error::invalid("must be at least 1"));
                }
            }
            other => return Err(Error::invalid(format!("unknown configuration key '{other}'"))),
        }
        Ok(())
    }

    /// Parses `key = value` lines; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::invalid(format!("config line {}: expected key = value", n + 1)))?;
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut c = ExperimentConfig::default();
        c.apply_text(text)?;
        Ok(c)
    }

    pub fn se_model(&self) -> SeModel {
        match self.model {
            ModelKind::Wigner => SeModel::Wigner,
            ModelKind::Wishart => SeModel::Wishart { beta: self.beta, prior_u: self.prior_u },
        }
    }

    /// `(p, k)` at the given `alpha`, with a note when rounding was needed.
    pub fn dims(&self, alpha: f64) -> Result<(usize, usize, Option<String>)> {
        if !(alpha > 0.0) {
            return Err(Error::invalid("alpha: sampling needs alpha > 0"));
        }
        let (p, k) = match (self.p, self.k) {
            (Some(_), Some(_)) => return Err(Error::invalid("p, k: give exactly one of p and k")),
            (None, None) => return Err(Error::invalid("p, k: sampling methods need p or k")),
            (Some(p), None) => (p, ((p as f64 / alpha).round() as usize).max(1)),
            (None, Some(k)) => (((alpha * k as f64).round() as usize).max(1), k),
        };
        if p == 0 || k == 0 {
            return Err(Error::invalid("p, k: dimensions must be positive"));
        }
        let exact = p as f64 / k as f64;
        let note = ((exact - alpha).abs() > 1e-12 * alpha)
            .then(|| format!("rounded dimensions p={p}, k={k}: effective alpha {exact}"));
        Ok((p, k, note))
    }

    fn single_point(&self) -> Result<(f64, f64)> {
        if self.alpha.len() != 1 || self.delta.len() != 1 {
            return Err(Error::invalid("alpha, delta: single runs take one value each; use sweep for grids"));
        }
        Ok((self.alpha[0], self.delta[0]))
    }
}

/// One run of every requested method on a shared instance.
#[derive(Clone, Debug, Serialize)]
pub struct RunRecord {
    pub command: String,
    pub build_id: &'static str,
    pub config: BTreeMap<String, String>,
    pub seed: u64,
    /// seed actually used for the instance: `point_seed(seed, alpha, delta)`
    pub instance_seed: u64,
    pub alpha: f64,
    pub delta: f64,
    pub p: Option<usize>,
    pub k: Option<usize>,
    pub notes: Vec<String>,
    pub metrics: BTreeMap<String, Value>,
    /// numerical failures that did not abort the run
    pub failures: Vec<String>,
    pub wall_time_s: f64,
}

/// Seed of replicate `r` at grid point `(alpha, delta)`.
pub fn replicate_seed(base: u64, r: usize, alpha: f64, delta: f64) -> u64 {
    if r == 0 {
        point_seed(base, alpha, delta)
    } else {
        mix64(point_seed(base, alpha, delta) ^ r as u64)
    }
}

fn spectral_json(r: &SpectralResult, v_star: &nalgebra::DVector<f64>) -> Value {
    json!({
        "eigenvalues": r.eigenvalues,
        "overlap_sq": r.overlap_sq,
        "mse_v": r.mse(v_star),
        "residual": r.residual,
        "iters": r.iters,
        "converged": r.converged,
        "solver": r.method,
    })
}

struct Problem {
    gm: GenerativeModel,
    instance: SpikedInstance,
}

fn make_problem(cfg: &ExperimentConfig, p: usize, k: usize, delta: f64, seed: u64) -> Result<Problem> {
    let gm = GenerativeModel::sample(p, k, cfg.latent, cfg.activation, seed)?;
    let instance = match cfg.model {
        ModelKind::Wigner => spiked_wigner(&gm, delta, seed)?,
        ModelKind::Wishart => spiked_wishart(&gm, &cfg.prior_u, cfg.beta, delta, seed)?,
    };
    Ok(Problem { gm, instance })
}

/// Metrics of one method at one point. AMP divergence and spectral
/// non-convergence are reported through `failures`, not as errors.
fn run_method(
    cfg: &ExperimentConfig,
    method: Method,
    alpha: f64,
    delta: f64,
    problem: Option<&Problem>,
    seed: u64,
    failures: &mut Vec<String>,
) -> Result<Value> {
    let act = cfg.activation;
    Ok(match method {
        Method::Se => {
            let model = cfg.se_model();
            let out = se_fixed_point(&cfg.se, delta, alpha, act, &cfg.latent, &model)?;
            let best = out.preferred();
            let dc = if act.zero_mean_output() { Some(delta_c(alpha, act, &cfg.latent, &model)?) } else { None };
            json!({
                "q_v": best.q_v_star, "q_z": best.q_z, "q_hat_z": best.q_hat_z, "q_u": best.q_u,
                "mmse_v": best.mmse_v, "rho_v": best.rho_v, "converged": best.converged,
                "iters": best.iters, "init": best.init_used.name(), "init_gap": out.gap(),
                "delta_c": dc,
            })
        }
        Method::Mi => {
            if cfg.model != ModelKind::Wigner {
                return Err(Error::Domain("mutual information is implemented for the Wigner model".into()));
            }
            let mi = mutual_information_with(&cfg.se, delta, alpha, act, &cfg.latent)?;
            json!({ "i_rs": mi.i_rs, "q_v": mi.q_v_star, "converged": mi.converged })
        }
        Method::Rmt => {
            if act != Activation::LINEAR {
                return Err(Error::Domain("spectral predictions exist for the linear activation only".into()));
            }
            let model = match cfg.model {
                ModelKind::Wigner => RmtModel::Wigner,
                ModelKind::Wishart => RmtModel::Wishart { beta: cfg.beta },
            };
            let edge = solve_s_edge(&base_law(model, delta)?, alpha)?;
            let eps = match cfg.model {
                ModelKind::Wigner => Some(epsilon_overlap(alpha, delta)?),
                ModelKind::Wishart => None,
            };
            json!({ "lambda_max": edge.lambda_max, "s_edge": edge.s_edge, "epsilon": eps })
        }
        Method::Amp => {
            let pb = problem.expect("instance generated for amp");
            let res = match cfg.model {
                ModelKind::Wigner => amp_wigner_run(&pb.instance, &pb.gm, &cfg.amp, seed)?,
                ModelKind::Wishart => amp_wishart_run(&pb.instance, &pb.gm, &cfg.prior_u, &cfg.amp, seed)?,
            };
            if let Some(t) = res.diverged_at {
                failures.push(format!("amp: non-finite message at iteration {t}"));
            }
            if let Some(path) = &cfg.trace {
                res.write_trace_csv(BufWriter::new(File::create(path)?))?;
            }
            json!({
                "q_v": res.final_overlap(), "q_z": res.q_z_trace.last(), "q_u": res.q_u_trace.last(),
                "mse_v": res.mse_v, "mse_u": res.mse_u, "iters": res.iters, "converged": res.converged,
                "diverged_at": res.diverged_at, "clamp_events": res.clamp_events,
                "overlap_trace": res.overlap_trace,
            })
        }
        Method::Lamp | Method::Pca => {
            let pb = problem.expect("instance generated for spectral methods");
            let eig = EigConfig { seed, ..cfg.eig };
            let res = if method == Method::Lamp {
                let prior_u = (cfg.model == ModelKind::Wishart).then_some(&cfg.prior_u);
                let coeffs = lamp_coefficients(act, &cfg.latent, prior_u)?;
                lamp_estimate(&pb.instance, &pb.gm, &coeffs, &eig)?
            } else {
                pca_estimate(&pb.instance, &eig)?
            };
            if !res.converged {
                failures.push(format!("{}: eigen-iteration did not reach tol (residual {:e})", method.name(), res.residual));
            }
            if let Some(path) = &cfg.estimate {
                io::write_vector_csv("v", &res.eigenvector, BufWriter::new(File::create(path)?))?;
            }
            spectral_json(&res, &pb.instance.truth.v)
        }
    })
}

fn run_point(cfg: &ExperimentConfig, command: &str, alpha: f64, delta: f64, replicate: usize) -> Result<RunRecord> {
    let start = Instant::now();
    let seed = replicate_seed(cfg.seed, replicate, alpha, delta);
    let mut notes = Vec::new();
    let needs = cfg.methods.iter().any(Method::needs_instance);
    let (mut p, mut k) = (None, None);
    let problem = if needs {
        let (pp, kk, note) = cfg.dims(alpha)?;
        notes.extend(note);
        p = Some(pp);
        k = Some(kk);
        Some(make_problem(cfg, pp, kk, delta, seed)?)
    } else {
        None
    };
    let mut metrics = BTreeMap::new();
    let mut failures = Vec::new();
    for &m in &cfg.methods {
        let v = run_method(cfg, m, alpha, delta, problem.as_ref(), seed, &mut failures)?;
        metrics.insert(m.name().to_string(), v);
    }
    Ok(RunRecord {
        command: command.to_string(),
        build_id: BUILD_ID,
        config: cfg.echo.clone(),
        seed: cfg.seed,
        instance_seed: seed,
        alpha,
        delta,
        p,
        k,
        notes,
        metrics,
        failures,
        wall_time_s: start.elapsed().as_secs_f64(),
    })
}

/// Generates the instance once and runs every method in `cfg.methods` on it.
pub fn run_single(cfg: &ExperimentConfig) -> Result<RunRecord> {
    let (alpha, delta) = cfg.single_point()?;
    run_point(cfg, "run", alpha, delta, 0)
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map_or_else(|| "NaN".to_string(), |v| v.to_string())
}

fn se_row(alpha: f64, delta: f64, rec: &Result<RunRecord>) -> String {
    match rec.as_ref().ok().and_then(|r| r.metrics.get("se")) {
        Some(m) => format!(
            "{alpha},{delta},{},{},{},{},{},{}",
            fmt_opt(m["q_v"].as_f64()),
            fmt_opt(m["q_z"].as_f64()),
            fmt_opt(m["mmse_v"].as_f64()),
            m["converged"].as_bool().unwrap_or(false),
            m["iters"].as_u64().unwrap_or(0),
            m["init"].as_str().unwrap_or("error"),
        ),
        None => format!("{alpha},{delta},NaN,NaN,NaN,false,0,error"),
    }
}

fn method_rows(cfg: &ExperimentConfig, alpha: f64, delta: f64, r: usize, rec: &Result<RunRecord>) -> Vec<String> {
    let seed = replicate_seed(cfg.seed, r, alpha, delta);
    cfg.methods
        .iter()
        .map(|m| {
            let name = m.name();
            match rec {
                Err(e) => format!("{alpha},{delta},{seed},{name},NaN,NaN,false,0,error: {}", csv_safe(&e.to_string())),
                Ok(rec) => {
                    let v = &rec.metrics[name];
                    let q = match m {
                        Method::Lamp | Method::Pca => v["overlap_sq"].as_f64(),
                        Method::Rmt => v["epsilon"].as_f64(),
                        _ => v["q_v"].as_f64(),
                    };
                    let mse = match m {
                        Method::Se => v["mmse_v"].as_f64(),
                        _ => v["mse_v"].as_f64(),
                    };
                    let failed = rec.failures.iter().any(|f| f.starts_with(name));
                    format!(
                        "{alpha},{delta},{seed},{name},{},{},{},{},{}",
                        fmt_opt(q),
                        fmt_opt(mse),
                        v["converged"].as_bool().unwrap_or(true),
                        v["iters"].as_u64().unwrap_or(0),
                        if failed { "numerical" } else { "ok" }
                    )
                }
            }
        })
        .collect()
}

fn csv_safe(s: &str) -> String {
    s.replace([',', '\n', '"'], ";")
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct SweepSummary {
    pub points: usize,
    pub rows: usize,
    pub errors: usize,
}

/// Cartesian `alpha x delta` grid on `workers` threads. Rows are written and
/// flushed as points finish; a failed point becomes an `error` row.
/// SE-only sweeps use [`SWEEP_SE_HEADER`], everything else [`SWEEP_HEADER`].
pub fn run_sweep<W: Write + Send>(cfg: &ExperimentConfig, workers: usize, out: W) -> Result<SweepSummary> {
    let se_only = cfg.methods == [Method::Se];
    let mut jobs = Vec::new();
    for &a in &cfg.alpha {
        for &d in &cfg.delta {
            for r in 0..if se_only { 1 } else { cfg.seeds } {
                jobs.push((a, d, r));
            }
        }
    }
    let writer = Mutex::new((out, 0usize, 0usize));
    {
        let mut g = writer.lock().expect("writer lock");
        writeln!(g.0, "{}", if se_only { SWEEP_SE_HEADER } else { SWEEP_HEADER })?;
        g.0.flush()?;
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::invalid(format!("workers: {e}")))?;
    let result: Result<()> = pool.install(|| {
        jobs.par_iter().try_for_each(|&(a, d, r)| -> Result<()> {
            let rec = run_point(cfg, "sweep", a, d, r);
            let lines = if se_only { vec![se_row(a, d, &rec)] } else { method_rows(cfg, a, d, r, &rec) };
            let mut g = writer.lock().expect("writer lock");
            for l in &lines {
                writeln!(g.0, "{l}")?;
            }
            g.0.flush()?;
            g.1 += lines.len();
            g.2 += usize::from(rec.is_err());
            Ok(())
        })
    });
    result?;
    let (_, rows, errors) = writer.into_inner().expect("writer lock");
    Ok(SweepSummary { points: jobs.len(), rows, errors })
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct CompareRow {
    pub delta: f64,
    pub q_v_se: f64,
    pub epsilon_rmt: f64,
    pub abs_diff: f64,
}

/// SE overlap against the random-matrix eigenvector overlap, linear Wigner.
pub fn compare_rmt_se(alpha: f64, deltas: &[f64]) -> Result<Vec<CompareRow>> {
    if deltas.is_empty() {
        return Err(Error::invalid("delta: empty grid"));
    }
    deltas
        .iter()
        .map(|&d| {
            let q = se_fixed_point(&SeConfig::default(), d, alpha, Activation::LINEAR, &LatentPrior::standard_gauss(), &SeModel::Wigner)?
                .preferred()
                .q_v_star;
            let e = epsilon_overlap(alpha, d)?;
            Ok(CompareRow { delta: d, q_v_se: q, epsilon_rmt: e, abs_diff: (q - e).abs() })
        })
        .collect()
}

pub fn write_compare_csv<W: Write>(rows: &[CompareRow], mut w: W) -> Result<()> {
    writeln!(w, "{COMPARE_HEADER}")?;
    for r in rows {
        writeln!(w, "{},{},{},{}", r.delta, r.q_v_se, r.epsilon_rmt, r.abs_diff)?;
    }
    Ok(())
}

fn rmt_model(cfg: &ExperimentConfig) -> RmtModel {
    match cfg.model {
        ModelKind::Wigner => RmtModel::Wigner,
        ModelKind::Wishart => RmtModel::Wishart { beta: cfg.beta },
    }
}

/// `delta,lambda_max,s_edge,epsilon` over the delta grid (epsilon is NaN
/// for the rectangular model, which has no closed form).
pub fn write_rmt_edge_csv<W: Write>(cfg: &ExperimentConfig, alpha: f64, mut w: W) -> Result<()> {
    writeln!(w, "{RMT_EDGE_HEADER}")?;
    for &d in &cfg.delta {
        let e = solve_s_edge(&base_law(rmt_model(cfg), d)?, alpha)?;
        let eps = match cfg.model {
            ModelKind::Wigner => epsilon_overlap(alpha, d)?,
            ModelKind::Wishart => f64::NAN,
        };
        writeln!(w, "{d},{},{},{eps}", e.lambda_max, e.s_edge)?;
    }
    Ok(())
}

/// `x,density`: continuous part of the p x p operator's limiting law.
pub fn write_rmt_density_csv<W: Write>(cfg: &ExperimentConfig, alpha: f64, delta: f64, xs: &[f64], mut w: W) -> Result<()> {
    let b = bulk_density(&base_law(rmt_model(cfg), delta)?, alpha, xs, DENSITY_EPS)?;
    writeln!(w, "{RMT_DENSITY_HEADER}")?;
    for (x, d) in b.x.iter().zip(&b.mu_density) {
        writeln!(w, "{x},{d}")?;
    }
    Ok(())
}

pub fn write_mi_csv<W: Write>(cfg: &ExperimentConfig, mut w: W) -> Result<()> {
    if cfg.model != ModelKind::Wigner {
        return Err(Error::Domain("mutual information is implemented for the Wigner model".into()));
    }
    writeln!(w, "{MI_HEADER}")?;
    for &a in &cfg.alpha {
        for &d in &cfg.delta {
            let mi = mutual_information_with(&cfg.se, d, a, cfg.activation, &cfg.latent)?;
            writeln!(w, "{a},{d},{},{},{},{}", mi.i_rs, mi.q_v_star, mi.point.mmse_v, mi.converged)?;
        }
    }
    Ok(())
}

/// Covariance-LAMP on files: spikes (rows = samples) give the empirical
/// second moment, the observation is the square data matrix.
pub fn run_cov_lamp(cfg: &ExperimentConfig) -> Result<RunRecord> {
    let start = Instant::now();
    let spikes = cfg.spikes.as_ref().ok_or_else(|| Error::invalid("spikes: a spikes file is required"))?;
    let obs = cfg.observation.as_ref().ok_or_else(|| Error::invalid("observation: an observation file is required"))?;
    if cfg.delta.len() != 1 {
        return Err(Error::invalid("delta: cov-lamp takes a single value"));
    }
    let delta = cfg.delta[0];
    let samples = io::load_matrix(spikes)?;
    let y = io::load_matrix(obs)?;
    let sigma = empirical_second_moment(&samples);
    let op = build_cov_lamp(&y, &sigma, delta)?;
    let mut res = leading_eigs(&op, 2.min(op.dim()), &cfg.eig)?;
    let mut metrics = BTreeMap::new();
    let mut failures = Vec::new();
    let mut m = json!({
        "eigenvalues": res.eigenvalues, "residual": res.residual, "iters": res.iters,
        "converged": res.converged, "solver": res.method, "samples": samples.nrows(),
    });
    if let Some(t) = &cfg.truth {
        let v = io::load_vector(t)?;
        if v.len() != op.dim() {
            return Err(Error::DimensionMismatch(format!("truth has length {}, observation is {}", v.len(), op.dim())));
        }
        res.set_truth(&v);
        m["overlap_sq"] = json!(res.overlap_sq);
        m["mse_v"] = json!(res.mse(&v));
    }
    if !res.converged {
        failures.push(format!("cov-lamp: eigen-iteration did not reach tol (residual {:e})", res.residual));
    }
    if let Some(path) = &cfg.estimate {
        io::write_vector_csv("v", &res.eigenvector, BufWriter::new(File::create(path)?))?;
    }
    metrics.insert("cov_lamp".to_string(), m);
    Ok(RunRecord {
        command: "cov-lamp".into(),
        build_id: BUILD_ID,
        config: cfg.echo.clone(),
        seed: cfg.seed,
        instance_seed: cfg.seed,
        alpha: f64::NAN,
        delta,
        p: Some(op.dim()),
        k: None,
        notes: vec![],
        metrics,
        failures,
        wall_time_s: start.elapsed().as_secs_f64(),
    })
}

#[derive(Parser, Debug)]
#[command(name = "spiked", version, about = "Spiked matrix estimation with generative priors")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// flat key = value configuration file
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// output file (stdout when absent)
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// any configuration key, repeatable: --set amp_max_iter=100
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    #[arg(long, global = true)]
    pub model: Option<String>,
    #[arg(long, global = true)]
    pub activation: Option<String>,
    #[arg(long, global = true)]
    pub latent: Option<String>,
    #[arg(long, global = true)]
    pub alpha: Option<String>,
    #[arg(long, global = true)]
    pub beta: Option<String>,
    #[arg(long, global = true)]
    pub delta: Option<String>,
    #[arg(long, global = true)]
    pub p: Option<String>,
    #[arg(long, global = true)]
    pub k: Option<String>,
    #[arg(long, global = true)]
    pub seeds: Option<String>,
    #[arg(long, global = true)]
    pub methods: Option<String>,
    #[arg(long, global = true)]
    pub x_grid: Option<String>,
    #[arg(long, global = true)]
    pub trace: Option<String>,
    #[arg(long, global = true)]
    pub estimate: Option<String>,
    #[arg(long, global = true)]
    pub spikes: Option<String>,
    #[arg(long, global = true)]
    pub observation: Option<String>,
    #[arg(long, global = true)]
    pub truth: Option<String>,
}

#[derive(Subcommand, Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    /// state-evolution fixed point (JSON record)
    Se,
    /// AMP on a sampled instance (JSON record, optional trace CSV)
    Amp,
    /// LAMP spectral estimate (JSON record)
    Lamp,
    /// PCA baseline (JSON record)
    Pca,
    /// bulk edge and overlap table, or bulk density with --x-grid (CSV)
    Rmt,
    /// replica mutual information over the grid (CSV)
    Mi,
    /// alpha x delta grid of any methods (CSV)
    Sweep,
    /// SE overlap vs random-matrix overlap (CSV)
    CompareRmtSe,
    /// covariance-LAMP from spikes and observation files
    CovLamp,
}

impl Cli {
    /// Defaults, then the config file, then `--set`, then named flags.
    pub fn config(&self) -> Result<ExperimentConfig> {
        let mut cfg = ExperimentConfig::default();
        if let Some(path) = &self.config {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Error::invalid(format!("config: cannot read {}: {e}", path.display())))?;
            cfg.apply_text(&text)?;
        }
        for kv in &self.set {
            let (k, v) = kv.split_once('=').ok_or_else(|| Error::invalid(format!("set: expected KEY=VALUE, got '{kv}'")))?;
            cfg.set(k, v)?;
        }
        let named: [(&str, &Option<String>); 16] = [
            ("model", &self.model),
            ("activation", &self.activation),
            ("latent", &self.latent),
            ("alpha", &self.alpha),
            ("beta", &self.beta),
            ("delta", &self.delta),
            ("p", &self.p),
            ("k", &self.k),
            ("seeds", &self.seeds),
            ("methods", &self.methods),
            ("x_grid", &self.x_grid),
            ("trace", &self.trace),
            ("estimate", &self.estimate),
            ("spikes", &self.spikes),
            ("observation", &self.observation),
            ("truth", &self.truth),
        ];
        for (k, v) in named {
            if let Some(v) = v {
                cfg.set(k, v)?;
            }
        }
        if let Some(s) = self.seed {
            cfg.set("seed", &s.to_string())?;
        }
        if let Some(w) = self.workers {
            cfg.set("workers", &w.to_string())?;
        }
        Ok(cfg)
    }
}

fn open_out(path: Option<&Path>) -> Result<Box<dyn Write + Send>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(std::io::stdout())),
    })
}

fn write_record(rec: &RunRecord, mut w: Box<dyn Write + Send>) -> Result<()> {
    serde_json::to_writer_pretty(&mut w, rec).map_err(|e| Error::Io(std::io::Error::other(e)))?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn execute(cli: &Cli) -> Result<i32> {
    let mut cfg = cli.config()?;
    let out = cli.out.as_deref();
    let single = |cfg: &mut ExperimentConfig, m: Method| -> Result<i32> {
        cfg.methods = vec![m];
        cfg.echo.insert("methods".into(), m.name().into());
        let rec = run_single(cfg)?;
        let code = if rec.failures.is_empty() { 0 } else { 3 };
        for f in &rec.failures {
            eprintln!("numerical failure: {f}");
        }
        write_record(&rec, open_out(out)?)?;
        Ok(code)
    };
    match cli.command {
        Command::Se => single(&mut cfg, Method::Se),
        Command::Amp => single(&mut cfg, Method::Amp),
        Command::Lamp => single(&mut cfg, Method::Lamp),
        Command::Pca => single(&mut cfg, Method::Pca),
        Command::Rmt => {
            if cfg.activation != Activation::LINEAR {
                return Err(Error::invalid("activation: spectral predictions exist for the linear activation only"));
            }
            if cfg.alpha.len() != 1 {
                return Err(Error::invalid("alpha: rmt takes a single value"));
            }
            let mut w = open_out(out)?;
            match &cfg.x_grid {
                Some(xs) => {
                    if cfg.delta.len() != 1 {
                        return Err(Error::invalid("delta: the density table takes a single value"));
                    }
                    write_rmt_density_csv(&cfg, cfg.alpha[0], cfg.delta[0], xs, &mut w)?
                }
                None => write_rmt_edge_csv(&cfg, cfg.alpha[0], &mut w)?,
            }
            w.flush()?;
            Ok(0)
        }
        Command::Mi => {
            let mut w = open_out(out)?;
            write_mi_csv(&cfg, &mut w)?;
            w.flush()?;
            Ok(0)
        }
        Command::Sweep => {
            let s = run_sweep(&cfg, cfg.workers, open_out(out)?)?;
            eprintln!("sweep: {} points, {} rows, {} errors", s.points, s.rows, s.errors);
            Ok(0)
        }
        Command::CompareRmtSe => {
            if cfg.alpha.len() != 1 {
                return Err(Error::invalid("alpha: compare-rmt-se takes a single value"));
            }
            let rows = compare_rmt_se(cfg.alpha[0], &cfg.delta)?;
            let mut w = open_out(out)?;
            write_compare_csv(&rows, &mut w)?;
            w.flush()?;
            Ok(0)
        }
        Command::CovLamp => {
            let rec = run_cov_lamp(&cfg)?;
            let code = if rec.failures.is_empty() { 0 } else { 3 };
            write_record(&rec, open_out(out)?)?;
            Ok(code)
        }
    }
}

/// Parses arguments and runs; returns the process exit code
/// (0 ok, 2 usage or input error, 3 numerical failure).
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grids_parse() {
        assert_eq!(parse_grid("1, 2,3").unwrap(), vec![1.0, 2.0, 3.0]);
        assert_eq!(parse_grid("lin:0:1:3").unwrap(), vec![0.0, 0.5, 1.0]);
        let g = parse_grid("log:1:100:3").unwrap();
        assert!((g[1] - 10.0).abs() < 1e-12);
        assert!(parse_grid("").is_err());
        assert!(parse_grid("lin:0:1:0").is_err());
        assert!(parse_grid("log:0:1:3").is_err());
    }

    #[test]
    fn errors_name_the_key() {
        let mut c = ExperimentConfig::default();
        let e = c.set("activation", "tanh").unwrap_err().to_string();
        assert!(e.contains("activation"), "{e}");
        let e = c.set("bogus", "1").unwrap_err().to_string();
        assert!(e.contains("bogus"), "{e}");
    }

    #[test]
    fn dimension_rounding_is_noted() {
        let mut c = ExperimentConfig::default();
        c.set("p", "1001").unwrap();
        let (p, k, note) = c.dims(2.0).unwrap();
        assert_eq!((p, k), (1001, 501));
        assert!(note.is_some());
        c.set("k", "10").unwrap();
        assert!(c.dims(2.0).is_err());
    }
}
