//! AMP on a spiked Wishart (rectangular) instance with a Gaussian left factor.

use spiked::amp::{amp_wishart_run, AmpConfig};
use spiked::priors::*;
use spiked::state_evolution::{se_fixed_point, SeConfig, SeModel};

fn main() -> spiked::Result<()> {
    let (k, alpha, beta, delta) = (800, 2.0, 1.0, 0.8);
    let p = (alpha * k as f64) as usize;
    let g = LatentPrior::standard_gauss();
    let gm = GenerativeModel::sample(p, k, g, Activation::LINEAR, 11)?;
    let inst = spiked_wishart(&gm, &g, beta, delta, 11)?;
    let res = amp_wishart_run(&inst, &gm, &g, &AmpConfig::default(), 11)?;
    let se = se_fixed_point(&SeConfig::default(), delta, alpha, Activation::LINEAR, &g, &SeModel::Wishart { beta, prior_u: g })?;
    let pt = se.preferred();
    println!("iterations {} converged {}", res.iters, res.converged);
    println!("|q_v| = {:.4} (SE {:.4}), |q_u| = {:.4} (SE {:.4})",
        res.final_overlap().abs(), pt.q_v_star,
        res.q_u_trace.last().copied().unwrap_or(f64::NAN).abs(), pt.q_u.unwrap_or(f64::NAN));
    println!("mse_v = {:.4}, mse_u = {:.4}", res.mse_v, res.mse_u.unwrap_or(f64::NAN));
    Ok(())
}
