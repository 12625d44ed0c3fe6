//! AMP on a spiked Wigner instance, compared with the state-evolution
//! prediction of its fixed point.

use spiked::amp::{amp_wigner_run, AmpConfig};
use spiked::priors::*;
use spiked::state_evolution::{se_fixed_point, SeConfig, SeModel};

fn main() -> spiked::Result<()> {
    let (k, alpha, delta) = (1000, 2.0, 1.0);
    let p = (alpha * k as f64) as usize;
    let latent = LatentPrior::standard_gauss();
    for act in [Activation::LINEAR, Activation::SIGN] {
        let gm = GenerativeModel::sample(p, k, latent, act, 3)?;
        let inst = spiked_wigner(&gm, delta, 3)?;
        let res = amp_wigner_run(&inst, &gm, &AmpConfig::default(), 3)?;
        let se = se_fixed_point(&SeConfig::default(), delta, alpha, act, &latent, &SeModel::Wigner)?;
        println!(
            "{}: {} iterations (converged {}), |q_v| = {:.4}, SE q_v* = {:.4}, mse_v = {:.4}",
            act.name(),
            res.iters,
            res.converged,
            res.final_overlap().abs(),
            se.preferred().q_v_star,
            res.mse_v
        );
    }
    Ok(())
}
