//! Fixed points of the state evolution: MMSE curves and the critical noise
//! below which the spike becomes detectable.

use spiked::priors::{rho_v, Activation, LatentPrior};
use spiked::state_evolution::*;

fn main() -> spiked::Result<()> {
    let latent = LatentPrior::standard_gauss();
    let alpha = 2.0;
    for act in [Activation::LINEAR, Activation::SIGN, Activation::RELU] {
        if act.zero_mean_output() {
            println!("{}: delta_c = {:.4}", act.name(), delta_c(alpha, act, &latent, &SeModel::Wigner)?);
        }
        let rv = rho_v(act, &latent);
        println!("  delta/rho_v^2   q_v*     MMSE_v");
        for r in [0.25, 0.5, 1.0, 2.0, 4.0] {
            let out = se_fixed_point(&SeConfig::default(), r * rv * rv, alpha, act, &latent, &SeModel::Wigner)?;
            let pt = out.preferred();
            println!("  {r:>12} {:>8.5} {:>10.5}", pt.q_v_star, pt.mmse_v);
        }
    }
    let wishart = SeModel::Wishart { beta: 1.0, prior_u: latent };
    println!("Wishart beta=1 linear: delta_c = {:.4}", delta_c(alpha, Activation::LINEAR, &latent, &wishart)?);
    Ok(())
}
