//! Replica mutual information along a noise grid, with the I-MMSE relation
//! checked by a finite difference in 1/delta.

use spiked::priors::{Activation, LatentPrior};
use spiked::state_evolution::mutual_information;

fn main() -> spiked::Result<()> {
    let g = LatentPrior::standard_gauss();
    let alpha = 2.0;
    println!("delta   i_RS       q_v*     di/dlambda  (1-q^2)/4");
    for delta in [0.5, 1.0, 2.0, 3.0, 4.0] {
        let mi = mutual_information(delta, alpha, Activation::LINEAR, &g)?;
        let (l, h) = (1.0 / delta, 1e-4);
        let up = mutual_information(1.0 / (l + h), alpha, Activation::LINEAR, &g)?.i_rs;
        let dn = mutual_information(1.0 / (l - h), alpha, Activation::LINEAR, &g)?.i_rs;
        let q = mi.q_v_star;
        println!("{delta:<7} {:<10.6} {q:<8.5} {:<11.6} {:.6}", mi.i_rs, (up - dn) / (2.0 * h), (1.0 - q * q) / 4.0);
    }
    Ok(())
}
