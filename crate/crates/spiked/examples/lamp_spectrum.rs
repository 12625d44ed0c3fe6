//! Top of the LAMP spectrum below and above the critical noise, against the
//! random-matrix predictions for the bulk edge and the eigenvector overlap.

use spiked::priors::*;
use spiked::rmt::{epsilon_overlap, solve_s_edge, BaseLaw};
use spiked::spectral::*;

fn main() -> spiked::Result<()> {
    let (p, alpha) = (2000, 2.0);
    let coeffs = lamp_coefficients(Activation::LINEAR, &LatentPrior::standard_gauss(), None)?;
    println!("delta  lambda_1  lambda_2  edge     overlap_sq  eps");
    for delta in [1.0, 2.0, 4.5] {
        let gm = GenerativeModel::sample(p, p / 2, LatentPrior::standard_gauss(), Activation::LINEAR, 5)?;
        let inst = spiked_wigner(&gm, delta, 5)?;
        let r = lamp_estimate(&inst, &gm, &coeffs, &EigConfig::default())?;
        let edge = solve_s_edge(&BaseLaw::semicircle(delta)?, alpha)?.lambda_max;
        println!(
            "{delta:<6} {:<9.4} {:<9.4} {edge:<8.4} {:<11.4} {:.4}",
            r.eigenvalues[0],
            r.eigenvalues[1],
            r.overlap_sq.unwrap_or(f64::NAN),
            epsilon_overlap(alpha, delta)?
        );
    }
    Ok(())
}
