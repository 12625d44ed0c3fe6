//! LAMP preconditioned by a covariance estimated from independent spike
//! samples, for when the weights of the generative layer are unknown.

use spiked::priors::*;
use spiked::spectral::*;

fn main() -> spiked::Result<()> {
    let (p, delta) = (400, 1.5);
    let g = LatentPrior::standard_gauss();
    let gm = GenerativeModel::sample(p, p / 2, g, Activation::LINEAR, 21)?;
    let inst = spiked_wigner(&gm, delta, 21)?;
    let oracle = lamp_estimate(&inst, &gm, &lamp_coefficients(Activation::LINEAR, &g, None)?, &EigConfig::default())?;
    println!("known weights:        overlap_sq {:.4}", oracle.overlap_sq.unwrap_or(f64::NAN));
    for n in [1_000, 10_000, 50_000] {
        let sigma = empirical_second_moment(&sample_spikes(&gm, n, 22));
        let op = build_cov_lamp(&inst.y, &sigma, delta)?;
        let mut r = leading_eigs(&op, 2, &EigConfig::default())?;
        r.set_truth(&inst.truth.v);
        println!("{n:>6} spike samples: overlap_sq {:.4}", r.overlap_sq.unwrap_or(f64::NAN));
    }
    Ok(())
}
