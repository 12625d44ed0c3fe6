//! PCA on the raw observation next to LAMP on the same instances.

use spiked::priors::*;
use spiked::spectral::*;

fn main() -> spiked::Result<()> {
    let p = 2000;
    let g = LatentPrior::standard_gauss();
    let coeffs = lamp_coefficients(Activation::LINEAR, &g, None)?;
    println!("delta  pca_overlap  lamp_overlap  pca_mse  lamp_mse");
    for delta in [0.5, 0.9, 1.5, 2.5] {
        let gm = GenerativeModel::sample(p, p / 2, g, Activation::LINEAR, 9)?;
        let inst = spiked_wigner(&gm, delta, 9)?;
        let pca = pca_estimate(&inst, &EigConfig::default())?;
        let lamp = lamp_estimate(&inst, &gm, &coeffs, &EigConfig::default())?;
        println!(
            "{delta:<6} {:<12.4} {:<13.4} {:<8.4} {:.4}",
            pca.overlap_sq.unwrap_or(f64::NAN),
            lamp.overlap_sq.unwrap_or(f64::NAN),
            pca.mse(&inst.truth.v),
            lamp.mse(&inst.truth.v)
        );
    }
    Ok(())
}
