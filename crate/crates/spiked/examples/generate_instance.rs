//! Sample a spiked Wigner and a spiked Wishart instance from a linear generative
//! prior and write them to disk (CSV and binary containers).

use spiked::io;
use spiked::priors::*;

fn main() -> spiked::Result<()> {
    let (p, k, seed) = (200, 100, 7);
    let gm = GenerativeModel::sample(p, k, LatentPrior::standard_gauss(), Activation::LINEAR, seed)?;
    let wig = spiked_wigner(&gm, 1.0, seed)?;
    let wis = spiked_wishart(&gm, &LatentPrior::standard_gauss(), 1.5, 1.0, seed)?;
    println!("rho_v = {:.4}, |v*|^2/p = {:.4}", gm.rho_v(), wig.truth.v.norm_squared() / p as f64);
    println!("Wigner Y: {:?}, Wishart Y: {:?}", wig.y.shape(), wis.y.shape());

    let dir = std::env::temp_dir().join("spiked-example");
    std::fs::create_dir_all(&dir)?;
    io::save_matrix(dir.join("wigner_y.bin"), &wig.y)?;
    io::save_matrix(dir.join("weights.csv"), &gm.w)?;
    let back = io::load_matrix(dir.join("wigner_y.bin"))?;
    assert_eq!(back, wig.y);
    println!("wrote {}", dir.display());
    Ok(())
}
