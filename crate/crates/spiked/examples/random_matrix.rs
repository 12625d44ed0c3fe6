//! Bulk edge of the LAMP noise operator across the noise level, and its
//! limiting spectral density at the critical point.

use spiked::rmt::*;

fn main() -> spiked::Result<()> {
    let alpha = 2.0;
    println!("delta  s_edge     lambda_max");
    for delta in [0.5, 1.5, 3.0, 4.5, 8.0] {
        let e = solve_s_edge(&BaseLaw::semicircle(delta)?, alpha)?;
        println!("{delta:<6} {:<10.5} {:.6}", e.s_edge, e.lambda_max);
    }
    let xs: Vec<f64> = (0..=12).map(|i| -5.0 + 0.5 * i as f64).collect();
    let bulk = bulk_density(&BaseLaw::semicircle(3.0)?, alpha, &xs, DENSITY_EPS)?;
    println!("density at delta = 3 (zero atom {:.2}):", bulk.zero_atom);
    for (x, d) in xs.iter().zip(&bulk.mu_density) {
        println!("  {x:>5.1} {d:.4} {}", "#".repeat((d * 100.0) as usize));
    }
    let mp = BaseLaw::marchenko_pastur(1.0, 2.0)?;
    println!("Wishart beta=1 delta=2: lambda_max {:.5}", solve_s_edge(&mp, alpha)?.lambda_max);
    Ok(())
}
