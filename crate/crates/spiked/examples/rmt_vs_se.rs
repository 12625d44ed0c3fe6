//! Eigenvector overlap predicted by random-matrix theory against the
//! state-evolution overlap on a noise grid (linear prior).

use spiked::cli::{compare_rmt_se, write_compare_csv};

fn main() -> spiked::Result<()> {
    let grid: Vec<f64> = (1..=12).map(|i| 0.3 * i as f64).collect();
    let rows = compare_rmt_se(2.0, &grid)?;
    write_compare_csv(&rows, std::io::stdout().lock())?;
    let worst = rows.iter().map(|r| r.abs_diff).fold(0.0, f64::max);
    eprintln!("max |diff| = {worst:.2e}");
    Ok(())
}
