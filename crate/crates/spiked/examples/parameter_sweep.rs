//! A small (alpha, delta) sweep driven by a key = value config, run on two
//! workers and written as CSV.

use spiked::cli::{run_sweep, ExperimentConfig};

fn main() -> spiked::Result<()> {
    let cfg = ExperimentConfig::from_text(
        "activation = sign\n\
         alpha = 0.5, 2\n\
         delta = lin:0.25:2.5:4\n\
         methods = se, pca\n\
         p = 300\n\
         seeds = 2\n",
    )?;
    let summary = run_sweep(&cfg, 2, std::io::stdout())?;
    eprintln!("{} points, {} rows, {} errors", summary.points, summary.rows, summary.errors);
    Ok(())
}
