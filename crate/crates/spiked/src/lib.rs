pub mod error;
pub mod quadrature;
pub mod rng;

pub use error::{Error, Result};
pub mod priors;
pub mod channels;
pub mod state_evolution;
pub mod rmt;
pub mod amp;
pub mod spectral;
pub mod io;
pub mod cli;
