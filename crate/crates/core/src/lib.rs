//! Spectral discretization laboratory for Fokker-Planck Gibbs sampling on periodic domains.

pub mod error;
pub mod evolve;
pub mod generator;
pub mod lattice;
pub mod potential;
pub mod sampler;
pub mod semianalytic;
pub mod special;
pub mod spectral;

pub use error::{Error, Result};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
