pub mod config;
pub mod error;
pub mod field;
pub mod hedging;
pub mod heston;
pub mod ie;
pub mod mc;
pub mod model;
pub mod quadrature;
pub mod rng;
pub mod sde;
pub mod semi_markov;
pub mod workflow;

pub use error::{Error, Result};
