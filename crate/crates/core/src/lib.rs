pub mod autodiff;
pub mod config;
pub mod conjugate;
pub mod darcy;
pub mod diagnostics;
pub mod error;
pub mod fieldio;
pub mod grid;
pub mod nn;
pub mod pcn;
pub mod prior;
pub mod rng;
pub mod sparse;
pub mod surrogate;
pub mod vae;
pub mod vi;

pub use error::{Error, Result};
