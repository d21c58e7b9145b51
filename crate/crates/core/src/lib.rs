//! Learned coarse-to-fine correction for 2-D variable-speed wave propagation,
//! with Parareal integration.

pub mod coarse;
pub mod data;
pub mod error;
pub mod fine;
pub mod grid;
pub mod io;
pub mod linalg;
pub mod nn;
pub mod parareal;
pub mod propagator;
pub mod trainer;
pub mod transfer;

pub use error::{Error, Result};
