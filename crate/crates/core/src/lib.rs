//! Sparse state-vector simulation of QD-cavity mediated hyperparallel
//! photonic devices: a polarization and a spatial transistor, a router
//! and a DRAM, all heralded on detector silence.

pub mod analysis;
pub mod cli;
pub mod coeffs;
pub mod devices;
pub mod elements;
pub mod error;
pub mod registry;
pub mod state;

pub use error::{Error, Result};
