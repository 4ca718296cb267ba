//! Numerical core of the circuit laboratory.
//!
//! Everything here is pure computation over owned buffers: dense layers with
//! explicit backward passes, the five VAE objectives and their training loop,
//! synthetic dataset generators, the four intervention levels, the derived
//! circuit metrics, a logistic probe and the statistical battery. The crate is
//! `no_std` and only needs `alloc`; file formats, CSV parsing and the CLI live
//! in the `circuitlab` crate.

#![no_std]
#![deny(unsafe_code)]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod adam;
pub mod checkpoint;
pub mod data;
mod error;
pub mod interventions;
pub mod math;
pub mod metrics;
pub mod probe;
pub mod rng;
pub mod stats;
pub mod tensor;
pub mod vae;

pub use error::{Error, Result};
