//! Composite load model identification with tensor-train densities.
//!
//! The crate simulates a ZIP + third-order induction-motor load against a
//! measured bus trace, represents the joint density of motor states and
//! uncertain parameters on a tensor-product grid in tensor-train format,
//! drives it with a discretized Fokker–Planck operator, and reads parameter
//! estimates off the density marginals.

pub mod cli;
pub mod estimate;
pub mod fokker_planck;
pub mod grid;
pub mod load_model;
pub mod tt;
