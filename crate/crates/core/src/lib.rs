//! Transfer-operator numerics for nonautonomous compositions of expanding maps.
//!
//! The crate is organised bottom-up:
//!
//! * [`maps`]: parameterized map families, branches, inverse branches and
//!   hypothesis checks;
//! * [`density`]: cell-averaged densities, L¹ geometry and the quasi-Hölder
//!   seminorm;
//! * [`transfer`]: Ulam matrices, sequence application, averaged operators,
//!   fixed densities, spectra, Lasota–Yorke fits and perturbation probes;
//! * [`cones`]: log-Hölder cones and Hilbert projective metrics;
//! * [`nonautonomous`]: parameter sequences and the density-evolution
//!   experiments;
//! * [`birkhoff`]: time averages along orbits, covariance decay and
//!   Lévy–Prokhorov estimates;
//! * [`network`]: coupled circle maps on a time-varying graph;
//! * [`experiment`]: configuration, artifact writing and run manifests behind
//!   the `nonstat-dyn` binary.

// `!(x >= 0.0)` style guards are deliberate: they also reject NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod birkhoff;
pub mod cones;
pub mod density;
pub mod error;
pub mod experiment;
pub mod maps;
pub mod network;
pub mod nonautonomous;
pub mod rng;
pub mod transfer;

pub use density::GridDensity;
pub use error::{Error, Result};
pub use maps::{Domain, MapFamily, MapInstance};
pub use transfer::UlamOperator;
