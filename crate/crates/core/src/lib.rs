//! Simulator for continuously measured quantum systems.
//!
//! Three equivalent descriptions of a monitored system are implemented and
//! cross-checked against each other:
//!
//! * conditioned propagation with an effective non-Hermitian generator, where
//!   the shrinking norm is the probability density of the readout
//!   ([`selective`]);
//! * the norm-preserving stochastic Schroedinger equation driven by white
//!   noise ([`stochastic`]);
//! * master-equation evolution of the readout-averaged density matrix,
//!   together with dephasing toy models ([`nonselective`]).
//!
//! On top of these sit weighted readout ensembles ([`ensemble`]), the
//! transition-monitoring statistics for a resonantly driven two-level system
//! ([`monitor`]), and discrete microscopic realizations via projective chains
//! and repeated soft two-outcome observations ([`meter`]).
//!
//! Conventions: hbar = 1, energies and times dimensionless, all propagation
//! in the interaction-picture energy basis on one shared uniform time grid.

// `!(x > 0.0)` guards are deliberate: they reject NaN, which `x <= 0.0`
// would let through.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod ensemble;
pub mod error;
pub mod exec;
pub mod grid;
pub mod io;
pub mod linalg;
pub mod meter;
pub mod monitor;
pub mod nonselective;
pub mod readout;
pub mod rng;
pub mod selective;
pub mod state;
pub mod stochastic;
pub mod system;

pub use error::{QcError, Result};
pub use grid::TimeGrid;
pub use linalg::CMatrix;
pub use readout::{sample_noise_path, NoisePath, ReadoutTrajectory};
pub use state::{DensityMatrix, QuantumState};
pub use system::{MeasurementSpec, SystemSpec};
