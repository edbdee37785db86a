//! Numerical laboratory for heralded single-rail (Fock-basis) qubits.
//!
//! The crate simulates a seeded two-mode-squeezing source that heralds
//! `alpha|0> + b|1>` qubits in its signal mode, pushes them through
//! calibrated loss and decoherence channels, synthesizes balanced-homodyne
//! quadrature records, reconstructs density matrices by iterative maximum
//! likelihood, and evaluates the figures of merit (Wigner functions,
//! generalized efficiency, model curves against the idler count rate).
//!
//! Module map:
//! - [`fock`]: truncated Fock-space states, operators, tensor structure.
//! - [`source`]: seeded squeezing evolution and click heralding.
//! - [`channels`]: photon loss and the coherence scaling.
//! - [`homodyne`]: quadrature statistics and record synthesis.
//! - [`tomography`]: iterative maximum-likelihood reconstruction.
//! - [`analysis`]: Wigner functions, efficiency, model curves, fitting.
//! - [`pipeline`]: config-driven runner with reproducible artifacts.

pub mod analysis;
pub mod channels;
pub mod error;
pub mod fock;
pub mod homodyne;
pub mod pipeline;
pub mod source;
pub mod tomography;

pub use error::{Error, Result};
pub use fock::{DensityMatrix, FockVector, Mode, ModeOperator, DEFAULT_DIM};
pub use source::{HeraldOutcome, ModelParams};
