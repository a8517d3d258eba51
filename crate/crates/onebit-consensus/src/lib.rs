//! Simulation and analysis of one-bit consensus for controllable linear
//! multi-agent systems over noisy channels, under fixed and Markovian
//! switching topologies.
//!
//! The crate is organized along the pipeline of the protocol:
//!
//! * [`linsys`]: controllable single-input systems, Brunovsky canonical
//!   form, gain synthesis and ZOH discretization.
//! * [`topology`]: directed communication graphs, Laplacian spectra,
//!   selection matrices and the Markov switching process.
//! * [`channel`]: one-bit quantized transmission through additive
//!   Gaussian noise.
//! * [`protocol`]: the recursive projection estimator and the
//!   consensus controller.
//! * [`engine`]: replicated closed-loop simulation with decimated
//!   trace recording.
//! * [`analysis`]: theorem constants, step-size thresholds,
//!   convergence-rate regimes, slope fits and the difference-equation
//!   oracle.
//! * [`scenario`]: JSON scenario files and their validation.

pub mod analysis;
pub mod channel;
pub mod engine;
pub mod error;
pub mod linsys;
pub mod protocol;
pub mod scenario;
pub mod topology;

pub use error::{Error, Result};
