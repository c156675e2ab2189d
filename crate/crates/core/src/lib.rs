//! Short-packet multiuser MIMO with zero-forcing detection under
//! least-squares channel-estimation errors.
//!
//! The crate is layered bottom-up:
//!
//! - [`numerics`]: special functions, quadrature rules and root finding.
//! - [`linalg`]: dense complex matrices, Householder QR and seeded Gaussian sampling.
//! - [`channel`]: system configuration, derived per-stream statistics and the
//!   frame-level link simulator.
//! - [`analytics`]: closed-form outage probability, densities and average SNR.
//! - [`planner`]: rate design, finite-blocklength error probability, goodput and
//!   stream-count optimization.
//! - [`montecarlo`]: reproducible batched simulation and analytic-vs-empirical reports.
//! - [`cli`]: sweep and validation drivers behind the `zfsp` binary.

pub mod analytics;
pub mod channel;
pub mod cli;
pub mod error;
pub mod linalg;
pub mod montecarlo;
pub mod numerics;
pub mod planner;

pub use error::{Error, Result};
