//! Numerical laboratory for continuous-time branching random walks on `Z^d`
//! with a single reproduction/death source at the origin and absorption at
//! every lattice site.
//!
//! The crate checks the long-time behaviour of the particle-number moments by
//! three independent routes:
//!
//! * spectral analysis of the walk generator through lattice Green's
//!   functions ([`walk_kernel`], [`spectral`]),
//! * the linear moment hierarchy integrated on a truncated lattice
//!   ([`moment_solver`]),
//! * exact event-driven simulation of the particle system ([`montecarlo`]).
//!
//! [`asymptotics`] holds the regime tables the three routes are compared
//! against and [`config`] describes whole experiments as JSON.
//!
//! Data-parallel loops (quadrature shells, operator rows, Monte Carlo
//! replicas) go through [`Execution`]; with the default `parallel` feature
//! they run on rayon, otherwise sequentially. Both paths reduce in a fixed
//! order and produce bit-identical results.

pub mod asymptotics;
pub mod branching_law;
pub mod config;
mod error;
mod exec;
pub mod moment_solver;
pub mod montecarlo;
pub mod numerics;
pub mod spectral;
pub mod walk_kernel;

pub use error::{Error, Result};
pub use exec::Execution;

pub use asymptotics::AsymptoteForm;
pub use branching_law::OffspringLaw;
pub use config::ModelConfig;
pub use moment_solver::{MomentTrajectory, TruncatedOperator, Variant};
pub use montecarlo::SimulationSummary;
pub use spectral::{Regime, RegimeReport};
pub use walk_kernel::{KernelSpec, SymbolGrid, Variance, WalkKernel};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
