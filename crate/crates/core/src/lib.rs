//! Decomposed linear dynamical systems.
//!
//! A trajectory `y_t = D x_t` is modelled with latent dynamics
//! `x_t = (Σ_m c_mt f_m) x_{t−1}`: at every step a sparse coefficient vector
//! `c_t` mixes a small dictionary of linear operators. The [`discrete`] module
//! learns `D` and `{f_m}` by alternating sparse inference with projected
//! gradient steps; [`continuous`] learns generators `{G_l}` applied through
//! the matrix exponential. [`systems`] provides the synthetic benchmarks and
//! [`io`] the configuration, archive and experiment plumbing behind the CLI.

pub mod continuous;
pub mod discrete;
pub mod error;
pub mod io;
pub mod linalg;
pub mod metrics;
pub mod sparse;
pub mod systems;

pub use continuous::{ContinuousModel, CtTrainConfig};
pub use discrete::{CoefficientPath, DiscreteModel, TrainConfig, TrainTrace};
pub use error::{Error, Result};
pub use linalg::{Matrix, Vector};
pub use metrics::EvalReport;
pub use sparse::{LassoMode, LassoProblem, SolverReport};
pub use systems::{SystemSpec, Trajectory};
