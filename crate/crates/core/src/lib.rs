//! Energy-storage dispatch on a radial feeder with constraint-enforcing
//! deployment of learned action-value networks.
//!
//! The crate trains actor-critic agents (DDPG, TD3, SAC) against a
//! branch-flow simulation of the feeder, then deploys the trained critic by
//! encoding it as a mixed-integer program. Storage limits and linearized
//! voltage limits are appended to the program, so every deployed action
//! respects them.
//!
//! Numerical kernels ([`grid`], [`neural`], [`qmip`]) are generic over
//! [`Scalar`]; the aliases below fix them at `f64`, which is what the
//! environment, the agents and the harness use.

pub mod agents;
pub mod env;
pub mod error;
pub mod grid;
pub mod harness;
pub mod neural;
pub mod qmip;
pub mod scalar;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Network = grid::Network<f64>;
pub type NodalInjection = grid::NodalInjection<f64>;
pub type PowerFlowSolution = grid::PowerFlowSolution<f64>;
pub type Mlp = neural::MlpParams<f64>;
pub type MipModel = qmip::MipModel<f64>;
pub type SolveResult = qmip::SolveResult<f64>;
