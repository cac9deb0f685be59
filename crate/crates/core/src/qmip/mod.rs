//! Deployment of a trained critic as a mixed-integer program.
//!
//! The critic's ReLU units are encoded with positive/negative parts and one
//! binary each, big-M coefficients come from certified bounds, storage and
//! linearized voltage limits are appended on the action variables, and a
//! small built-in branch-and-bound maximizes the Q output.

mod bnb;
mod bounds;
mod deploy;
mod model;
mod simplex;

pub use bnb::{solve, SolveConfig, SolveResult, SolveStatus};
pub use bounds::{tighten_bounds, BoundOptions, UnitBounds};
pub use deploy::{deploy_step, fallback_action, DeployConfig, DeployOutcome};
pub use model::{
    add_operational_constraints, encode_qnet, MipModel, NetEncoding, OperationalLimits, UnitVars, VarKind,
    Variable, VoltageRows,
};
pub use simplex::{solve_lp, LinearConstraint, LinearProgram, LpOptions, LpSolution, LpStatus, Sense};
