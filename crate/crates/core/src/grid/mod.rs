//! Radial feeder model, branch-flow power flow and linear voltage sensitivities.

mod network;
mod powerflow;
mod sensitivity;

pub use network::{bundled_feeder34, bundled_feeder6, Line, Network, NetworkFile};
pub use powerflow::{
    branch_flow_residual, solve_power_flow, solve_power_flow_with, violation_counts,
    NodalInjection, PowerFlowSolution, SweepOptions,
};
pub use sensitivity::{lin_voltage_sensitivity, VoltageSensitivity};
