use serde::{Deserialize, Serialize};

use super::bnb::{solve, SolveConfig, SolveResult, SolveStatus};
use super::bounds::{tighten_bounds, BoundOptions};
use super::model::{add_operational_constraints, encode_qnet, OperationalLimits, VoltageRows};
use crate::env::{EnvSpec, EnvState, FeatureScaling};
use crate::error::Result;
use crate::grid::{lin_voltage_sensitivity, solve_power_flow};
use crate::neural::MlpParams;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DeployConfig {
    /// Distance kept inside the voltage band by the linearized rows (p.u.).
    pub voltage_margin_pu: f64,
    pub enforce_voltage: bool,
    /// Re-linearize at the chosen action and solve again if the nonlinear
    /// check finds a violation.
    pub retry_on_violation: bool,
    pub bounds: BoundOptions,
    pub rel_gap: f64,
    pub time_limit_s: f64,
    pub node_limit: usize,
}

impl Default for DeployConfig {
    fn default() -> Self {
        Self {
            voltage_margin_pu: 0.002,
            enforce_voltage: true,
            retry_on_violation: true,
            bounds: BoundOptions::default(),
            rel_gap: 1e-6,
            time_limit_s: 10.0,
            node_limit: 100_000,
        }
    }
}

impl DeployConfig {
    pub fn solve_config(&self) -> SolveConfig<f64> {
        SolveConfig {
            rel_gap: self.rel_gap,
            time_limit: Some(std::time::Duration::from_secs_f64(self.time_limit_s)),
            node_limit: self.node_limit,
            ..SolveConfig::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeployOutcome {
    pub action_kw: Vec<f64>,
    pub result: SolveResult<f64>,
    /// Solve time summed over the initial solve and any retry.
    pub solve_time_s: f64,
    pub retried: bool,
    /// The model was infeasible and the zero-dispatch fallback was used.
    pub fallback: bool,
}

/// Nodes whose voltage the deployment protects: the monitored set, minus the slack.
fn protected_nodes(spec: &EnvSpec) -> Vec<usize> {
    let slack = spec.network.slack_node;
    match &spec.config.monitored_nodes {
        Some(n) => n.iter().copied().filter(|&m| m != slack).collect(),
        None => (0..spec.network.node_count).filter(|&m| m != slack).collect(),
    }
}

/// Zero dispatch pushed into the state-of-charge-feasible range.
pub fn fallback_action(spec: &EnvSpec, soc: &[f64], dt_h: f64) -> Vec<f64> {
    spec.ess
        .iter()
        .zip(soc)
        .map(|(e, &s)| {
            let (lo, hi) = e.feasible_power(s, dt_h);
            0.0f64.clamp(lo, hi)
        })
        .collect()
}

/// Voltage rows linearized around dispatch `base_kw`; `None` if the base
/// power flow does not converge.
fn voltage_rows(
    spec: &EnvSpec,
    load: &[f64],
    pv: &[f64],
    base_kw: &[f64],
    margin: f64,
) -> Option<VoltageRows> {
    let inj = spec.injection(load, pv, base_kw);
    let (sens, _) = lin_voltage_sensitivity(&spec.network, &inj, &spec.ess_nodes()).ok()?;
    let nodes = protected_nodes(spec);
    Some(VoltageRows {
        base_v: nodes.iter().map(|&m| sens.base_v[m]).collect(),
        sens: nodes.iter().map(|&m| sens.matrix[m].clone()).collect(),
        nodes,
        base_kw: base_kw.to_vec(),
        base_kva: spec.network.base_kva(),
        v_min: spec.network.v_min_pu,
        v_max: spec.network.v_max_pu,
        margin,
    })
}

fn band_ok(spec: &EnvSpec, load: &[f64], pv: &[f64], kw: &[f64]) -> bool {
    let pf = match solve_power_flow(&spec.network, &spec.injection(load, pv, kw)) {
        Ok(pf) if pf.converged => pf,
        _ => return false,
    };
    let (lo, hi) = (spec.network.v_min_pu, spec.network.v_max_pu);
    protected_nodes(spec).iter().all(|&m| {
        let v = pf.voltage(m);
        v >= lo - 1e-9 && v <= hi + 1e-9
    })
}

/// One online step: maximize the critic over the actions that satisfy the
/// power, state-of-charge and linearized voltage limits at `state`.
///
/// `load_kw`/`pv_kw` are the exogenous records of the current step.
pub fn deploy_step(
    critic: &MlpParams<f64>,
    scaling: &FeatureScaling,
    spec: &EnvSpec,
    state: &EnvState,
    load_kw: &[f64],
    pv_kw: &[f64],
    dt_h: f64,
    cfg: &DeployConfig,
) -> Result<DeployOutcome> {
    let features = scaling.features(state);
    let n_ess = spec.n_ess();
    let limits = OperationalLimits {
        ess: &spec.ess,
        soc: &state.soc,
        dt_h,
        action_mid_kw: &scaling.action_mid_kw,
        action_half_kw: &scaling.action_half_kw,
    };
    let fallback = |solve_time_s: f64, result: SolveResult<f64>| DeployOutcome {
        action_kw: fallback_action(spec, &state.soc, dt_h),
        result,
        solve_time_s,
        retried: false,
        fallback: true,
    };
    let empty = SolveResult {
        action: Vec::new(),
        objective: f64::NEG_INFINITY,
        status: SolveStatus::Infeasible,
        gap: f64::INFINITY,
        nodes: 0,
        lp_iterations: 0,
        wall_time_s: 0.0,
        values: Vec::new(),
    };
    let Some(action_box) = limits.action_box() else {
        return Ok(fallback(0.0, empty));
    };

    let mut input_box: Vec<(f64, f64)> = features.iter().map(|&f| (f, f)).collect();
    input_box.extend(action_box.iter().copied());
    let mut state_in: Vec<Option<f64>> = features.iter().map(|&f| Some(f)).collect();
    state_in.extend(std::iter::repeat_n(None, n_ess));

    let solve_cfg = cfg.solve_config();
    let start = std::time::Instant::now();
    let bounds = tighten_bounds(critic, &input_box, &cfg.bounds)?;
    let base_model = encode_qnet(critic, &state_in, &bounds)?;

    let run = |base_kw: &[f64]| -> Result<Option<SolveResult<f64>>> {
        let mut model = base_model.clone();
        let vr = if cfg.enforce_voltage {
            voltage_rows(spec, load_kw, pv_kw, base_kw, cfg.voltage_margin_pu)
        } else {
            None
        };
        if !add_operational_constraints(&mut model, &limits, vr.as_ref())? {
            return Ok(None);
        }
        Ok(Some(solve(&model, &solve_cfg)))
    };

    let base_kw = fallback_action(spec, &state.soc, dt_h);
    let Some(mut result) = run(&base_kw)? else {
        return Ok(fallback(start.elapsed().as_secs_f64(), empty));
    };
    if result.action.is_empty() {
        return Ok(fallback(start.elapsed().as_secs_f64(), result));
    }
    let mut action_kw = scaling.to_kw(&result.action);
    let mut retried = false;
    if cfg.enforce_voltage && cfg.retry_on_violation && !band_ok(spec, load_kw, pv_kw, &action_kw) {
        retried = true;
        if let Some(second) = run(&action_kw)? {
            if !second.action.is_empty() {
                let kw = scaling.to_kw(&second.action);
                // keep the retry only if it actually repairs the violation
                if band_ok(spec, load_kw, pv_kw, &kw) {
                    action_kw = kw;
                    result = second;
                }
            }
        }
    }
    Ok(DeployOutcome {
        action_kw,
        result,
        solve_time_s: start.elapsed().as_secs_f64(),
        retried,
        fallback: false,
    })
}
