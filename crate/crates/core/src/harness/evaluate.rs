use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::config::DeployMode;
use super::oracle::OracleResult;
use super::report::{DayMetrics, MetricsReport};
use super::scenario::Scenario;
use crate::agents::{policy_mean, Algorithm};
use crate::env::{Env, FeatureScaling};
use crate::error::{Error, Result};
use crate::qmip::{deploy_step, DeployConfig};
use crate::Mlp;

/// A frozen dispatch rule.
#[derive(Debug, Clone)]
pub enum Policy {
    /// Maximize the critic under the operational constraints.
    Mip { critic: Mlp, scaling: FeatureScaling, config: DeployConfig },
    /// Apply the actor's deterministic action.
    Greedy { actor: Mlp, algorithm: Algorithm, scaling: FeatureScaling },
}

impl Policy {
    pub fn mode(&self) -> DeployMode {
        match self {
            Policy::Mip { .. } => DeployMode::Mip,
            Policy::Greedy { .. } => DeployMode::GreedyActor,
        }
    }
}

/// One deployed step, with everything needed to recount the metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepTrace {
    pub day: usize,
    pub t: usize,
    pub action_kw: Vec<f64>,
    /// State of charge after the step.
    pub soc: Vec<f64>,
    /// Voltage magnitude at every node after the step.
    pub voltages: Vec<f64>,
    pub cost_eur: f64,
    pub penalty: f64,
    pub voltage_violations: usize,
    pub soc_clip_events: usize,
    pub solve_time_s: f64,
    /// MIP status, or `None` in greedy mode.
    pub status: Option<String>,
    pub retried: bool,
    pub fallback: bool,
}

#[derive(Debug, Clone)]
pub struct DeploymentRun {
    pub report: MetricsReport,
    pub trace: Vec<StepTrace>,
}

/// Rolls one test day (dataset day index) with `policy`.
pub fn run_day(scenario: &Scenario, policy: &Policy, day: usize) -> Result<Vec<StepTrace>> {
    let spec = &scenario.spec;
    let data = &scenario.data;
    let mut env = Env::new(spec, data)?;
    let mut state = env.reset(day)?;
    let dt = data.timestep_hours;
    let mut out = Vec::with_capacity(data.steps_per_day);
    loop {
        let i = data.index(day, state.t);
        let (action_kw, solve_time_s, status, retried, fallback) = match policy {
            Policy::Mip { critic, scaling, config } => {
                let o = deploy_step(critic, scaling, spec, &state, &data.load_kw[i], &data.pv_kw[i], dt, config)?;
                let status = format!("{:?}", o.result.status);
                (o.action_kw, o.solve_time_s, Some(status), o.retried, o.fallback)
            }
            Policy::Greedy { actor, algorithm, scaling } => {
                let start = Instant::now();
                let u = policy_mean(actor, *algorithm, scaling.action_dim(), &scaling.features(&state))?;
                (scaling.to_kw(&u), start.elapsed().as_secs_f64(), None, false, false)
            }
        };
        let t = state.t;
        let step = env.step(&action_kw)?;
        out.push(StepTrace {
            day,
            t,
            action_kw: step.applied_kw.clone(),
            soc: step.next_state.soc.clone(),
            voltages: step.powerflow.voltages(),
            cost_eur: step.cost_eur,
            penalty: step.penalty,
            voltage_violations: step.voltage_violations,
            soc_clip_events: step.soc_clip_events,
            solve_time_s,
            status,
            retried,
            fallback,
        });
        state = step.next_state;
        if step.done {
            return Ok(out);
        }
    }
}

/// Deploys `policy` on every test day of the scenario.
///
/// Days are independent and run on worker threads; results are assembled in
/// day order, so the trace does not depend on scheduling. With `oracle`
/// (one result per test day, same order) the report includes cost errors.
pub fn run_deployment(
    scenario: &Scenario,
    policy: &Policy,
    label: &str,
    algorithm: Option<Algorithm>,
    oracle: Option<&[OracleResult]>,
) -> Result<DeploymentRun> {
    if let Some(o) = oracle {
        if o.len() != scenario.test_days.len() || o.iter().zip(&scenario.test_days).any(|(r, d)| r.day != *d) {
            return Err(Error::Report("oracle results do not match the test days".into()));
        }
    }
    let days = &scenario.test_days;
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get()).min(days.len()).max(1);
    let per_day: Vec<Result<Vec<StepTrace>>> = if workers == 1 {
        days.iter().map(|&d| run_day(scenario, policy, d)).collect()
    } else {
        let mut slots: Vec<Option<Result<Vec<StepTrace>>>> = (0..days.len()).map(|_| None).collect();
        std::thread::scope(|s| {
            for (chunk_idx, chunk) in slots.chunks_mut(days.len().div_ceil(workers)).enumerate() {
                let base = chunk_idx * days.len().div_ceil(workers);
                s.spawn(move || {
                    for (k, slot) in chunk.iter_mut().enumerate() {
                        *slot = Some(run_day(scenario, policy, days[base + k]));
                    }
                });
            }
        });
        slots.into_iter().map(|s| s.expect("every day evaluated")).collect()
    };
    let mut trace = Vec::new();
    let mut metrics = Vec::new();
    for (k, r) in per_day.into_iter().enumerate() {
        let steps = r?;
        let mut m = DayMetrics::from_trace(days[k], &steps);
        if let Some(o) = oracle {
            m.set_oracle(o[k].cost_eur);
        }
        metrics.push(m);
        trace.extend(steps);
    }
    let step_times: Vec<f64> = trace.iter().map(|s| s.solve_time_s).collect();
    let report = MetricsReport::new(
        label,
        algorithm.map(|a| a.name().to_string()),
        policy.mode().name(),
        scenario.fingerprint()?,
        metrics,
        &step_times,
        oracle.map(|o| format!("dp oracle, {} SOC points x {} dispatch levels per unit", o[0].soc_points, o[0].action_levels)),
    );
    Ok(DeploymentRun { report, trace })
}

/// The oracle itself as a report row (cost error 0 by construction).
pub fn oracle_report(scenario: &Scenario, oracle: &[OracleResult], solve_time_s: &[f64]) -> Result<MetricsReport> {
    let days = oracle
        .iter()
        .zip(solve_time_s)
        .map(|(o, &t)| {
            let mut m = DayMetrics {
                day: o.day,
                cost_eur: o.cost_eur,
                penalty_eur: 0.0,
                voltage_violations: 0,
                soc_clip_events: 0,
                solve_time_s: t,
                oracle_cost_eur: None,
                cost_error_pct: None,
            };
            m.set_oracle(o.cost_eur);
            m
        })
        .collect();
    let per_step: Vec<f64> = solve_time_s
        .iter()
        .zip(oracle)
        .flat_map(|(&t, o)| std::iter::repeat_n(t / o.schedule_kw.len().max(1) as f64, o.schedule_kw.len()))
        .collect();
    Ok(MetricsReport::new(
        "oracle",
        None,
        "oracle",
        scenario.fingerprint()?,
        days,
        &per_step,
        Some(format!(
            "dp oracle, {} SOC points x {} dispatch levels per unit",
            oracle.first().map_or(0, |o| o.soc_points),
            oracle.first().map_or(0, |o| o.action_levels)
        )),
    ))
}
