use serde::{Deserialize, Serialize};

use super::data::TimeSeriesDataset;
use super::ess::{soc_update, EssSpec};
use crate::error::{Error, Result};
use crate::grid::{solve_power_flow, violation_counts};
use crate::{Network, NodalInjection, PowerFlowSolution};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnvConfig {
    /// Weight of the voltage penalty in the reward (EUR per p.u. of violation).
    pub sigma: f64,
    /// Lagging power factor of every load.
    pub power_factor: f64,
    /// Nodes whose voltage is penalized; `None` monitors every node.
    pub monitored_nodes: Option<Vec<usize>>,
    /// Penalty applied when the power flow diverges; the episode then ends.
    pub divergence_penalty: f64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            sigma: 200.0,
            power_factor: 0.95,
            monitored_nodes: None,
            divergence_penalty: 1.0e4,
        }
    }
}

/// Voltage-band penalty for one node: `min(0, (v_max - v_min)/2 - |v0 - v|)`.
pub fn violation_penalty(v_pu: f64, v_min: f64, v_max: f64, v0: f64) -> f64 {
    (0.5 * (v_max - v_min) - (v0 - v_pu).abs()).min(0.0)
}

/// Feeder, storage fleet and reward settings: everything static about the MDP.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvSpec {
    pub network: Network,
    pub ess: Vec<EssSpec>,
    pub config: EnvConfig,
}

impl EnvSpec {
    pub fn new(network: Network, ess: Vec<EssSpec>, config: EnvConfig) -> Result<Self> {
        let spec = Self { network, ess, config };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.ess.is_empty() {
            return Err(Error::Config("at least one storage unit is required".into()));
        }
        for e in &self.ess {
            e.validate()?;
            if e.node >= self.network.node_count || e.node == self.network.slack_node {
                return Err(Error::Config(format!("storage node {} is not a load node", e.node)));
            }
        }
        if !(self.config.power_factor > 0.0 && self.config.power_factor <= 1.0) {
            return Err(Error::Config("power factor must lie in (0, 1]".into()));
        }
        if let Some(nodes) = &self.config.monitored_nodes {
            if nodes.iter().any(|&m| m >= self.network.node_count) {
                return Err(Error::Config("monitored node out of range".into()));
            }
        }
        Ok(())
    }

    pub fn n_ess(&self) -> usize {
        self.ess.len()
    }

    pub fn ess_nodes(&self) -> Vec<usize> {
        self.ess.iter().map(|e| e.node).collect()
    }

    /// Centre of the voltage band, the reference of the penalty.
    pub fn v_nominal(&self) -> f64 {
        0.5 * (self.network.v_min_pu + self.network.v_max_pu)
    }

    /// Per-unit nodal injection for given loads, PV and storage dispatch (kW).
    pub fn injection(&self, load_kw: &[f64], pv_kw: &[f64], ess_kw: &[f64]) -> NodalInjection {
        let base = self.network.base_kva();
        let tan_phi = (1.0 - self.config.power_factor.powi(2)).sqrt() / self.config.power_factor;
        let n = self.network.node_count;
        let mut inj = NodalInjection::zeros(n);
        for m in 0..n {
            if m == self.network.slack_node {
                continue;
            }
            inj.p_pu[m] = (load_kw[m] - pv_kw[m]) / base;
            inj.q_pu[m] = load_kw[m] * tan_phi / base;
        }
        for (e, &p) in self.ess.iter().zip(ess_kw) {
            inj.p_pu[e.node] += p / base;
        }
        inj
    }

    /// Energy cost of one step: price times total nodal net demand times duration.
    pub fn step_cost(&self, price: f64, load_kw: &[f64], pv_kw: &[f64], ess_kw: &[f64], dt_h: f64) -> f64 {
        let net: f64 = load_kw.iter().zip(pv_kw).map(|(l, p)| l - p).sum::<f64>() + ess_kw.iter().sum::<f64>();
        price * net * dt_h
    }

    /// `sigma * sum_m C_m` over monitored nodes; never positive.
    pub fn penalty(&self, sol: &PowerFlowSolution) -> f64 {
        let (lo, hi, v0) = (self.network.v_min_pu, self.network.v_max_pu, self.v_nominal());
        let c: f64 = match &self.config.monitored_nodes {
            Some(nodes) => nodes.iter().map(|&m| violation_penalty(sol.voltage(m), lo, hi, v0)).sum(),
            None => (0..self.network.node_count)
                .map(|m| violation_penalty(sol.voltage(m), lo, hi, v0))
                .sum(),
        };
        self.config.sigma * c
    }

    /// Nodes reported as features: every node except the slack.
    pub fn feature_nodes(&self) -> Vec<usize> {
        (0..self.network.node_count)
            .filter(|&m| m != self.network.slack_node)
            .collect()
    }
}

/// Observation at step `t`: nodal net powers, price, storage state of charge.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvState {
    pub day: usize,
    pub t: usize,
    pub net_power_kw: Vec<f64>,
    pub price_eur_per_kwh: f64,
    pub soc: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepResult {
    /// `-cost_eur + penalty`.
    pub reward: f64,
    pub cost_eur: f64,
    /// `sigma * sum C_m`, never positive.
    pub penalty: f64,
    pub voltage_violations: usize,
    pub current_violations: usize,
    pub soc_clip_events: usize,
    pub applied_kw: Vec<f64>,
    pub next_state: EnvState,
    pub powerflow: PowerFlowSolution,
    pub done: bool,
    pub diverged: bool,
}

/// One episode cursor over a dataset. Single-threaded; create one per worker.
#[derive(Debug, Clone)]
pub struct Env<'a> {
    spec: &'a EnvSpec,
    data: &'a TimeSeriesDataset,
    state: EnvState,
    done: bool,
}

impl<'a> Env<'a> {
    pub fn new(spec: &'a EnvSpec, data: &'a TimeSeriesDataset) -> Result<Self> {
        if data.node_count != spec.network.node_count {
            return Err(Error::Config("dataset and network node counts differ".into()));
        }
        let mut env = Self {
            spec,
            data,
            state: EnvState {
                day: 0,
                t: 0,
                net_power_kw: Vec::new(),
                price_eur_per_kwh: 0.0,
                soc: Vec::new(),
            },
            done: true,
        };
        env.reset(0)?;
        Ok(env)
    }

    pub fn spec(&self) -> &EnvSpec {
        self.spec
    }

    pub fn data(&self) -> &TimeSeriesDataset {
        self.data
    }

    pub fn state(&self) -> &EnvState {
        &self.state
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn steps_per_episode(&self) -> usize {
        self.data.steps_per_day
    }

    fn observe(&self, day: usize, t: usize, soc: Vec<f64>) -> EnvState {
        let i = self.data.index(day, t);
        EnvState {
            day,
            t,
            net_power_kw: self.data.load_kw[i]
                .iter()
                .zip(&self.data.pv_kw[i])
                .map(|(l, p)| l - p)
                .collect(),
            price_eur_per_kwh: self.data.price_eur_per_kwh[i],
            soc,
        }
    }

    /// Starts `day` with every battery at its initial state of charge.
    pub fn reset(&mut self, day: usize) -> Result<EnvState> {
        if day >= self.data.n_days() {
            return Err(Error::Dataset(format!(
                "day {day} out of range ({} days)",
                self.data.n_days()
            )));
        }
        let soc = self.spec.ess.iter().map(|e| e.soc_init).collect();
        self.state = self.observe(day, 0, soc);
        self.done = false;
        Ok(self.state.clone())
    }

    /// Restarts `day` from an arbitrary state of charge (used by tests and the oracle).
    pub fn reset_with_soc(&mut self, day: usize, soc: Vec<f64>) -> Result<EnvState> {
        self.reset(day)?;
        if soc.len() != self.spec.n_ess() {
            return Err(Error::Shape("state of charge vector length".into()));
        }
        self.state.soc = soc;
        Ok(self.state.clone())
    }

    /// Applies a dispatch (kW per storage unit) for the current step.
    ///
    /// Dispatch is clipped to the power limits, then the state of charge is
    /// clipped to its limits, reducing the exchanged power accordingly.
    pub fn step(&mut self, action_kw: &[f64]) -> Result<StepResult> {
        if self.done {
            return Err(Error::Config("step called on a finished episode".into()));
        }
        let spec = self.spec;
        if action_kw.len() != spec.n_ess() {
            return Err(Error::Shape(format!(
                "expected {} dispatch values, got {}",
                spec.n_ess(),
                action_kw.len()
            )));
        }
        if action_kw.iter().any(|a| !a.is_finite()) {
            return Err(Error::NonFinite("dispatch".into()));
        }
        let dt = self.data.timestep_hours;
        let i = self.data.index(self.state.day, self.state.t);
        let (load, pv) = (&self.data.load_kw[i], &self.data.pv_kw[i]);

        let mut soc = Vec::with_capacity(spec.n_ess());
        let mut applied = Vec::with_capacity(spec.n_ess());
        let mut clips = 0;
        for ((e, &a), &s) in spec.ess.iter().zip(action_kw).zip(&self.state.soc) {
            let u = soc_update(e, s, e.clip_power(a), dt);
            soc.push(u.soc);
            applied.push(u.applied_kw);
            clips += u.clipped as usize;
        }

        let inj = spec.injection(load, pv, &applied);
        let pf = solve_power_flow(&spec.network, &inj)?;
        let cost = spec.step_cost(self.data.price_eur_per_kwh[i], load, pv, &applied, dt);
        let (penalty, vv, cv, diverged) = if pf.converged {
            let (vv, cv) = violation_counts(&spec.network, &pf);
            (spec.penalty(&pf), vv, cv, false)
        } else {
            log::warn!(
                "power flow diverged on day {} step {}; ending episode",
                self.state.day,
                self.state.t
            );
            (-spec.config.divergence_penalty, spec.network.node_count, 0, true)
        };

        let t_next = self.state.t + 1;
        let done = diverged || t_next >= self.data.steps_per_day;
        let next_state = if t_next < self.data.steps_per_day {
            self.observe(self.state.day, t_next, soc)
        } else {
            // terminal: exogenous features repeat the last record
            EnvState {
                t: t_next,
                soc,
                ..self.observe(self.state.day, self.state.t, Vec::new())
            }
        };
        self.state = next_state.clone();
        self.done = done;
        Ok(StepResult {
            reward: -cost + penalty,
            cost_eur: cost,
            penalty,
            voltage_violations: vv,
            current_violations: cv,
            soc_clip_events: clips,
            applied_kw: applied,
            next_state,
            powerflow: pf,
            done,
            diverged,
        })
    }
}

/// Maps observations and actions to the network input scale.
///
/// Features are nodal net powers over `power_scale_kw`, price over
/// `price_scale`, the time of day as `t / steps_per_day`, and raw state of
/// charge. Actions are normalized to
/// `[-1, 1]` per storage unit: `kw = mid + half * u`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureScaling {
    pub nodes: Vec<usize>,
    pub power_scale_kw: f64,
    pub price_scale: f64,
    pub steps_per_day: usize,
    pub action_mid_kw: Vec<f64>,
    pub action_half_kw: Vec<f64>,
}

impl FeatureScaling {
    pub fn fit(spec: &EnvSpec, data: &TimeSeriesDataset) -> Self {
        Self {
            nodes: spec.feature_nodes(),
            power_scale_kw: data.peak_nodal_kw().max(1e-9),
            price_scale: data.max_price().max(1e-9),
            steps_per_day: data.steps_per_day,
            action_mid_kw: spec.ess.iter().map(|e| 0.5 * (e.p_max_kw + e.p_min_kw)).collect(),
            action_half_kw: spec.ess.iter().map(|e| 0.5 * (e.p_max_kw - e.p_min_kw)).collect(),
        }
    }

    pub fn state_dim(&self) -> usize {
        self.nodes.len() + 2 + self.action_dim()
    }

    pub fn action_dim(&self) -> usize {
        self.action_mid_kw.len()
    }

    pub fn features(&self, s: &EnvState) -> Vec<f64> {
        let mut f = Vec::with_capacity(self.state_dim());
        f.extend(self.nodes.iter().map(|&m| s.net_power_kw[m] / self.power_scale_kw));
        f.push(s.price_eur_per_kwh / self.price_scale);
        f.push(s.t as f64 / self.steps_per_day as f64);
        f.extend_from_slice(&s.soc);
        f
    }

    pub fn to_kw(&self, u: &[f64]) -> Vec<f64> {
        u.iter()
            .zip(self.action_mid_kw.iter().zip(&self.action_half_kw))
            .map(|(&u, (&m, &h))| m + h * u)
            .collect()
    }

    pub fn to_unit(&self, kw: &[f64]) -> Vec<f64> {
        kw.iter()
            .zip(self.action_mid_kw.iter().zip(&self.action_half_kw))
            .map(|(&a, (&m, &h))| (a - m) / h)
            .collect()
    }
}
