//! Perfect-foresight dynamic programming over a state-of-charge grid.
//!
//! Each stage evaluates every joint dispatch level with the exact nonlinear
//! power flow; levels that leave the voltage band are excluded. The
//! cost-to-go is stored on the grid and read back by multilinear
//! interpolation, while the schedule itself is rolled forward from the exact
//! initial state of charge, so the returned schedule is feasible and its cost
//! is exact. The result is optimal up to the grid resolution.

use serde::{Deserialize, Serialize};

use super::config::{OracleConfig, TerminalSoc};
use crate::env::{EnvSpec, TimeSeriesDataset};
use crate::error::{Error, Result};
use crate::grid::solve_power_flow;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleResult {
    pub day: usize,
    pub cost_eur: f64,
    /// Dispatch per step and storage unit (kW).
    pub schedule_kw: Vec<Vec<f64>>,
    /// State of charge before each step, plus the final one.
    pub soc: Vec<Vec<f64>>,
    pub soc_points: usize,
    pub action_levels: usize,
}

/// Per-stage table: which joint levels keep every protected node in band,
/// and what they cost.
struct Stage {
    feasible: Vec<bool>,
    cost: Vec<f64>,
}

struct Grid {
    n: usize,
    points: usize,
    lo: Vec<f64>,
    step: Vec<f64>,
    strides: Vec<usize>,
}

impl Grid {
    fn coords(&self, mut idx: usize) -> Vec<f64> {
        (0..self.n)
            .map(|i| {
                let k = idx % self.points;
                idx /= self.points;
                self.lo[i] + self.step[i] * k as f64
            })
            .collect()
    }

    /// Multilinear interpolation; corners with zero weight are skipped so an
    /// on-grid query (up to round-off) never reads an infinite neighbour.
    fn interp(&self, values: &[f64], soc: &[f64]) -> f64 {
        let mut base = 0;
        let mut frac = [0.0f64; 8];
        debug_assert!(self.n <= frac.len());
        for i in 0..self.n {
            let mut x = ((soc[i] - self.lo[i]) / self.step[i]).clamp(0.0, (self.points - 1) as f64);
            // round-off must not leak weight onto an infeasible neighbour
            if (x - x.round()).abs() < 1e-9 {
                x = x.round();
            }
            let k = (x.floor() as usize).min(self.points - 2);
            base += k * self.strides[i];
            frac[i] = x - k as f64;
        }
        let mut acc = 0.0;
        for corner in 0..(1usize << self.n) {
            let mut w = 1.0;
            let mut idx = base;
            for (i, f) in frac.iter().enumerate().take(self.n) {
                if corner >> i & 1 == 1 {
                    w *= f;
                    idx += self.strides[i];
                } else {
                    w *= 1.0 - f;
                }
            }
            if w > 0.0 {
                acc += w * values[idx];
            }
        }
        acc
    }
}

fn protected(spec: &EnvSpec) -> Vec<usize> {
    let slack = spec.network.slack_node;
    match &spec.config.monitored_nodes {
        Some(n) => n.iter().copied().filter(|&m| m != slack).collect(),
        None => (0..spec.network.node_count).filter(|&m| m != slack).collect(),
    }
}

fn better(val: f64, effort: f64, best: f64, best_effort: f64) -> bool {
    let tol = 1e-12 * (1.0 + best.abs());
    val < best - tol || (val <= best + tol && effort < best_effort)
}

/// Minimum-cost voltage-feasible schedule for one day of `data`.
///
/// Ties (within round-off) are broken towards the smaller total `|dispatch|`,
/// then towards the lexicographically first joint level.
pub fn dp_oracle(spec: &EnvSpec, data: &TimeSeriesDataset, day: usize, cfg: &OracleConfig) -> Result<OracleResult> {
    let n = spec.n_ess();
    let (pts, lv) = (cfg.soc_points, cfg.action_levels);
    if pts < 2 || lv < 2 {
        return Err(Error::Config("oracle needs at least 2 grid points and 2 action levels".into()));
    }
    if day >= data.n_days() {
        return Err(Error::Dataset(format!("day {day} out of range")));
    }
    let states = (pts as f64).powi(n as i32);
    let actions = (lv as f64).powi(n as i32);
    if n > 8 || states * actions > cfg.max_stage_work as f64 {
        return Err(Error::StateSpace(format!(
            "{states} states x {actions} actions per stage exceeds the limit of {}; \
             use fewer SOC points or action levels",
            cfg.max_stage_work
        )));
    }
    let (n_states, n_actions) = (states as usize, actions as usize);
    let dt = data.timestep_hours;

    let grid = Grid {
        n,
        points: pts,
        lo: spec.ess.iter().map(|e| e.soc_min).collect(),
        step: spec.ess.iter().map(|e| (e.soc_max - e.soc_min) / (pts - 1) as f64).collect(),
        strides: (0..n).map(|i| pts.pow(i as u32)).collect(),
    };
    // joint level a -> per-unit dispatch; unit 0 varies slowest so the
    // enumeration order is lexicographic in the dispatch vector
    let levels: Vec<Vec<f64>> = (0..n_actions)
        .map(|mut a| {
            let mut kw = vec![0.0; n];
            for i in (0..n).rev() {
                let e = &spec.ess[i];
                let l = a % lv;
                a /= lv;
                kw[i] = e.p_min_kw + (e.p_max_kw - e.p_min_kw) * l as f64 / (lv - 1) as f64;
            }
            kw
        })
        .collect();
    let effort: Vec<f64> = levels.iter().map(|a| a.iter().map(|v| v.abs()).sum()).collect();
    let dsoc: Vec<Vec<f64>> = levels
        .iter()
        .map(|a| a.iter().zip(&spec.ess).map(|(p, e)| e.soc_per_kw(dt) * p).collect())
        .collect();

    let nodes = protected(spec);
    let (vlo, vhi) = (spec.network.v_min_pu, spec.network.v_max_pu);
    let steps = data.steps_per_day;
    let stages: Vec<Stage> = (0..steps)
        .map(|t| {
            let i = data.index(day, t);
            let (load, pv) = (&data.load_kw[i], &data.pv_kw[i]);
            let mut feasible = Vec::with_capacity(n_actions);
            let mut cost = Vec::with_capacity(n_actions);
            for a in &levels {
                let ok = match solve_power_flow(&spec.network, &spec.injection(load, pv, a)) {
                    Ok(pf) if pf.converged => nodes.iter().all(|&m| {
                        let v = pf.voltage(m);
                        v >= vlo - 1e-9 && v <= vhi + 1e-9
                    }),
                    _ => false,
                };
                feasible.push(ok);
                cost.push(spec.step_cost(data.price_eur_per_kwh[i], load, pv, a, dt));
            }
            Stage { feasible, cost }
        })
        .collect();

    let soc_ok = |s: &[f64]| {
        s.iter()
            .zip(&spec.ess)
            .all(|(v, e)| *v >= e.soc_min - 1e-12 && *v <= e.soc_max + 1e-12)
    };
    let init: Vec<f64> = spec.ess.iter().map(|e| e.soc_init).collect();

    let mut value: Vec<f64> = (0..n_states)
        .map(|k| match cfg.terminal_soc {
            TerminalSoc::Free => 0.0,
            TerminalSoc::AtLeastInitial => {
                let s = grid.coords(k);
                if s.iter().zip(&init).all(|(v, i)| *v >= i - 1e-9) {
                    0.0
                } else {
                    f64::INFINITY
                }
            }
        })
        .collect();
    let mut values = vec![Vec::new(); steps + 1];
    let mut next = vec![0.0; n];
    for t in (0..steps).rev() {
        let st = &stages[t];
        let mut cur = vec![f64::INFINITY; n_states];
        for (k, slot) in cur.iter_mut().enumerate() {
            let s = grid.coords(k);
            let (mut best, mut best_eff) = (f64::INFINITY, f64::INFINITY);
            for a in 0..n_actions {
                if !st.feasible[a] {
                    continue;
                }
                for i in 0..n {
                    next[i] = s[i] + dsoc[a][i];
                }
                if !soc_ok(&next) {
                    continue;
                }
                let v = st.cost[a] + grid.interp(&value, &next);
                if v.is_finite() && better(v, effort[a], best, best_eff) {
                    best = v;
                    best_eff = effort[a];
                }
            }
            *slot = best;
        }
        values[t + 1] = std::mem::replace(&mut value, cur);
    }
    values[0] = value;

    let mut soc = vec![init.clone()];
    let mut schedule = Vec::with_capacity(steps);
    let mut cost = 0.0;
    let mut s = init;
    for t in 0..steps {
        let st = &stages[t];
        let mut choice: Option<(usize, f64)> = None;
        let mut best_eff = f64::INFINITY;
        for a in 0..n_actions {
            if !st.feasible[a] {
                continue;
            }
            let nx: Vec<f64> = s.iter().zip(&dsoc[a]).map(|(v, d)| v + d).collect();
            if !soc_ok(&nx) {
                continue;
            }
            let v = st.cost[a] + grid.interp(&values[t + 1], &nx);
            let best = choice.map_or(f64::INFINITY, |c| c.1);
            if v.is_finite() && better(v, effort[a], best, best_eff) {
                choice = Some((a, v));
                best_eff = effort[a];
            }
        }
        let Some((a, _)) = choice else {
            return Err(Error::Config(format!(
                "no voltage-feasible dispatch reachable on day {day} at step {t}"
            )));
        };
        cost += st.cost[a];
        s = s.iter().zip(&dsoc[a]).map(|(v, d)| (v + d).clamp(0.0, 1.0)).collect();
        schedule.push(levels[a].clone());
        soc.push(s.clone());
    }
    Ok(OracleResult {
        day,
        cost_eur: cost,
        schedule_kw: schedule,
        soc,
        soc_points: pts,
        action_levels: lv,
    })
}
