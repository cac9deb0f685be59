use serde::{Deserialize, Serialize};

use super::network::Network;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Net power drawn at each node (load + charging - PV), per-unit.
///
/// The slack entry is ignored: the substation balances the feeder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct NodalInjection<T> {
    pub p_pu: Vec<T>,
    pub q_pu: Vec<T>,
}

impl<T: Scalar> NodalInjection<T> {
    pub fn zeros(n: usize) -> Self {
        Self {
            p_pu: vec![T::zero(); n],
            q_pu: vec![T::zero(); n],
        }
    }
}

/// Branch-flow state of the feeder.
///
/// Line quantities are indexed like `Network::lines` and measured at the
/// sending (slack-side) end, oriented from upstream to downstream node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct PowerFlowSolution<T> {
    pub v2_pu: Vec<T>,
    pub p_pu: Vec<T>,
    pub q_pu: Vec<T>,
    pub i2_pu: Vec<T>,
    pub converged: bool,
    pub residual: T,
    pub iterations: usize,
}

impl<T: Scalar> PowerFlowSolution<T> {
    pub fn voltage(&self, node: usize) -> T {
        self.v2_pu[node].sqrt()
    }

    pub fn voltages(&self) -> Vec<T> {
        self.v2_pu.iter().map(|v| v.sqrt()).collect()
    }

    /// Active power imported through the slack node.
    pub fn slack_import<N: Scalar>(&self, net: &Network<N>) -> T {
        net.child_lines(net.slack_node)
            .iter()
            .map(|&l| self.p_pu[l])
            .sum()
    }

    /// Series losses `sum R * I^2`.
    pub fn losses(&self, net: &Network<T>) -> T {
        net.lines
            .iter()
            .zip(&self.i2_pu)
            .map(|(l, &i2)| l.r_pu * i2)
            .sum()
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct SweepOptions<T> {
    /// Stop when the largest change in squared voltage falls below this.
    pub tolerance: T,
    /// Largest accepted branch-flow equation residual at convergence.
    pub residual_tolerance: T,
    pub max_iterations: usize,
}

impl<T: Scalar> Default for SweepOptions<T> {
    fn default() -> Self {
        Self {
            tolerance: T::of(1e-10),
            residual_tolerance: T::of(1e-9),
            max_iterations: 200,
        }
    }
}

pub fn solve_power_flow<T: Scalar>(
    net: &Network<T>,
    inj: &NodalInjection<T>,
) -> Result<PowerFlowSolution<T>> {
    solve_power_flow_with(net, inj, &SweepOptions::default())
}

/// Backward/forward sweep on the branch-flow equations.
///
/// Divergence (non-positive or non-finite squared voltage, or no convergence
/// within the iteration cap) is reported through `converged = false` with the
/// last iterate; only malformed input is an error.
pub fn solve_power_flow_with<T: Scalar>(
    net: &Network<T>,
    inj: &NodalInjection<T>,
    opts: &SweepOptions<T>,
) -> Result<PowerFlowSolution<T>> {
    let n = net.node_count;
    if inj.p_pu.len() != n || inj.q_pu.len() != n {
        return Err(Error::Shape(format!(
            "injection has {}/{} entries for {n} nodes",
            inj.p_pu.len(),
            inj.q_pu.len()
        )));
    }
    if inj.p_pu.iter().chain(&inj.q_pu).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("nodal injection".into()));
    }

    let nl = net.line_count();
    let two = T::of(2.0);
    let v0sq = net.v0_pu * net.v0_pu;
    let mut v2 = vec![v0sq; n];
    let mut p = vec![T::zero(); nl];
    let mut q = vec![T::zero(); nl];
    let mut i2 = vec![T::zero(); nl];
    let order = net.bfs_order();

    for it in 1..=opts.max_iterations {
        // backward: accumulate downstream demand into sending-end flows
        for &m in order.iter().rev() {
            let Some(l) = net.parent_line(m) else { continue };
            let mut pr = inj.p_pu[m];
            let mut qr = inj.q_pu[m];
            for &c in net.child_lines(m) {
                pr += p[c];
                qr += q[c];
            }
            let cur = (pr * pr + qr * qr) / v2[m];
            let line = &net.lines[l];
            i2[l] = cur;
            p[l] = pr + line.r_pu * cur;
            q[l] = qr + line.x_pu * cur;
        }
        // forward: voltage drop from the slack outwards
        let mut delta = T::zero();
        let mut collapsed = false;
        for &m in order {
            let Some(l) = net.parent_line(m) else { continue };
            let line = &net.lines[l];
            let up = net.upstream_node(l);
            let z2 = line.r_pu * line.r_pu + line.x_pu * line.x_pu;
            let next = v2[up] - two * (line.r_pu * p[l] + line.x_pu * q[l]) + z2 * i2[l];
            if !(next > T::zero()) || !next.is_finite() {
                collapsed = true;
                break;
            }
            delta = delta.max((next - v2[m]).abs());
            v2[m] = next;
        }
        if collapsed {
            log::debug!("power flow collapsed at iteration {it}");
            return Ok(PowerFlowSolution {
                v2_pu: v2,
                p_pu: p,
                q_pu: q,
                i2_pu: i2,
                converged: false,
                residual: T::infinity(),
                iterations: it,
            });
        }
        if delta < opts.tolerance {
            let partial = PowerFlowSolution {
                v2_pu: v2,
                p_pu: p,
                q_pu: q,
                i2_pu: i2,
                converged: false,
                residual: T::zero(),
                iterations: it,
            };
            let r = branch_flow_residual(net, inj, &partial);
            if r <= opts.residual_tolerance {
                return Ok(PowerFlowSolution {
                    converged: true,
                    residual: r,
                    ..partial
                });
            }
            let PowerFlowSolution { v2_pu, p_pu, q_pu, i2_pu, .. } = partial;
            v2 = v2_pu;
            p = p_pu;
            q = q_pu;
            i2 = i2_pu;
        }
    }
    let mut last = PowerFlowSolution {
        v2_pu: v2,
        p_pu: p,
        q_pu: q,
        i2_pu: i2,
        converged: false,
        residual: T::zero(),
        iterations: opts.max_iterations,
    };
    last.residual = branch_flow_residual(net, inj, &last);
    Ok(last)
}

/// Largest residual over node balance, voltage drop and the `V^2 I^2 = P^2 + Q^2`
/// line equation, in the sending-end convention.
pub fn branch_flow_residual<T: Scalar>(
    net: &Network<T>,
    inj: &NodalInjection<T>,
    sol: &PowerFlowSolution<T>,
) -> T {
    let two = T::of(2.0);
    let mut worst = T::zero();
    for m in 0..net.node_count {
        let Some(l) = net.parent_line(m) else { continue };
        let line = &net.lines[l];
        let up = net.upstream_node(l);
        let out_p: T = net.child_lines(m).iter().map(|&c| sol.p_pu[c]).sum();
        let out_q: T = net.child_lines(m).iter().map(|&c| sol.q_pu[c]).sum();
        let bal_p = sol.p_pu[l] - line.r_pu * sol.i2_pu[l] - out_p - inj.p_pu[m];
        let bal_q = sol.q_pu[l] - line.x_pu * sol.i2_pu[l] - out_q - inj.q_pu[m];
        let z2 = line.r_pu * line.r_pu + line.x_pu * line.x_pu;
        let drop = sol.v2_pu[up]
            - sol.v2_pu[m]
            - two * (line.r_pu * sol.p_pu[l] + line.x_pu * sol.q_pu[l])
            + z2 * sol.i2_pu[l];
        let flow = sol.v2_pu[up] * sol.i2_pu[l] - sol.p_pu[l] * sol.p_pu[l] - sol.q_pu[l] * sol.q_pu[l];
        worst = worst
            .max(bal_p.abs())
            .max(bal_q.abs())
            .max(drop.abs())
            .max(flow.abs());
    }
    worst
}

/// Nodes outside the voltage band and lines above their current limit.
///
/// Limits are inclusive; a violation must exceed the limit (in squared
/// quantities) by more than `1e-9`.
pub fn violation_counts<T: Scalar>(net: &Network<T>, sol: &PowerFlowSolution<T>) -> (usize, usize) {
    let slack = T::of(1e-9);
    let lo = net.v_min_pu * net.v_min_pu;
    let hi = net.v_max_pu * net.v_max_pu;
    let volts = sol
        .v2_pu
        .iter()
        .filter(|&&v2| v2 < lo - slack || v2 > hi + slack)
        .count();
    let amps = net
        .lines
        .iter()
        .zip(&sol.i2_pu)
        .filter(|(l, &i2)| i2 > l.i_max_pu * l.i_max_pu + slack)
        .count();
    (volts, amps)
}
