use serde::{Deserialize, Serialize};

use super::network::Network;
use super::powerflow::{solve_power_flow, NodalInjection, PowerFlowSolution};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Linear voltage model around a solved operating point.
///
/// `V_m(p) ~= base_v[m] + sum_b matrix[m][b] * (p_b - base_p[b])` where `p_b`
/// is the active power (per-unit, positive = charging) of storage unit `b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct VoltageSensitivity<T> {
    pub ess_nodes: Vec<usize>,
    /// Base-point voltage magnitude per node.
    pub base_v: Vec<T>,
    /// `matrix[m][b]`: dV_m / dP_b in p.u. per p.u.
    pub matrix: Vec<Vec<T>>,
}

impl<T: Scalar> VoltageSensitivity<T> {
    /// Predicted voltage magnitudes for a deviation `dp` (per ESS, p.u.).
    pub fn predict(&self, dp: &[T]) -> Vec<T> {
        self.base_v
            .iter()
            .zip(&self.matrix)
            .map(|(&v, row)| v + row.iter().zip(dp).map(|(&s, &d)| s * d).sum::<T>())
            .collect()
    }
}

/// LinDistFlow sensitivity of nodal voltage magnitudes to storage active power.
///
/// In squared voltage the loss-free model gives `dV_m^2 = -2 sum R_l dP` over
/// the lines shared by the paths of `m` and `b` to the slack. Dividing by
/// `2 V_m` at the base point converts to magnitudes; for an unloaded feeder
/// this is the familiar `-sum R / V0`.
pub fn lin_voltage_sensitivity<T: Scalar>(
    net: &Network<T>,
    base_inj: &NodalInjection<T>,
    ess_nodes: &[usize],
) -> Result<(VoltageSensitivity<T>, PowerFlowSolution<T>)> {
    if let Some(&bad) = ess_nodes.iter().find(|&&b| b >= net.node_count) {
        return Err(Error::Shape(format!("storage node {bad} out of range")));
    }
    let base = solve_power_flow(net, base_inj)?;
    if !base.converged {
        return Err(Error::PowerFlow("base case did not converge".into()));
    }
    let base_v = base.voltages();
    let mut on_path = vec![vec![false; net.line_count()]; net.node_count];
    for (m, flags) in on_path.iter_mut().enumerate() {
        for l in net.path_to_slack(m) {
            flags[l] = true;
        }
    }
    let matrix = (0..net.node_count)
        .map(|m| {
            ess_nodes
                .iter()
                .map(|&b| {
                    let shared: T = net
                        .path_to_slack(b)
                        .into_iter()
                        .filter(|&l| on_path[m][l])
                        .map(|l| net.lines[l].r_pu)
                        .sum();
                    -shared / base_v[m]
                })
                .collect()
        })
        .collect();
    Ok((
        VoltageSensitivity {
            ess_nodes: ess_nodes.to_vec(),
            base_v,
            matrix,
        },
        base,
    ))
}
