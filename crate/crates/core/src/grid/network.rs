use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// A feeder section between two nodes, in per-unit on the network base.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Line<T> {
    pub from: usize,
    pub to: usize,
    pub r_pu: T,
    pub x_pu: T,
    pub i_max_pu: T,
}

/// On-disk form of a [`Network`]; fields mirror the validated type one to one.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct NetworkFile<T> {
    #[serde(default)]
    pub name: String,
    pub base_mva: T,
    pub base_kv: T,
    pub node_count: usize,
    pub slack_node: usize,
    pub v0_pu: T,
    pub v_min_pu: T,
    pub v_max_pu: T,
    pub lines: Vec<Line<T>>,
}

/// Orientation of the feeder tree away from the slack bus.
#[derive(Debug, Clone, PartialEq)]
struct Topology {
    /// Nodes in breadth-first order from the slack node.
    order: Vec<usize>,
    /// Line feeding each node (`None` for the slack).
    parent_line: Vec<Option<usize>>,
    /// Upstream node of each line.
    upstream: Vec<usize>,
    /// Downstream node of each line.
    downstream: Vec<usize>,
    /// Lines leaving each node towards the leaves.
    child_lines: Vec<Vec<usize>>,
}

/// Immutable radial distribution feeder.
///
/// Construction validates radiality: `node_count - 1` lines forming a tree
/// that spans every node from `slack_node`. Line endpoints may be listed in
/// either direction; flows are always reported in the slack-to-leaf sense.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar", try_from = "NetworkFile<T>", into = "NetworkFile<T>")]
pub struct Network<T: Scalar> {
    pub name: String,
    pub base_mva: T,
    pub base_kv: T,
    pub node_count: usize,
    pub slack_node: usize,
    pub v0_pu: T,
    pub v_min_pu: T,
    pub v_max_pu: T,
    pub lines: Vec<Line<T>>,
    topo: Topology,
}

impl<T: Scalar> TryFrom<NetworkFile<T>> for Network<T> {
    type Error = Error;

    fn try_from(f: NetworkFile<T>) -> Result<Self> {
        let topo = build_topology(f.node_count, f.slack_node, &f.lines)?;
        for (k, l) in f.lines.iter().enumerate() {
            if !(l.r_pu >= T::zero() && l.x_pu >= T::zero()) {
                return Err(Error::Network(format!("line {k}: negative impedance")));
            }
            if !(l.i_max_pu > T::zero()) {
                return Err(Error::Network(format!("line {k}: current limit must be positive")));
            }
        }
        if !(T::zero() < f.v_min_pu && f.v_min_pu < f.v0_pu && f.v0_pu < f.v_max_pu) {
            return Err(Error::Network(
                "voltage settings must satisfy 0 < v_min < v0 < v_max".into(),
            ));
        }
        if !(f.base_mva > T::zero() && f.base_kv > T::zero()) {
            return Err(Error::Network("bases must be positive".into()));
        }
        Ok(Network {
            name: f.name,
            base_mva: f.base_mva,
            base_kv: f.base_kv,
            node_count: f.node_count,
            slack_node: f.slack_node,
            v0_pu: f.v0_pu,
            v_min_pu: f.v_min_pu,
            v_max_pu: f.v_max_pu,
            lines: f.lines,
            topo,
        })
    }
}

impl<T: Scalar> From<Network<T>> for NetworkFile<T> {
    fn from(n: Network<T>) -> Self {
        NetworkFile {
            name: n.name,
            base_mva: n.base_mva,
            base_kv: n.base_kv,
            node_count: n.node_count,
            slack_node: n.slack_node,
            v0_pu: n.v0_pu,
            v_min_pu: n.v_min_pu,
            v_max_pu: n.v_max_pu,
            lines: n.lines,
        }
    }
}

fn build_topology<T>(node_count: usize, slack: usize, lines: &[Line<T>]) -> Result<Topology> {
    if node_count == 0 {
        return Err(Error::Network("network has no nodes".into()));
    }
    if slack >= node_count {
        return Err(Error::Network(format!("slack node {slack} out of range")));
    }
    if lines.len() + 1 != node_count {
        return Err(Error::Network(format!(
            "radial network with {node_count} nodes needs {} lines, found {}",
            node_count - 1,
            lines.len()
        )));
    }
    let mut adjacent = vec![Vec::new(); node_count];
    for (k, l) in lines.iter().enumerate() {
        if l.from >= node_count || l.to >= node_count || l.from == l.to {
            return Err(Error::Network(format!("line {k} has invalid endpoints")));
        }
        adjacent[l.from].push((k, l.to));
        adjacent[l.to].push((k, l.from));
    }

    let mut parent_line = vec![None; node_count];
    let mut visited = vec![false; node_count];
    let mut upstream = vec![usize::MAX; lines.len()];
    let mut downstream = vec![usize::MAX; lines.len()];
    let mut child_lines = vec![Vec::new(); node_count];
    let mut order = Vec::with_capacity(node_count);
    let mut queue = std::collections::VecDeque::from([slack]);
    visited[slack] = true;
    while let Some(n) = queue.pop_front() {
        order.push(n);
        for &(k, m) in &adjacent[n] {
            if Some(k) == parent_line[n] {
                continue;
            }
            if visited[m] {
                return Err(Error::Network(format!("line {k} closes a loop")));
            }
            visited[m] = true;
            parent_line[m] = Some(k);
            upstream[k] = n;
            downstream[k] = m;
            child_lines[n].push(k);
            queue.push_back(m);
        }
    }
    if order.len() != node_count {
        return Err(Error::Network("network is not connected".into()));
    }
    Ok(Topology {
        order,
        parent_line,
        upstream,
        downstream,
        child_lines,
    })
}

impl<T: Scalar> Network<T> {
    pub fn new(file: NetworkFile<T>) -> Result<Self> {
        Self::try_from(file)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Base power in kVA, the divisor for converting kW into per-unit.
    pub fn base_kva(&self) -> T {
        self.base_mva * T::of(1000.0)
    }

    pub fn line_count(&self) -> usize {
        self.lines.len()
    }

    /// Nodes ordered from the slack towards the leaves.
    pub fn bfs_order(&self) -> &[usize] {
        &self.topo.order
    }

    pub fn parent_line(&self, node: usize) -> Option<usize> {
        self.topo.parent_line[node]
    }

    pub fn upstream_node(&self, line: usize) -> usize {
        self.topo.upstream[line]
    }

    pub fn downstream_node(&self, line: usize) -> usize {
        self.topo.downstream[line]
    }

    pub fn child_lines(&self, node: usize) -> &[usize] {
        &self.topo.child_lines[node]
    }

    /// Lines on the path from the slack to `node`, leaf side first.
    pub fn path_to_slack(&self, node: usize) -> Vec<usize> {
        let mut path = Vec::new();
        let mut n = node;
        while let Some(l) = self.topo.parent_line[n] {
            path.push(l);
            n = self.topo.upstream[l];
        }
        path
    }

    /// Converts the scalar type, re-validating nothing (topology is shared).
    pub fn cast<U: Scalar>(&self) -> Network<U> {
        let c = |v: T| U::of(v.as_f64());
        Network {
            name: self.name.clone(),
            base_mva: c(self.base_mva),
            base_kv: c(self.base_kv),
            node_count: self.node_count,
            slack_node: self.slack_node,
            v0_pu: c(self.v0_pu),
            v_min_pu: c(self.v_min_pu),
            v_max_pu: c(self.v_max_pu),
            lines: self
                .lines
                .iter()
                .map(|l| Line {
                    from: l.from,
                    to: l.to,
                    r_pu: c(l.r_pu),
                    x_pu: c(l.x_pu),
                    i_max_pu: c(l.i_max_pu),
                })
                .collect(),
            topo: self.topo.clone(),
        }
    }
}

/// The bundled six-node desk-scale feeder.
pub fn bundled_feeder6() -> Network<f64> {
    Network::from_json(include_str!("../../data/feeder6.json")).expect("bundled feeder is valid")
}

/// The bundled 34-node feeder skeleton (synthetic impedances).
pub fn bundled_feeder34() -> Network<f64> {
    Network::from_json(include_str!("../../data/feeder34.json")).expect("bundled feeder is valid")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(from: usize, to: usize) -> Line<f64> {
        Line { from, to, r_pu: 0.01, x_pu: 0.01, i_max_pu: 1.0 }
    }

    fn file(n: usize, lines: Vec<Line<f64>>) -> NetworkFile<f64> {
        NetworkFile {
            name: "t".into(),
            base_mva: 1.0,
            base_kv: 12.47,
            node_count: n,
            slack_node: 0,
            v0_pu: 1.0,
            v_min_pu: 0.95,
            v_max_pu: 1.05,
            lines,
        }
    }

    #[test]
    fn orients_reversed_lines() {
        let net = Network::new(file(3, vec![line(1, 0), line(2, 1)])).unwrap();
        assert_eq!(net.upstream_node(0), 0);
        assert_eq!(net.downstream_node(0), 1);
        assert_eq!(net.upstream_node(1), 1);
        assert_eq!(net.bfs_order(), &[0, 1, 2]);
        assert_eq!(net.path_to_slack(2), vec![1, 0]);
    }

    #[test]
    fn rejects_loops_and_islands() {
        let looped = file(4, vec![line(0, 1), line(1, 2), line(2, 0)]);
        assert!(matches!(Network::new(looped), Err(Error::Network(_))));
        let short = file(4, vec![line(0, 1), line(1, 2)]);
        assert!(Network::new(short).is_err());
    }

    #[test]
    fn rejects_bad_voltage_band() {
        let mut f = file(2, vec![line(0, 1)]);
        f.v_max_pu = 0.99;
        assert!(Network::new(f).is_err());
    }

    #[test]
    fn bundled_feeders_parse() {
        let n6 = bundled_feeder6();
        assert_eq!(n6.node_count, 6);
        let n34 = bundled_feeder34();
        assert_eq!(n34.node_count, 34);
        let back: Network<f64> = Network::from_json(&n6.to_json().unwrap()).unwrap();
        assert_eq!(back, n6);
    }
}
