//! Best-first branch-and-bound over the unit binaries.
//!
//! Each node carries its own variable bounds. Before its LP is solved the
//! bounds are propagated through the network (interval arithmetic with the
//! node's fixings), which fixes further binaries and detects dead branches.
//! Fixed columns are substituted out of the node LP. Every LP solution seeds
//! a primal candidate: its action is pushed through the encoding exactly.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::bounds::affine_interval;
use super::model::MipModel;
use super::simplex::{solve_lp, LinearConstraint, LinearProgram, LpOptions, LpStatus};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Optimal,
    FeasibleGap,
    Infeasible,
    Timeout,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveConfig<T> {
    /// Relative optimality gap, `bound - incumbent <= rel_gap * |incumbent|`.
    pub rel_gap: T,
    /// Absolute gap floor, so tiny objectives still terminate.
    pub abs_gap: T,
    pub time_limit: Option<Duration>,
    /// Node budget; exceeding it returns the incumbent as `FeasibleGap`.
    pub node_limit: usize,
    /// Tolerance used to accept a primal candidate.
    pub feas_tol: T,
    pub lp: LpOptions<T>,
}

impl<T: Scalar> Default for SolveConfig<T> {
    fn default() -> Self {
        Self {
            rel_gap: T::of(1e-6),
            abs_gap: T::of(1e-9),
            time_limit: Some(Duration::from_secs(30)),
            node_limit: 100_000,
            feas_tol: T::of(1e-7),
            lp: LpOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct SolveResult<T> {
    /// Optimal (or best found) action in model units; empty if none was found.
    pub action: Vec<T>,
    pub objective: T,
    pub status: SolveStatus,
    pub gap: T,
    pub nodes: usize,
    pub lp_iterations: usize,
    pub wall_time_s: f64,
    /// Full assignment of the incumbent.
    #[serde(skip)]
    pub values: Vec<T>,
}

struct Node<T> {
    lower: Vec<T>,
    upper: Vec<T>,
    bound: T,
}

#[derive(PartialEq)]
struct Key<T> {
    bound: T,
    id: usize,
}

impl<T: Scalar> Eq for Key<T> {}

impl<T: Scalar> Ord for Key<T> {
    fn cmp(&self, other: &Self) -> Ordering {
        self.bound
            .partial_cmp(&other.bound)
            .unwrap_or(Ordering::Equal)
            .then_with(|| other.id.cmp(&self.id))
    }
}

impl<T: Scalar> PartialOrd for Key<T> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Interval propagation of node bounds through the encoded network.
/// Returns `false` if the node is provably infeasible.
pub(crate) fn propagate<T: Scalar>(model: &MipModel<T>, lower: &mut [T], upper: &mut [T]) -> bool {
    let tol = T::of(1e-9);
    for j in 0..lower.len() {
        if lower[j] > upper[j] + tol {
            return false;
        }
    }
    let enc = &model.encoding;
    let mut prev: Vec<(T, T)> = enc
        .input_vars
        .iter()
        .zip(&model.fixed_inputs)
        .map(|(v, f)| match (v, f) {
            (_, Some(c)) => (*c, *c),
            (Some(v), None) => (lower[*v], upper[*v]),
            (None, None) => unreachable!("input is either fixed or a variable"),
        })
        .collect();
    for (k, units) in enc.hidden.iter().enumerate() {
        let layer = &model.params.layers[k];
        let mut next = Vec::with_capacity(units.len());
        for (j, u) in units.iter().enumerate() {
            let (mut lo, mut hi) = affine_interval(layer.row(j), layer.bias[j], &prev);
            let (rlo, rhi) = model.bounds.pre[k][j];
            lo = lo.max(rlo);
            hi = hi.min(rhi);
            // also respect whatever the node already knows about x and s
            hi = hi.min(upper[u.x]);
            lo = lo.max(-upper[u.s]);
            if lower[u.x] > T::zero() {
                lo = lo.max(lower[u.x]);
            }
            if lower[u.s] > T::zero() {
                hi = hi.min(-lower[u.s]);
            }
            if upper[u.z] <= T::zero() {
                lo = lo.max(T::zero());
            }
            if lower[u.z] >= T::one() {
                hi = hi.min(T::zero());
            }
            if lo > hi + tol {
                return false;
            }
            let free = lower[u.z] < upper[u.z];
            if free && lo >= T::zero() {
                upper[u.z] = lower[u.z];
            } else if free && hi <= T::zero() {
                lower[u.z] = upper[u.z];
            }
            let (xl, xu) = if lower[u.z] >= T::one() {
                (T::zero(), T::zero())
            } else {
                (lo.max(T::zero()), hi.max(T::zero()))
            };
            let (sl, su) = if upper[u.z] <= T::zero() {
                (T::zero(), T::zero())
            } else {
                ((-hi).max(T::zero()), (-lo).max(T::zero()))
            };
            lower[u.x] = lower[u.x].max(xl);
            upper[u.x] = upper[u.x].min(xu).max(lower[u.x]);
            lower[u.s] = lower[u.s].max(sl);
            upper[u.s] = upper[u.s].min(su).max(lower[u.s]);
            next.push((lower[u.x], upper[u.x]));
        }
        prev = next;
    }
    if let Some((q, _)) = enc.output {
        let out = model.params.layers.last().expect("network has layers");
        let (lo, hi) = affine_interval(out.row(0), out.bias[0], &prev);
        lower[q] = lower[q].max(lo);
        upper[q] = upper[q].min(hi);
        if lower[q] > upper[q] + tol {
            return false;
        }
        upper[q] = upper[q].max(lower[q]);
    }
    true
}

struct NodeLp<T> {
    lp: LinearProgram<T>,
    /// Model variable behind each LP column.
    cols: Vec<usize>,
    obj_const: T,
}

/// LP relaxation of a node with fixed columns substituted out.
fn node_lp<T: Scalar>(model: &MipModel<T>, lower: &[T], upper: &[T], tol: T) -> Option<NodeLp<T>> {
    let n = model.vars.len();
    let mut col_of = vec![usize::MAX; n];
    let mut cols = Vec::new();
    for j in 0..n {
        if upper[j] > lower[j] {
            col_of[j] = cols.len();
            cols.push(j);
        }
    }
    let mut rows = Vec::with_capacity(model.rows.len());
    for r in &model.rows {
        let mut rhs = r.rhs;
        let mut coeffs = Vec::with_capacity(r.coeffs.len());
        for &(j, a) in &r.coeffs {
            if col_of[j] == usize::MAX {
                rhs -= a * lower[j];
            } else {
                coeffs.push((col_of[j], a));
            }
        }
        let row = LinearConstraint::new(coeffs, r.sense, rhs);
        if row.coeffs.is_empty() {
            if row.violation(&[]) > tol * (T::one() + r.rhs.abs()) {
                return None;
            }
        } else {
            rows.push(row);
        }
    }
    let mut objective = vec![T::zero(); cols.len()];
    let mut obj_const = T::zero();
    for &(j, c) in &model.objective {
        if col_of[j] == usize::MAX {
            obj_const += c * lower[j];
        } else {
            objective[col_of[j]] += c;
        }
    }
    Some(NodeLp {
        lp: LinearProgram {
            objective,
            lower: cols.iter().map(|&j| lower[j]).collect(),
            upper: cols.iter().map(|&j| upper[j]).collect(),
            rows,
        },
        cols,
        obj_const,
    })
}

struct Incumbent<T> {
    action: Vec<T>,
    values: Vec<T>,
    objective: T,
}

/// Solves `max objective` over the model by branch-and-bound.
pub fn solve<T: Scalar>(model: &MipModel<T>, cfg: &SolveConfig<T>) -> SolveResult<T> {
    let start = Instant::now();
    let n = model.vars.len();
    let mut root_lo: Vec<T> = model.vars.iter().map(|v| v.lower).collect();
    let mut root_hi: Vec<T> = model.vars.iter().map(|v| v.upper).collect();
    let mut result = SolveResult {
        action: Vec::new(),
        objective: T::neg_infinity(),
        status: SolveStatus::Infeasible,
        gap: T::infinity(),
        nodes: 0,
        lp_iterations: 0,
        wall_time_s: 0.0,
        values: Vec::new(),
    };
    if !propagate(model, &mut root_lo, &mut root_hi) {
        result.wall_time_s = start.elapsed().as_secs_f64();
        return result;
    }
    let binaries = model.binaries();
    let tie = T::of(1e-12);
    let mut inc: Option<Incumbent<T>> = None;
    let gap_tol = |inc: &Option<Incumbent<T>>| match inc {
        Some(i) => cfg.abs_gap.max(cfg.rel_gap * i.objective.abs()),
        None => T::zero(),
    };
    let inc_value = |inc: &Option<Incumbent<T>>| inc.as_ref().map_or(T::neg_infinity(), |i| i.objective);

    let mut store: Vec<Option<Node<T>>> = vec![Some(Node {
        lower: root_lo,
        upper: root_hi,
        bound: T::infinity(),
    })];
    let mut heap = BinaryHeap::from([Key { bound: T::infinity(), id: 0 }]);
    let mut stopped: Option<SolveStatus> = None;

    while let Some(key) = heap.peek() {
        if key.bound <= inc_value(&inc) + gap_tol(&inc) {
            break;
        }
        if cfg.time_limit.is_some_and(|l| start.elapsed() > l) {
            stopped = Some(SolveStatus::Timeout);
            break;
        }
        if result.nodes >= cfg.node_limit {
            stopped = Some(SolveStatus::FeasibleGap);
            break;
        }
        let key = heap.pop().expect("peeked");
        let node = store[key.id].take().expect("each node is expanded once");
        result.nodes += 1;

        let Some(nlp) = node_lp(model, &node.lower, &node.upper, cfg.feas_tol) else {
            continue;
        };
        let sol = solve_lp(&nlp.lp, &cfg.lp);
        result.lp_iterations += sol.iterations;
        let bound = match sol.status {
            LpStatus::Optimal => (sol.objective + nlp.obj_const).min(node.bound),
            LpStatus::Infeasible => continue,
            // cannot trust the relaxation value; keep the parent's
            LpStatus::Unbounded | LpStatus::IterationLimit => node.bound,
        };
        let mut values = node.lower.clone();
        for (c, &j) in nlp.cols.iter().enumerate() {
            values[j] = sol.x[c];
        }

        if sol.status == LpStatus::Optimal {
            let action: Vec<T> = model
                .action_vars
                .iter()
                .map(|&v| values[v].max(model.vars[v].lower).min(model.vars[v].upper))
                .collect();
            if let Ok(full) = model.propagate_action(&action, cfg.feas_tol) {
                let obj = model.objective_value(&full);
                let better = match &inc {
                    None => true,
                    Some(i) => {
                        let band = tie * (T::one() + i.objective.abs());
                        obj > i.objective + band
                            || ((obj - i.objective).abs() <= band && lex_less(&action, &i.action))
                    }
                };
                if better {
                    inc = Some(Incumbent { action, values: full, objective: obj });
                }
            }
        }
        if bound <= inc_value(&inc) + gap_tol(&inc) {
            continue;
        }

        // most fractional binary, lowest index on ties
        let mut branch = None;
        let mut best = T::of(1e-9);
        for &z in &binaries {
            if node.upper[z] <= node.lower[z] {
                continue;
            }
            let f = values[z].min(T::one() - values[z]);
            if f > best {
                best = f;
                branch = Some(z);
            }
        }
        if branch.is_none() && sol.status != LpStatus::Optimal {
            branch = binaries.iter().copied().find(|&z| node.upper[z] > node.lower[z]);
        }
        let Some(z) = branch else {
            // integral relaxation: its action was evaluated above
            continue;
        };
        for fix in [T::zero(), T::one()] {
            let mut lo = node.lower.clone();
            let mut hi = node.upper.clone();
            lo[z] = fix;
            hi[z] = fix;
            if propagate(model, &mut lo, &mut hi) {
                let id = store.len();
                store.push(Some(Node { lower: lo, upper: hi, bound }));
                heap.push(Key { bound, id });
            }
        }
    }

    let open_bound = heap.iter().map(|k| k.bound).fold(T::neg_infinity(), |a, b| a.max(b));
    result.wall_time_s = start.elapsed().as_secs_f64();
    match inc {
        Some(i) => {
            let tol = cfg.abs_gap.max(cfg.rel_gap * i.objective.abs());
            result.status = match stopped {
                Some(st) if open_bound > i.objective + tol => st,
                _ => SolveStatus::Optimal,
            };
            result.gap = if open_bound > i.objective {
                (open_bound - i.objective) / i.objective.abs().max(T::of(1e-9))
            } else {
                T::zero()
            };
            result.action = i.action;
            result.objective = i.objective;
            result.values = i.values;
        }
        None => {
            result.status = stopped.unwrap_or(SolveStatus::Infeasible);
        }
    }
    debug_assert!(result.values.is_empty() || result.values.len() == n);
    result
}

fn lex_less<T: Scalar>(a: &[T], b: &[T]) -> bool {
    for (x, y) in a.iter().zip(b) {
        if x < y {
            return true;
        }
        if x > y {
            return false;
        }
    }
    false
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::{Activation, Layer, MlpParams};
    use crate::qmip::{encode_qnet, tighten_bounds, BoundOptions};

    fn model(net: &MlpParams<f64>, boxes: &[(f64, f64)]) -> MipModel<f64> {
        let b = tighten_bounds(net, boxes, &BoundOptions::default()).unwrap();
        encode_qnet(net, &vec![None; boxes.len()], &b).unwrap()
    }

    #[test]
    fn identity_unit_max_at_upper() {
        let net = MlpParams::from_layers(vec![
            Layer { inputs: 1, outputs: 1, weights: vec![1.0], bias: vec![0.0], activation: Activation::Relu },
            Layer { inputs: 1, outputs: 1, weights: vec![1.0], bias: vec![0.0], activation: Activation::Linear },
        ])
        .unwrap();
        let r = solve(&model(&net, &[(-1.0, 1.0)]), &SolveConfig::default());
        assert_eq!(r.status, SolveStatus::Optimal);
        assert!((r.objective - 1.0).abs() < 1e-12);
        assert!((r.action[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn symmetric_tie_is_deterministic() {
        let net = MlpParams::from_layers(vec![
            Layer { inputs: 1, outputs: 2, weights: vec![1.0, -1.0], bias: vec![0.0, 0.0], activation: Activation::Relu },
            Layer { inputs: 2, outputs: 1, weights: vec![1.0, 1.0], bias: vec![0.0], activation: Activation::Linear },
        ])
        .unwrap();
        let m = model(&net, &[(-1.0, 1.0)]);
        let a = solve(&m, &SolveConfig::default());
        let b = solve(&m, &SolveConfig::default());
        assert!((a.objective - 1.0).abs() < 1e-12);
        assert!((a.action[0].abs() - 1.0).abs() < 1e-12);
        assert_eq!(a.action, b.action);
        // the lexicographic tie-break prefers -1
        assert_eq!(a.action[0], -1.0);
    }

    #[test]
    fn stable_units_solve_at_root() {
        // every unit decided by the box: no branching needed
        let net = MlpParams::from_layers(vec![
            Layer { inputs: 1, outputs: 2, weights: vec![1.0, -1.0], bias: vec![2.0, -2.0], activation: Activation::Relu },
            Layer { inputs: 2, outputs: 1, weights: vec![1.0, 3.0], bias: vec![0.0], activation: Activation::Linear },
        ])
        .unwrap();
        let r = solve(&model(&net, &[(-1.0, 1.0)]), &SolveConfig::default());
        assert_eq!(r.nodes, 1);
        assert!((r.objective - 3.0).abs() < 1e-12);
    }

    #[test]
    fn infeasible_model() {
        let net = MlpParams::from_layers(vec![
            Layer { inputs: 1, outputs: 1, weights: vec![1.0], bias: vec![0.0], activation: Activation::Relu },
            Layer { inputs: 1, outputs: 1, weights: vec![1.0], bias: vec![0.0], activation: Activation::Linear },
        ])
        .unwrap();
        let mut m = model(&net, &[(-1.0, 1.0)]);
        let a = m.action_vars[0];
        m.add_row("bad", LinearConstraint::new(vec![(a, 1.0)], crate::qmip::Sense::Ge, 2.0));
        assert_eq!(solve(&m, &SolveConfig::default()).status, SolveStatus::Infeasible);
    }
}
