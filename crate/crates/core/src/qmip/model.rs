use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::bounds::{check_relu_net, UnitBounds};
use super::simplex::{LinearConstraint, Sense};
use crate::error::{Error, Result};
use crate::neural::MlpParams;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VarKind {
    Continuous,
    Binary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Variable<T> {
    pub name: String,
    pub kind: VarKind,
    pub lower: T,
    pub upper: T,
}

/// Variables and defining row of one hidden unit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnitVars {
    /// Positive part.
    pub x: usize,
    /// Negative part.
    pub s: usize,
    /// `1` means inactive (`x = 0`), `0` means active (`s = 0`).
    pub z: usize,
    /// Row `W x_prev + b = x - s`.
    pub row: usize,
}

/// Where each piece of the network lives in the model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetEncoding {
    /// Model variable of each network input, `None` for folded state inputs.
    pub input_vars: Vec<Option<usize>>,
    pub hidden: Vec<Vec<UnitVars>>,
    /// Output variable and its defining row (absent in prefix models).
    pub output: Option<(usize, usize)>,
}

/// Mixed-integer encoding of a ReLU critic with the state folded in, plus
/// appended linear constraints on the action variables.
///
/// The objective is `max sum objective[i].1 * var[objective[i].0]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct MipModel<T> {
    pub vars: Vec<Variable<T>>,
    pub rows: Vec<LinearConstraint<T>>,
    pub row_names: Vec<String>,
    pub objective: Vec<(usize, T)>,
    /// Action variables in network-input order.
    pub action_vars: Vec<usize>,
    pub encoding: NetEncoding,
    /// The encoded network and its fixed inputs, kept for propagation.
    pub params: MlpParams<T>,
    pub fixed_inputs: Vec<Option<T>>,
    /// Certified pre-activation bounds used for the big-M coefficients.
    pub bounds: UnitBounds<T>,
}

impl<T: Scalar> MipModel<T> {
    fn add_var(&mut self, name: String, kind: VarKind, lower: T, upper: T) -> usize {
        self.vars.push(Variable { name, kind, lower, upper });
        self.vars.len() - 1
    }

    pub fn add_row(&mut self, name: impl Into<String>, row: LinearConstraint<T>) -> usize {
        self.rows.push(row);
        self.row_names.push(name.into());
        self.rows.len() - 1
    }

    pub fn binaries(&self) -> Vec<usize> {
        (0..self.vars.len())
            .filter(|&i| self.vars[i].kind == VarKind::Binary)
            .collect()
    }

    pub fn output_var(&self) -> Option<usize> {
        self.encoding.output.map(|(v, _)| v)
    }

    pub fn objective_value(&self, x: &[T]) -> T {
        self.objective.iter().fold(T::zero(), |s, &(j, c)| s + c * x[j])
    }

    /// Largest bound, row or integrality violation of an assignment.
    pub fn max_violation(&self, x: &[T]) -> T {
        let mut worst = T::zero();
        for (v, &xi) in self.vars.iter().zip(x) {
            worst = worst.max(v.lower - xi).max(xi - v.upper);
            if v.kind == VarKind::Binary {
                worst = worst.max(xi.min(T::one() - xi).abs());
            }
        }
        self.rows.iter().fold(worst, |w, r| w.max(r.violation(x)))
    }

    pub fn is_feasible(&self, x: &[T], tol: T) -> bool {
        x.len() == self.vars.len() && self.max_violation(x) <= tol
    }

    /// Completes an assignment from the action alone by walking the unit rows
    /// in order: each defining row yields `x - s`, which fixes `x`, `s` and `z`.
    ///
    /// The returned vector is checked against every row and bound; a failure
    /// means the action is outside the encoded domain.
    pub fn propagate_action(&self, action: &[T], tol: T) -> Result<Vec<T>> {
        if action.len() != self.action_vars.len() {
            return Err(Error::Shape("action length".into()));
        }
        let mut val = vec![T::zero(); self.vars.len()];
        for (&v, &a) in self.action_vars.iter().zip(action) {
            val[v] = a;
        }
        for layer in &self.encoding.hidden {
            for u in layer {
                let h = self.row_excess(u.row, &[u.x, u.s], &val);
                val[u.x] = h.max(T::zero());
                val[u.s] = (-h).max(T::zero());
                val[u.z] = if h > T::zero() { T::zero() } else { T::one() };
            }
        }
        if let Some((q, row)) = self.encoding.output {
            // row: W x - q = -b
            val[q] = self.row_excess(row, &[q], &val);
        }
        let viol = self.max_violation(&val);
        if viol > tol {
            return Err(Error::Config(format!(
                "action violates the model by {}",
                viol.as_f64()
            )));
        }
        Ok(val)
    }

    /// `sum_{j not in skip} a_j v_j - rhs` for row `r`.
    fn row_excess(&self, r: usize, skip: &[usize], val: &[T]) -> T {
        let row = &self.rows[r];
        row.coeffs
            .iter()
            .filter(|(j, _)| !skip.contains(j))
            .fold(T::zero(), |s, &(j, a)| s + a * val[j])
            - row.rhs
    }

    /// CPLEX LP-format text of the model, for cross-checking elsewhere.
    pub fn to_lp_format(&self) -> String {
        let mut out = String::from("\\ ReLU critic encoding\nMaximize\n obj:");
        for &(j, c) in &self.objective {
            let _ = write!(out, " {} {}", signed(c), self.vars[j].name);
        }
        out.push_str("\nSubject To\n");
        for (r, name) in self.rows.iter().zip(&self.row_names) {
            let _ = write!(out, " {name}:");
            for &(j, a) in &r.coeffs {
                let _ = write!(out, " {} {}", signed(a), self.vars[j].name);
            }
            let op = match r.sense {
                Sense::Le => "<=",
                Sense::Ge => ">=",
                Sense::Eq => "=",
            };
            let _ = writeln!(out, " {op} {}", r.rhs);
        }
        out.push_str("Bounds\n");
        for v in &self.vars {
            let _ = writeln!(out, " {} <= {} <= {}", v.lower, v.name, v.upper);
        }
        out.push_str("Binaries\n");
        for v in self.vars.iter().filter(|v| v.kind == VarKind::Binary) {
            let _ = writeln!(out, " {}", v.name);
        }
        out.push_str("End\n");
        out
    }
}

fn signed<T: Scalar>(v: T) -> String {
    if v < T::zero() {
        format!("- {}", -v)
    } else {
        format!("+ {v}")
    }
}

/// Encodes the network through `n_hidden` hidden layers (no output layer).
pub(crate) fn encode_prefix<T: Scalar>(
    params: &MlpParams<T>,
    fixed: &[Option<T>],
    bounds: &UnitBounds<T>,
    n_hidden: usize,
) -> Result<MipModel<T>> {
    check_relu_net(params)?;
    if fixed.len() != params.input_dim() || bounds.inputs.len() != params.input_dim() {
        return Err(Error::Shape("input specification does not match network".into()));
    }
    if bounds.pre.len() < n_hidden {
        return Err(Error::Shape("bounds missing for encoded layers".into()));
    }
    let mut m = MipModel {
        vars: Vec::new(),
        rows: Vec::new(),
        row_names: Vec::new(),
        objective: Vec::new(),
        action_vars: Vec::new(),
        encoding: NetEncoding {
            input_vars: Vec::new(),
            hidden: Vec::new(),
            output: None,
        },
        params: params.clone(),
        fixed_inputs: fixed.to_vec(),
        bounds: bounds.clone(),
    };
    for (i, f) in fixed.iter().enumerate() {
        if f.is_none() {
            let (lo, hi) = bounds.inputs[i];
            let v = m.add_var(format!("a_{}", m.action_vars.len()), VarKind::Continuous, lo, hi);
            m.action_vars.push(v);
            m.encoding.input_vars.push(Some(v));
        } else {
            m.encoding.input_vars.push(None);
        }
    }
    let mut prev: Vec<usize> = Vec::new();
    for k in 0..n_hidden {
        let layer = &params.layers[k];
        let mut units = Vec::with_capacity(layer.outputs);
        for j in 0..layer.outputs {
            let (plo, phi) = bounds.pre[k][j];
            if plo > phi {
                return Err(Error::Config(format!("empty bound at unit {k}.{j}")));
            }
            let (xl, xu) = bounds.x(k, j);
            let (sl, su) = bounds.s(k, j);
            let (zl, zu) = if plo >= T::zero() {
                (T::zero(), T::zero())
            } else if phi <= T::zero() {
                (T::one(), T::one())
            } else {
                (T::zero(), T::one())
            };
            let x = m.add_var(format!("x_{k}_{j}"), VarKind::Continuous, xl, xu);
            let s = m.add_var(format!("s_{k}_{j}"), VarKind::Continuous, sl, su);
            let z = m.add_var(format!("z_{k}_{j}"), VarKind::Binary, zl, zu);

            let mut coeffs = Vec::with_capacity(layer.inputs + 2);
            let mut rhs = -layer.bias[j];
            let w = layer.row(j);
            if k == 0 {
                for (i, &wi) in w.iter().enumerate() {
                    match (fixed[i], m.encoding.input_vars[i]) {
                        (Some(v), _) => rhs -= wi * v,
                        (None, Some(var)) if wi != T::zero() => coeffs.push((var, wi)),
                        _ => {}
                    }
                }
            } else {
                coeffs.extend(w.iter().zip(&prev).filter(|(wi, _)| **wi != T::zero()).map(|(&wi, &v)| (v, wi)));
            }
            coeffs.push((x, -T::one()));
            coeffs.push((s, T::one()));
            let row = m.add_row(format!("relu_{k}_{j}"), LinearConstraint::new(coeffs, Sense::Eq, rhs));
            // x <= ub_x (1 - z)
            m.add_row(
                format!("xon_{k}_{j}"),
                LinearConstraint::new(vec![(x, T::one()), (z, xu)], Sense::Le, xu),
            );
            // s <= ub_s z
            m.add_row(
                format!("son_{k}_{j}"),
                LinearConstraint::new(vec![(s, T::one()), (z, -su)], Sense::Le, T::zero()),
            );
            units.push(UnitVars { x, s, z, row });
        }
        prev = units.iter().map(|u| u.x).collect();
        m.encoding.hidden.push(units);
    }
    Ok(m)
}

/// Encodes `max_a Q(state, a)`: hidden units as `x - s = W x_prev + b` with
/// big-M indicator rows from `bounds`, output as a bounded variable `q`.
///
/// `state[i] = Some(v)` folds input `i` as a constant; `None` makes it an
/// action variable ranging over `bounds.inputs[i]`.
pub fn encode_qnet<T: Scalar>(
    params: &MlpParams<T>,
    state: &[Option<T>],
    bounds: &UnitBounds<T>,
) -> Result<MipModel<T>> {
    let n_hidden = params.layers.len() - 1;
    if bounds.pre.len() != params.layers.len() {
        return Err(Error::Shape("bounds do not cover every layer".into()));
    }
    let mut m = encode_prefix(params, state, bounds, n_hidden)?;
    let out = params.layers.last().expect("non-empty network");
    let (qlo, qhi) = bounds.pre[n_hidden][0];
    let q = m.add_var("q".into(), VarKind::Continuous, qlo, qhi);
    let mut coeffs: Vec<(usize, T)> = Vec::with_capacity(out.inputs + 1);
    let mut rhs = -out.bias[0];
    if n_hidden == 0 {
        for (i, &wi) in out.row(0).iter().enumerate() {
            match (state[i], m.encoding.input_vars[i]) {
                (Some(v), _) => rhs -= wi * v,
                (None, Some(var)) if wi != T::zero() => coeffs.push((var, wi)),
                _ => {}
            }
        }
    } else {
        let last = m.encoding.hidden.last().expect("hidden layer");
        coeffs.extend(
            out.row(0)
                .iter()
                .zip(last)
                .filter(|(wi, _)| **wi != T::zero())
                .map(|(&wi, u)| (u.x, wi)),
        );
    }
    coeffs.push((q, -T::one()));
    let row = m.add_row("output", LinearConstraint::new(coeffs, Sense::Eq, rhs));
    m.encoding.output = Some((q, row));
    m.objective = vec![(q, T::one())];
    Ok(m)
}

/// Linearized voltage limits around a base operating point:
/// `v_min + margin <= v_base + S (p - p_base) <= v_max - margin`, with `p` in
/// per-unit on the network base.
#[derive(Debug, Clone, PartialEq)]
pub struct VoltageRows {
    pub nodes: Vec<usize>,
    pub base_v: Vec<f64>,
    /// `sens[m][b]`: per-unit voltage change at node `m` per per-unit power of unit `b`.
    pub sens: Vec<Vec<f64>>,
    pub base_kw: Vec<f64>,
    pub base_kva: f64,
    pub v_min: f64,
    pub v_max: f64,
    pub margin: f64,
}

/// Per-storage operational data in kW and the map from model action
/// variables to kW (`kw = mid + half * u`).
#[derive(Debug, Clone, PartialEq)]
pub struct OperationalLimits<'a> {
    pub ess: &'a [crate::env::EssSpec],
    pub soc: &'a [f64],
    pub dt_h: f64,
    pub action_mid_kw: &'a [f64],
    pub action_half_kw: &'a [f64],
}

impl OperationalLimits<'_> {
    /// Action box in model units: power limits intersected with the range
    /// that keeps next-step state of charge feasible. `None` when empty.
    pub fn action_box(&self) -> Option<Vec<(f64, f64)>> {
        let mut out = Vec::with_capacity(self.ess.len());
        for (b, e) in self.ess.iter().enumerate() {
            let k = e.soc_per_kw(self.dt_h);
            let kw_lo = e.p_min_kw.max((e.soc_min - self.soc[b]) / k);
            let kw_hi = e.p_max_kw.min((e.soc_max - self.soc[b]) / k);
            if kw_lo > kw_hi + 1e-12 {
                return None;
            }
            let (m, h) = (self.action_mid_kw[b], self.action_half_kw[b]);
            let lo = ((kw_lo - m) / h).clamp(-1.0, 1.0);
            let hi = ((kw_hi.max(kw_lo) - m) / h).clamp(-1.0, 1.0);
            out.push((lo, hi.max(lo)));
        }
        Some(out)
    }
}

/// Appends power, state-of-charge and (optionally) linearized voltage limits
/// on the action variables. Returns `false` if the action box is empty, in
/// which case the model is left unchanged.
pub fn add_operational_constraints<T: Scalar>(
    model: &mut MipModel<T>,
    limits: &OperationalLimits<'_>,
    voltage: Option<&VoltageRows>,
) -> Result<bool> {
    let n = model.action_vars.len();
    if limits.ess.len() != n || limits.soc.len() != n {
        return Err(Error::Shape("one storage unit per action variable expected".into()));
    }
    let Some(boxes) = limits.action_box() else {
        return Ok(false);
    };
    for (b, &(lo, hi)) in boxes.iter().enumerate() {
        let v = &mut model.vars[model.action_vars[b]];
        v.lower = v.lower.max(T::of(lo));
        v.upper = v.upper.min(T::of(hi));
        if v.lower > v.upper {
            return Ok(false);
        }
    }
    if let Some(vr) = voltage {
        for (r, &node) in vr.nodes.iter().enumerate() {
            // sum_b S[m,b] * half_b / base * u_b  in  [lo, hi]
            let mut coeffs = Vec::new();
            let mut offset = vr.base_v[r];
            for b in 0..n {
                let sb = vr.sens[r][b];
                offset += sb * (limits.action_mid_kw[b] - vr.base_kw[b]) / vr.base_kva;
                let c = sb * limits.action_half_kw[b] / vr.base_kva;
                if c != 0.0 {
                    coeffs.push((model.action_vars[b], T::of(c)));
                }
            }
            let lo = vr.v_min + vr.margin - offset;
            let hi = vr.v_max - vr.margin - offset;
            if coeffs.is_empty() {
                if lo > 1e-12 || hi < -1e-12 {
                    // nothing the storage can do about this node
                    log::debug!("node {node} outside the linearized band regardless of dispatch");
                }
                continue;
            }
            model.add_row(format!("vmin_{node}"), LinearConstraint::new(coeffs.clone(), Sense::Ge, T::of(lo)));
            model.add_row(format!("vmax_{node}"), LinearConstraint::new(coeffs, Sense::Le, T::of(hi)));
        }
    }
    Ok(true)
}
