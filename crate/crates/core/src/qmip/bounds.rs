use serde::{Deserialize, Serialize};

use super::model::{encode_prefix, MipModel};
use super::simplex::{solve_lp, LinearProgram, LpOptions, LpStatus};
use crate::error::{Error, Result};
use crate::neural::{Activation, MlpParams};
use crate::scalar::Scalar;

/// Certified pre-activation ranges for every unit, plus the input box.
///
/// `pre[k][j]` bounds `W^k x^k + b^k` at unit `j` of layer `k`; the last entry
/// is the (linear) output layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct UnitBounds<T> {
    pub inputs: Vec<(T, T)>,
    pub pre: Vec<Vec<(T, T)>>,
}

impl<T: Scalar> UnitBounds<T> {
    /// Range of the positive part `x = max(0, pre)`.
    pub fn x(&self, k: usize, j: usize) -> (T, T) {
        let (lo, hi) = self.pre[k][j];
        (lo.max(T::zero()), hi.max(T::zero()))
    }

    /// Range of the negative part `s = max(0, -pre)`.
    pub fn s(&self, k: usize, j: usize) -> (T, T) {
        let (lo, hi) = self.pre[k][j];
        ((-hi).max(T::zero()), (-lo).max(T::zero()))
    }

    pub fn output(&self) -> &[(T, T)] {
        self.pre.last().map_or(&[], |v| v.as_slice())
    }

    /// Hidden units whose sign is not decided by the bounds.
    pub fn unstable_count(&self) -> usize {
        let h = self.pre.len().saturating_sub(1);
        self.pre[..h]
            .iter()
            .flatten()
            .filter(|&&(lo, hi)| lo < T::zero() && hi > T::zero())
            .count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BoundOptions {
    /// Re-bound unstable units of layers 2.. by LP over the relaxed prefix.
    pub lp_refine: bool,
}

impl Default for BoundOptions {
    fn default() -> Self {
        Self { lp_refine: true }
    }
}

pub(crate) fn check_relu_net<T: Scalar>(params: &MlpParams<T>) -> Result<()> {
    let n = params.layers.len();
    for (k, l) in params.layers.iter().enumerate() {
        let ok = if k + 1 == n {
            l.activation == Activation::Linear
        } else {
            l.activation == Activation::Relu
        };
        if !ok {
            return Err(Error::Unsupported(format!(
                "layer {k} uses {:?}; the encoder needs ReLU hidden layers and a linear output",
                l.activation
            )));
        }
    }
    if params.output_dim() != 1 {
        return Err(Error::Unsupported("critic must have a single output".into()));
    }
    Ok(())
}

/// Interval bound of `w . x + b` over a box, widened outward to absorb
/// rounding so the result is a certified enclosure.
pub(crate) fn affine_interval<T: Scalar>(w: &[T], b: T, boxes: &[(T, T)]) -> (T, T) {
    let (mut lo, mut hi) = (b, b);
    let (mut mag_lo, mut mag_hi) = (b.abs(), b.abs());
    for (&wi, &(l, u)) in w.iter().zip(boxes) {
        let (tl, th) = if wi >= T::zero() { (wi * l, wi * u) } else { (wi * u, wi * l) };
        lo += tl;
        hi += th;
        mag_lo += tl.abs();
        mag_hi += th.abs();
    }
    // forward error of a length-n dot product is at most ~n eps sum|terms|
    let g = T::epsilon() * T::of(2.0 * (w.len() + 2) as f64);
    (lo - g * mag_lo, hi + g * mag_hi)
}

/// Layer-by-layer interval bounds, optionally refined by LP.
pub fn tighten_bounds<T: Scalar>(
    params: &MlpParams<T>,
    input_box: &[(T, T)],
    opts: &BoundOptions,
) -> Result<UnitBounds<T>> {
    check_relu_net(params)?;
    if input_box.len() != params.input_dim() {
        return Err(Error::Shape(format!(
            "input box has {} entries, network takes {}",
            input_box.len(),
            params.input_dim()
        )));
    }
    if input_box.iter().any(|&(l, u)| !(l.is_finite() && u.is_finite() && l <= u)) {
        return Err(Error::Config("input box must be finite and ordered".into()));
    }
    let fixed: Vec<Option<T>> = input_box
        .iter()
        .map(|&(l, u)| if l == u { Some(l) } else { None })
        .collect();
    let mut b = UnitBounds {
        inputs: input_box.to_vec(),
        pre: Vec::with_capacity(params.layers.len()),
    };
    let lp_opts = LpOptions::default();
    for (k, layer) in params.layers.iter().enumerate() {
        let prev: Vec<(T, T)> = if k == 0 {
            input_box.to_vec()
        } else {
            (0..params.layers[k - 1].outputs).map(|j| b.x(k - 1, j)).collect()
        };
        let mut pre: Vec<(T, T)> = (0..layer.outputs)
            .map(|j| affine_interval(layer.row(j), layer.bias[j], &prev))
            .collect();
        let hidden = k + 1 < params.layers.len();
        if opts.lp_refine && k >= 1 && hidden && pre.iter().any(|&(l, h)| l < T::zero() && h > T::zero()) {
            let prefix = encode_prefix(params, &fixed, &b, k)?;
            for (j, range) in pre.iter_mut().enumerate() {
                if !(range.0 < T::zero() && range.1 > T::zero()) {
                    continue;
                }
                let (lo, hi) = refine_unit(&prefix, layer.row(j), layer.bias[j], &lp_opts);
                // keep the certified interval; LP can only shrink it
                range.0 = range.0.max(lo);
                range.1 = range.1.min(hi);
            }
        }
        b.pre.push(pre);
    }
    Ok(b)
}

/// Max and min of one pre-activation over the LP relaxation of the prefix model.
fn refine_unit<T: Scalar>(prefix: &MipModel<T>, w: &[T], bias: T, opts: &LpOptions<T>) -> (T, T) {
    let last = prefix.encoding.hidden.last().expect("prefix has a hidden layer");
    let mut lp = LinearProgram {
        objective: vec![T::zero(); prefix.vars.len()],
        lower: prefix.vars.iter().map(|v| v.lower).collect(),
        upper: prefix.vars.iter().map(|v| v.upper).collect(),
        rows: prefix.rows.clone(),
    };
    for (u, &wj) in last.iter().zip(w) {
        lp.objective[u.x] = wj;
    }
    let mut out = (T::neg_infinity(), T::infinity());
    let hi = solve_lp(&lp, opts);
    for c in lp.objective.iter_mut() {
        *c = -*c;
    }
    let lo = solve_lp(&lp, opts);
    // LP values are rounded; pad by the feasibility tolerance scaled by |w|
    let pad = opts.primal_tol * T::of(10.0) * (T::one() + w.iter().fold(T::zero(), |s, &v| s + v.abs()));
    if hi.status == LpStatus::Optimal {
        out.1 = hi.objective + bias + pad;
    }
    if lo.status == LpStatus::Optimal {
        out.0 = -lo.objective + bias - pad;
    }
    out
}
