use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Linear,
    Tanh,
}

impl Activation {
    #[inline]
    pub fn apply<T: Scalar>(self, v: T) -> T {
        match self {
            Activation::Relu => v.max(T::zero()),
            Activation::Linear => v,
            Activation::Tanh => v.tanh(),
        }
    }

    /// Derivative given the pre-activation `pre` and output `out`.
    /// ReLU uses 0 at the kink.
    #[inline]
    fn derivative<T: Scalar>(self, pre: T, out: T) -> T {
        match self {
            Activation::Relu => {
                if pre > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            Activation::Linear => T::one(),
            Activation::Tanh => T::one() - out * out,
        }
    }
}

/// Dense layer `y = act(W x + b)` with `W` stored row-major (`outputs x inputs`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Layer<T> {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<T>,
    pub bias: Vec<T>,
    pub activation: Activation,
}

impl<T: Scalar> Layer<T> {
    pub fn zeros(inputs: usize, outputs: usize, activation: Activation) -> Self {
        Self {
            inputs,
            outputs,
            weights: vec![T::zero(); inputs * outputs],
            bias: vec![T::zero(); outputs],
            activation,
        }
    }

    #[inline]
    pub fn weight(&self, out: usize, inp: usize) -> T {
        self.weights[out * self.inputs + inp]
    }

    #[inline]
    pub fn row(&self, out: usize) -> &[T] {
        &self.weights[out * self.inputs..(out + 1) * self.inputs]
    }

    fn check(&self) -> Result<()> {
        if self.weights.len() != self.inputs * self.outputs || self.bias.len() != self.outputs {
            return Err(Error::Shape(format!(
                "layer {}x{} has {} weights and {} biases",
                self.outputs,
                self.inputs,
                self.weights.len(),
                self.bias.len()
            )));
        }
        Ok(())
    }
}

/// Feed-forward network; the parameter container shared by actors and critics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct MlpParams<T> {
    pub layers: Vec<Layer<T>>,
}

/// Per-layer pre-activations and outputs from one forward pass.
/// `outputs[0]` is the input; `outputs[k + 1]` is the output of layer `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace<T> {
    pub pre: Vec<Vec<T>>,
    pub outputs: Vec<Vec<T>>,
}

impl<T: Scalar> Trace<T> {
    pub fn output(&self) -> &[T] {
        self.outputs.last().expect("trace holds the input")
    }
}

/// Gradient buffers with the same shape as an [`MlpParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    pub weights: Vec<Vec<T>>,
    pub bias: Vec<Vec<T>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn zeros_like(p: &MlpParams<T>) -> Self {
        Self {
            weights: p.layers.iter().map(|l| vec![T::zero(); l.weights.len()]).collect(),
            bias: p.layers.iter().map(|l| vec![T::zero(); l.bias.len()]).collect(),
        }
    }

    pub fn clear(&mut self) {
        self.iter_mut().for_each(|g| *g = T::zero());
    }

    pub fn scale(&mut self, f: T) {
        self.iter_mut().for_each(|g| *g *= f);
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().chain(&self.bias).all(|v| v.iter().all(|g| g.is_finite()))
    }

    fn iter_mut(&mut self) -> impl Iterator<Item = &mut T> {
        self.weights
            .iter_mut()
            .chain(self.bias.iter_mut())
            .flat_map(|v| v.iter_mut())
    }
}

impl<T: Scalar> MlpParams<T> {
    /// Builds a network from explicit layers, checking the shapes chain.
    pub fn from_layers(layers: Vec<Layer<T>>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Shape("network needs at least one layer".into()));
        }
        for l in &layers {
            l.check()?;
        }
        for w in layers.windows(2) {
            if w[0].outputs != w[1].inputs {
                return Err(Error::Shape(format!(
                    "layer output {} does not feed input {}",
                    w[0].outputs, w[1].inputs
                )));
            }
        }
        Ok(Self { layers })
    }

    /// Uniform fan-in initialization: `U(-1/sqrt(fan_in), 1/sqrt(fan_in))` for
    /// weights and biases.
    pub fn random<R: Rng + ?Sized>(
        sizes: &[usize],
        hidden: Activation,
        output: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::Shape(format!("bad layer sizes {sizes:?}")));
        }
        let n = sizes.len() - 1;
        let layers = (0..n)
            .map(|k| {
                let act = if k + 1 == n { output } else { hidden };
                let mut l = Layer::zeros(sizes[k], sizes[k + 1], act);
                let lim = 1.0 / (sizes[k] as f64).sqrt();
                for w in l.weights.iter_mut().chain(l.bias.iter_mut()) {
                    *w = T::of(rng.random_range(-lim..lim));
                }
                l
            })
            .collect();
        Self::from_layers(layers)
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.outputs)
    }

    /// `[U_0, U_1, ..., U_K]`.
    pub fn layer_sizes(&self) -> Vec<usize> {
        std::iter::once(self.input_dim())
            .chain(self.layers.iter().map(|l| l.outputs))
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    pub fn same_architecture(&self, other: &Self) -> bool {
        self.layers.len() == other.layers.len()
            && self.layers.iter().zip(&other.layers).all(|(a, b)| {
                a.inputs == b.inputs && a.outputs == b.outputs && a.activation == b.activation
            })
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(&l.bias).all(|v| v.is_finite()))
    }

    fn check_input(&self, input: &[T]) -> Result<()> {
        if input.len() != self.input_dim() {
            return Err(Error::Shape(format!(
                "network expects {} inputs, got {}",
                self.input_dim(),
                input.len()
            )));
        }
        Ok(())
    }

    pub fn forward(&self, input: &[T]) -> Result<Trace<T>> {
        self.check_input(input)?;
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut outputs = Vec::with_capacity(self.layers.len() + 1);
        outputs.push(input.to_vec());
        for l in &self.layers {
            let x = outputs.last().expect("non-empty");
            let z: Vec<T> = (0..l.outputs)
                .map(|j| dot(l.row(j), x) + l.bias[j])
                .collect();
            outputs.push(z.iter().map(|&v| l.activation.apply(v)).collect());
            pre.push(z);
        }
        Ok(Trace { pre, outputs })
    }

    /// Forward pass without keeping the trace.
    pub fn predict(&self, input: &[T]) -> Result<Vec<T>> {
        self.check_input(input)?;
        let mut x = input.to_vec();
        for l in &self.layers {
            x = (0..l.outputs)
                .map(|j| l.activation.apply(dot(l.row(j), &x) + l.bias[j]))
                .collect();
        }
        Ok(x)
    }

    /// Accumulates `d(upstream . output)/d(params)` into `grads` and returns the
    /// gradient with respect to the input.
    pub fn backward(&self, trace: &Trace<T>, upstream: &[T], grads: &mut Gradients<T>) -> Result<Vec<T>> {
        if upstream.len() != self.output_dim() || trace.pre.len() != self.layers.len() {
            return Err(Error::Shape("upstream gradient does not match network output".into()));
        }
        let mut delta: Vec<T> = upstream.to_vec();
        for (k, l) in self.layers.iter().enumerate().rev() {
            let pre = &trace.pre[k];
            let out = &trace.outputs[k + 1];
            let x = &trace.outputs[k];
            for j in 0..l.outputs {
                delta[j] *= l.activation.derivative(pre[j], out[j]);
            }
            let gw = &mut grads.weights[k];
            let gb = &mut grads.bias[k];
            let mut dx = vec![T::zero(); l.inputs];
            for j in 0..l.outputs {
                let d = delta[j];
                if d == T::zero() {
                    continue;
                }
                gb[j] += d;
                let row = l.row(j);
                let grow = &mut gw[j * l.inputs..(j + 1) * l.inputs];
                for i in 0..l.inputs {
                    grow[i] += d * x[i];
                    dx[i] += d * row[i];
                }
            }
            delta = dx;
        }
        Ok(delta)
    }

    /// Input gradient only; parameters are untouched.
    pub fn input_gradient(&self, trace: &Trace<T>, upstream: &[T]) -> Result<Vec<T>> {
        let mut scratch = Gradients::zeros_like(self);
        self.backward(trace, upstream, &mut scratch)
    }

    pub fn cast<U: Scalar>(&self) -> MlpParams<U> {
        let c = |v: &T| U::of(v.as_f64());
        MlpParams {
            layers: self
                .layers
                .iter()
                .map(|l| Layer {
                    inputs: l.inputs,
                    outputs: l.outputs,
                    weights: l.weights.iter().map(c).collect(),
                    bias: l.bias.iter().map(c).collect(),
                    activation: l.activation,
                })
                .collect(),
        }
    }
}

#[inline]
fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |s, (&x, &y)| s + x * y)
}

/// `target <- tau * online + (1 - tau) * target`.
pub fn soft_update<T: Scalar>(target: &mut MlpParams<T>, online: &MlpParams<T>, tau: T) -> Result<()> {
    if !target.same_architecture(online) {
        return Err(Error::Shape("soft update between different architectures".into()));
    }
    let keep = T::one() - tau;
    for (t, o) in target.layers.iter_mut().zip(&online.layers) {
        for (a, &b) in t.weights.iter_mut().zip(&o.weights).chain(t.bias.iter_mut().zip(&o.bias)) {
            *a = tau * b + keep * *a;
        }
    }
    Ok(())
}
