#![allow(dead_code)]

use mipdrl::neural::{Activation, MlpParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Re-evaluates a ReLU/linear network with plain loops over the raw
/// row-major weights, independent of `MlpParams::forward`.
pub fn eval_straight(net: &MlpParams<f64>, input: &[f64]) -> Vec<f64> {
    let mut x: Vec<f64> = input.to_vec();
    let n = net.layers.len();
    for (k, l) in net.layers.iter().enumerate() {
        let mut y = vec![0.0; l.outputs];
        for (j, yj) in y.iter_mut().enumerate() {
            let mut acc = l.bias[j];
            for (i, xi) in x.iter().enumerate() {
                acc += l.weights[j * l.inputs + i] * xi;
            }
            *yj = if k + 1 < n { if acc > 0.0 { acc } else { 0.0 } } else { acc };
        }
        x = y;
    }
    x
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// ReLU critic with a linear scalar output and biases spread wide enough
/// that unit hyperplanes cross the action box.
pub fn random_critic(sizes: &[usize], rng: &mut ChaCha8Rng) -> MlpParams<f64> {
    let mut net = MlpParams::random(sizes, Activation::Relu, Activation::Linear, rng).unwrap();
    for l in &mut net.layers {
        for b in &mut l.bias {
            *b = rng.random_range(-0.6..0.6);
        }
    }
    net
}

/// Random radial feeder: node `k` hangs off a uniformly chosen earlier node,
/// so every tree shape (chains, stars, branches) can appear.
pub fn random_radial(n: usize, rng: &mut ChaCha8Rng) -> mipdrl::Network {
    use mipdrl::grid::{Line, Network, NetworkFile};
    let lines = (1..n)
        .map(|k| {
            let parent = rng.random_range(0..k);
            // endpoints listed in either direction
            let (from, to) = if rng.random_bool(0.5) { (parent, k) } else { (k, parent) };
            Line {
                from,
                to,
                r_pu: rng.random_range(0.002..0.03),
                x_pu: rng.random_range(0.002..0.03),
                i_max_pu: 5.0,
            }
        })
        .collect();
    Network::new(NetworkFile {
        name: "random".into(),
        base_mva: 1.0,
        base_kv: 12.47,
        node_count: n,
        slack_node: 0,
        v0_pu: rng.random_range(0.98..1.04),
        v_min_pu: 0.9,
        v_max_pu: 1.1,
        lines,
    })
    .unwrap()
}

/// Mixed consumption and generation, up to 0.3 p.u. per node.
pub fn random_injection(n: usize, rng: &mut ChaCha8Rng) -> mipdrl::NodalInjection {
    let mut inj = mipdrl::NodalInjection::zeros(n);
    for m in 1..n {
        inj.p_pu[m] = rng.random_range(-0.15..0.3);
        inj.q_pu[m] = rng.random_range(-0.05..0.12);
    }
    inj
}

/// Residuals of the four branch-flow relations, recomputed from the raw
/// line list: for each line `(i -> j)`
/// `P = p_j + sum_{j->k} P_k + R I^2`, the same for `Q`,
/// `v_j = v_i - 2 (R P + X Q) + (R^2 + X^2) I^2` and `I^2 v_i = P^2 + Q^2`.
pub fn branch_flow_residuals(
    net: &mipdrl::Network,
    inj: &mipdrl::NodalInjection,
    sol: &mipdrl::PowerFlowSolution,
) -> [f64; 4] {
    let n = net.node_count;
    // orient every line from the slack outwards with a plain BFS
    let mut up = vec![usize::MAX; net.lines.len()];
    let mut seen = vec![false; n];
    seen[net.slack_node] = true;
    let mut queue = std::collections::VecDeque::from([net.slack_node]);
    while let Some(u) = queue.pop_front() {
        for (k, l) in net.lines.iter().enumerate() {
            let other = if l.from == u { l.to } else if l.to == u { l.from } else { continue };
            if !seen[other] {
                seen[other] = true;
                up[k] = u;
                queue.push_back(other);
            }
        }
    }
    let down = |k: usize| if net.lines[k].from == up[k] { net.lines[k].to } else { net.lines[k].from };
    let mut worst = [0.0f64; 4];
    for (k, l) in net.lines.iter().enumerate() {
        let j = down(k);
        let (mut out_p, mut out_q) = (0.0, 0.0);
        for c in 0..net.lines.len() {
            if up[c] == j {
                out_p += sol.p_pu[c];
                out_q += sol.q_pu[c];
            }
        }
        let i2 = sol.i2_pu[k];
        let res = [
            sol.p_pu[k] - inj.p_pu[j] - out_p - l.r_pu * i2,
            sol.q_pu[k] - inj.q_pu[j] - out_q - l.x_pu * i2,
            sol.v2_pu[j] - sol.v2_pu[up[k]] + 2.0 * (l.r_pu * sol.p_pu[k] + l.x_pu * sol.q_pu[k])
                - (l.r_pu * l.r_pu + l.x_pu * l.x_pu) * i2,
            i2 * sol.v2_pu[up[k]] - sol.p_pu[k] * sol.p_pu[k] - sol.q_pu[k] * sol.q_pu[k],
        ];
        for (w, r) in worst.iter_mut().zip(res) {
            *w = w.max(r.abs());
        }
    }
    worst
}

/// Largest relative error between backprop parameter and input gradients
/// and central differences of `upstream . net(x)`.
pub fn max_relative_gradient_error(net: &MlpParams<f64>, x: &[f64], upstream: &[f64], h: f64) -> f64 {
    use mipdrl::neural::Gradients;
    let f = |n: &MlpParams<f64>, x: &[f64]| -> f64 {
        n.predict(x).unwrap().iter().zip(upstream).map(|(a, b)| a * b).sum()
    };
    let rel = |a: f64, b: f64| (a - b).abs() / a.abs().max(b.abs()).max(1e-6);
    let trace = net.forward(x).unwrap();
    let mut grads = Gradients::zeros_like(net);
    let dx = net.backward(&trace, upstream, &mut grads).unwrap();
    let mut worst = 0.0f64;
    let mut probe = net.clone();
    for k in 0..net.layers.len() {
        for i in 0..net.layers[k].weights.len() {
            let w = net.layers[k].weights[i];
            probe.layers[k].weights[i] = w + h;
            let fp = f(&probe, x);
            probe.layers[k].weights[i] = w - h;
            let fm = f(&probe, x);
            probe.layers[k].weights[i] = w;
            worst = worst.max(rel(grads.weights[k][i], (fp - fm) / (2.0 * h)));
        }
        for i in 0..net.layers[k].bias.len() {
            let b = net.layers[k].bias[i];
            probe.layers[k].bias[i] = b + h;
            let fp = f(&probe, x);
            probe.layers[k].bias[i] = b - h;
            let fm = f(&probe, x);
            probe.layers[k].bias[i] = b;
            worst = worst.max(rel(grads.bias[k][i], (fp - fm) / (2.0 * h)));
        }
    }
    let mut xp = x.to_vec();
    for i in 0..x.len() {
        xp[i] = x[i] + h;
        let fp = f(net, &xp);
        xp[i] = x[i] - h;
        let fm = f(net, &xp);
        xp[i] = x[i];
        worst = worst.max(rel(dx[i], (fp - fm) / (2.0 * h)));
    }
    worst
}

/// Smallest |pre-activation| over ReLU units; central differences are only
/// meaningful when every unit is further than `h` times the input scale
/// from its kink.
pub fn min_relu_margin(net: &MlpParams<f64>, x: &[f64]) -> f64 {
    let t = net.forward(x).unwrap();
    net.layers
        .iter()
        .zip(&t.pre)
        .filter(|(l, _)| l.activation == Activation::Relu)
        .flat_map(|(_, p)| p.iter().map(|v| v.abs()))
        .fold(f64::INFINITY, f64::min)
}

/// The architectures used by the agents plus a few odd shapes.
pub fn gradient_architectures() -> Vec<(Vec<usize>, Activation, Activation)> {
    use Activation::*;
    vec![
        (vec![3, 1], Relu, Linear),
        (vec![4, 8, 1], Relu, Linear),
        (vec![11, 32, 32, 1], Relu, Linear),
        (vec![9, 64, 64, 2], Relu, Linear),
        (vec![9, 64, 64, 4], Relu, Linear),
        (vec![5, 16, 16, 2], Relu, Tanh),
        (vec![2, 7, 5, 3, 2], Tanh, Linear),
        (vec![6, 12, 3], Linear, Tanh),
    ]
}

/// Exact max of a 2-input single-hidden-layer critic over a box, by
/// enumerating activation patterns. Within a pattern the critic is affine,
/// so the pattern's optimum sits at a vertex of its polygon; every such
/// vertex is an intersection of two lines among the unit hyperplanes and
/// box edges.
pub fn pattern_enumeration_max(net: &mipdrl::Mlp, bx: [(f64, f64); 2]) -> f64 {
    let l0 = &net.layers[0];
    let out = &net.layers[1];
    let h = l0.outputs;
    // lines a*x + b*y = c
    let mut lines: Vec<(f64, f64, f64)> = (0..h)
        .map(|j| (l0.weights[2 * j], l0.weights[2 * j + 1], -l0.bias[j]))
        .collect();
    lines.push((1.0, 0.0, bx[0].0));
    lines.push((1.0, 0.0, bx[0].1));
    lines.push((0.0, 1.0, bx[1].0));
    lines.push((0.0, 1.0, bx[1].1));
    let mut pts = Vec::new();
    for i in 0..lines.len() {
        for k in i + 1..lines.len() {
            let (a1, b1, c1) = lines[i];
            let (a2, b2, c2) = lines[k];
            let det = a1 * b2 - a2 * b1;
            if det.abs() < 1e-14 {
                continue;
            }
            let x = (c1 * b2 - c2 * b1) / det;
            let y = (a1 * c2 - a2 * c1) / det;
            let eps = 1e-12;
            if x >= bx[0].0 - eps && x <= bx[0].1 + eps && y >= bx[1].0 - eps && y <= bx[1].1 + eps {
                pts.push([x.clamp(bx[0].0, bx[0].1), y.clamp(bx[1].0, bx[1].1)]);
            }
        }
    }
    let mut best = f64::NEG_INFINITY;
    for pattern in 0u32..(1 << h) {
        // affine form of the critic under this pattern
        let mut cx = 0.0;
        let mut cy = 0.0;
        let mut c0 = out.bias[0];
        for j in 0..h {
            if pattern >> j & 1 == 1 {
                cx += out.weights[j] * l0.weights[2 * j];
                cy += out.weights[j] * l0.weights[2 * j + 1];
                c0 += out.weights[j] * l0.bias[j];
            }
        }
        for p in &pts {
            let inside = (0..h).all(|j| {
                let pre = l0.weights[2 * j] * p[0] + l0.weights[2 * j + 1] * p[1] + l0.bias[j];
                if pattern >> j & 1 == 1 { pre >= -1e-10 } else { pre <= 1e-10 }
            });
            if inside {
                best = best.max(cx * p[0] + cy * p[1] + c0);
            }
        }
    }
    best
}
