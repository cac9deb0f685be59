mod common;

use common::{eval_straight, gradient_architectures, max_relative_gradient_error, min_relu_margin, rng};
use mipdrl::neural::{soft_update, Activation, AdamState, Checkpoint, Gradients, Layer, MlpParams};
use rand::Rng;

#[test]
fn backprop_matches_central_differences() {
    let mut r = rng(7);
    for (sizes, hidden, out) in gradient_architectures() {
        let mut checked = 0;
        while checked < 5 {
            let net = MlpParams::random(&sizes, hidden, out, &mut r).unwrap();
            let x: Vec<f64> = (0..sizes[0]).map(|_| r.random_range(-1.5..1.5)).collect();
            if min_relu_margin(&net, &x) < 1e-3 {
                continue;
            }
            let up: Vec<f64> = (0..*sizes.last().unwrap()).map(|_| r.random_range(-1.0..1.0)).collect();
            let err = max_relative_gradient_error(&net, &x, &up, 1e-5);
            assert!(err < 1e-4, "{sizes:?}: relative error {err}");
            checked += 1;
        }
    }
}

#[test]
fn forward_matches_straight_loops() {
    let mut r = rng(8);
    for _ in 0..100 {
        let depth = r.random_range(1..4);
        let mut sizes = vec![r.random_range(1..6)];
        for _ in 0..depth {
            sizes.push(r.random_range(1..20));
        }
        sizes.push(1);
        let net = MlpParams::random(&sizes, Activation::Relu, Activation::Linear, &mut r).unwrap();
        let x: Vec<f64> = (0..sizes[0]).map(|_| r.random_range(-2.0..2.0)).collect();
        let want = eval_straight(&net, &x);
        assert_eq!(net.predict(&x).unwrap(), net.forward(&x).unwrap().output());
        assert!((net.predict(&x).unwrap()[0] - want[0]).abs() < 1e-12);
    }
}

fn scalar_net(w: f64) -> MlpParams<f64> {
    let mut l = Layer::zeros(1, 1, Activation::Linear);
    l.weights[0] = w;
    MlpParams::from_layers(vec![l]).unwrap()
}

#[test]
fn adam_minimizes_shifted_quadratic() {
    // loss (w - 3)^2 from w = 0
    let mut net = scalar_net(0.0);
    let mut opt = AdamState::new(&net, 0.1);
    let mut g = Gradients::zeros_like(&net);
    for step in 0..2000 {
        let w = net.layers[0].weights[0];
        g.clear();
        g.weights[0][0] = 2.0 * (w - 3.0);
        assert!(opt.update(&mut net, &g).unwrap());
        if step == 0 {
            // the bias-corrected first step has length lr
            assert!((net.layers[0].weights[0] - 0.1).abs() < 1e-9);
        }
    }
    assert!((net.layers[0].weights[0] - 3.0).abs() < 1e-3, "w = {}", net.layers[0].weights[0]);
    assert_eq!(net.layers[0].bias[0], 0.0);
}

#[test]
fn adam_skips_non_finite_gradients() {
    let mut net = scalar_net(1.0);
    let mut opt = AdamState::new(&net, 0.1);
    let mut g = Gradients::zeros_like(&net);
    g.weights[0][0] = f64::NAN;
    assert!(!opt.update(&mut net, &g).unwrap());
    assert_eq!(net.layers[0].weights[0], 1.0);
    assert_eq!(opt.step, 0);
}

#[test]
fn polyak_update_by_hand() {
    let mut r = rng(9);
    let online: MlpParams<f64> = MlpParams::random(&[3, 4, 1], Activation::Relu, Activation::Linear, &mut r).unwrap();
    let start: MlpParams<f64> = MlpParams::random(&[3, 4, 1], Activation::Relu, Activation::Linear, &mut r).unwrap();
    let mut target = start.clone();
    soft_update(&mut target, &online, 0.25).unwrap();
    for k in 0..2 {
        for i in 0..online.layers[k].weights.len() {
            let want: f64 = 0.25 * online.layers[k].weights[i] + 0.75 * start.layers[k].weights[i];
            assert!((target.layers[k].weights[i] - want).abs() < 1e-15);
        }
    }
    let mut copy = start.clone();
    soft_update(&mut copy, &online, 1.0).unwrap();
    assert_eq!(copy, online);
    let mut frozen = start.clone();
    soft_update(&mut frozen, &online, 0.0).unwrap();
    assert_eq!(frozen, start);
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let mut r = rng(10);
    let net = MlpParams::random(&[5, 32, 32, 1], Activation::Relu, Activation::Linear, &mut r).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("net.json");
    Checkpoint::new(net.clone(), serde_json::json!({"role": "critic"})).save(&path).unwrap();
    let back = Checkpoint::load(&path).unwrap();
    assert_eq!(back.params, net);
    assert_eq!(back.metadata["role"], "critic");
}
