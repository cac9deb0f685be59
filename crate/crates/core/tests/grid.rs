mod common;

use common::{branch_flow_residuals, random_injection, random_radial, rng};
use mipdrl::grid::{bundled_feeder6, lin_voltage_sensitivity, solve_power_flow};
use mipdrl::NodalInjection;
use mipdrl::Network;
use num_complex::Complex64;
use rand::Rng;

/// Complex-phasor backward/forward sweep, written independently of the
/// branch-flow solver: currents from `conj(S / V)`, voltages from `V_i - Z I`.
fn phasor_voltages(net: &Network, inj: &NodalInjection) -> Vec<f64> {
    let n = net.node_count;
    let mut parent = vec![None; n];
    let mut order = vec![net.slack_node];
    let mut seen = vec![false; n];
    seen[net.slack_node] = true;
    let mut i = 0;
    while i < order.len() {
        let u = order[i];
        for (k, l) in net.lines.iter().enumerate() {
            let v = if l.from == u { l.to } else if l.to == u { l.from } else { continue };
            if !seen[v] {
                seen[v] = true;
                parent[v] = Some((u, k));
                order.push(v);
            }
        }
        i += 1;
    }
    let mut v = vec![Complex64::new(net.v0_pu, 0.0); n];
    for _ in 0..500 {
        let mut current: Vec<Complex64> = (0..n)
            .map(|m| {
                if m == net.slack_node {
                    Complex64::new(0.0, 0.0)
                } else {
                    (Complex64::new(inj.p_pu[m], inj.q_pu[m]) / v[m]).conj()
                }
            })
            .collect();
        for &m in order.iter().rev() {
            if let Some((u, _)) = parent[m] {
                let c = current[m];
                current[u] += c;
            }
        }
        let mut next = v.clone();
        for &m in &order {
            if let Some((u, k)) = parent[m] {
                let z = Complex64::new(net.lines[k].r_pu, net.lines[k].x_pu);
                next[m] = next[u] - z * current[m];
            }
        }
        let delta = next.iter().zip(&v).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        v = next;
        if delta < 1e-14 {
            break;
        }
    }
    v.iter().map(|c| c.norm()).collect()
}

#[test]
fn random_radial_instances_satisfy_branch_flow_equations() {
    let mut r = rng(6);
    let mut worst = [0.0f64; 4];
    let mut worst_balance = 0.0f64;
    for _ in 0..1000 {
        let n = r.random_range(2..=12);
        let net = random_radial(n, &mut r);
        let inj = random_injection(n, &mut r);
        let sol = solve_power_flow(&net, &inj).unwrap();
        assert!(sol.converged);
        for (w, v) in worst.iter_mut().zip(branch_flow_residuals(&net, &inj, &sol)) {
            *w = w.max(v);
        }
        // substation import = total demand + series losses
        let import: f64 = net
            .lines
            .iter()
            .enumerate()
            .filter(|(_, l)| l.from == net.slack_node || l.to == net.slack_node)
            .map(|(k, _)| sol.p_pu[k])
            .sum();
        let demand: f64 = inj.p_pu.iter().skip(1).sum();
        let losses: f64 = net.lines.iter().zip(&sol.i2_pu).map(|(l, i2)| l.r_pu * i2).sum();
        worst_balance = worst_balance.max((import - demand - losses).abs());
    }
    assert!(worst.iter().all(|&w| w <= 1e-9), "residuals {worst:?}");
    assert!(worst_balance <= 1e-8, "power balance off by {worst_balance}");
}

#[test]
fn voltages_match_phasor_sweep() {
    let mut r = rng(16);
    for _ in 0..200 {
        let n = r.random_range(2..=12);
        let net = random_radial(n, &mut r);
        let inj = random_injection(n, &mut r);
        let sol = solve_power_flow(&net, &inj).unwrap();
        let want = phasor_voltages(&net, &inj);
        for m in 0..n {
            assert!((sol.voltage(m) - want[m]).abs() < 1e-8, "node {m}: {} vs {}", sol.voltage(m), want[m]);
        }
    }
}

#[test]
fn unloaded_sensitivity_matches_resolve_derivative() {
    // with no flow the loss terms are second order, so the linear model
    // is the exact derivative of the nonlinear solution
    let mut r = rng(26);
    let h = 1e-6;
    for _ in 0..50 {
        let n = r.random_range(3..=12);
        let net = random_radial(n, &mut r);
        let nodes = vec![r.random_range(1..n), r.random_range(1..n)];
        let base = NodalInjection::zeros(n);
        let (sens, _) = lin_voltage_sensitivity(&net, &base, &nodes).unwrap();
        for (b, &node) in nodes.iter().enumerate() {
            let mut up = base.clone();
            up.p_pu[node] += h;
            let mut dn = base.clone();
            dn.p_pu[node] -= h;
            let vu = solve_power_flow(&net, &up).unwrap();
            let vd = solve_power_flow(&net, &dn).unwrap();
            for m in 0..n {
                let fd = (vu.voltage(m) - vd.voltage(m)) / (2.0 * h);
                assert!((fd - sens.matrix[m][b]).abs() < 1e-6, "node {m} unit {b}: {fd} vs {}", sens.matrix[m][b]);
            }
        }
    }
}

#[test]
fn loaded_sensitivity_predicts_resolved_voltages() {
    let net = bundled_feeder6();
    let mut r = rng(36);
    for _ in 0..200 {
        let mut inj = NodalInjection::zeros(6);
        for m in 1..6 {
            inj.p_pu[m] = r.random_range(-0.1..0.35);
            inj.q_pu[m] = r.random_range(0.0..0.1);
        }
        let (sens, base) = lin_voltage_sensitivity(&net, &inj, &[3, 5]).unwrap();
        let dp = [r.random_range(-0.2..0.2), r.random_range(-0.2..0.2)];
        let mut moved = inj.clone();
        moved.p_pu[3] += dp[0];
        moved.p_pu[5] += dp[1];
        let sol = solve_power_flow(&net, &moved).unwrap();
        let pred = sens.predict(&dp);
        for m in 0..6 {
            let actual = sol.voltage(m) - base.voltage(m);
            let predicted = pred[m] - sens.base_v[m];
            // LinDistFlow drops the loss terms: a few percent of the change
            assert!(
                (actual - predicted).abs() <= 0.1 * actual.abs() + 2e-4,
                "node {m}: actual {actual} predicted {predicted}"
            );
        }
    }
}
