mod common;

use common::rng;
use mipdrl::agents::{policy_mean, td_target, train, Agent, AgentConfig, Algorithm, ReplayBuffer, Transition};
use mipdrl::env::{EnvSpec, TimeSeriesDataset};
use mipdrl::harness::{ExperimentConfig, Scenario};
use mipdrl::neural::soft_update;
use rand::Rng;
use rand_distr::StandardNormal;

fn small(alg: Algorithm) -> AgentConfig {
    AgentConfig {
        batch_size: 8,
        critic_hidden: vec![16, 16],
        actor_hidden: vec![16],
        reward_scale: 1.0,
        actor_preact_penalty: 0.0,
        warmup_steps: 0,
        ..AgentConfig::desk(alg)
    }
}

fn transitions(n: usize, terminal_every: usize, seed: u64) -> Vec<Transition> {
    let mut r = rng(seed);
    (0..n)
        .map(|i| Transition {
            state: (0..3).map(|_| r.random_range(-1.0..1.0)).collect(),
            action: (0..2).map(|_| r.random_range(-1.0..1.0)).collect(),
            reward: r.random_range(-2.0..1.0),
            next_state: (0..3).map(|_| r.random_range(-1.0..1.0)).collect(),
            terminal: i % terminal_every == terminal_every - 1,
        })
        .collect()
}

fn cat(s: &[f64], a: &[f64]) -> Vec<f64> {
    s.iter().chain(a).copied().collect()
}

#[test]
fn td_error_by_hand() {
    // r = -0.5, gamma = 0.9, Q' = 2, Q = 1  ->  target 1.3, TD error 0.3
    let y = td_target(-0.5, 2.0, 0.9, false);
    assert!((y - 1.3).abs() < 1e-15);
    assert!((y - 1.0 - 0.3).abs() < 1e-15);
    assert_eq!(td_target(-0.5, 2.0, 0.9, true), -0.5);
}

#[test]
fn ddpg_target_uses_target_networks() {
    let agent = Agent::new(small(Algorithm::Ddpg), 3, 2, &mut rng(1)).unwrap();
    let ts = transitions(16, 4, 2);
    let refs: Vec<&Transition> = ts.iter().collect();
    let y = agent.targets(&refs, &mut rng(3)).unwrap();
    for (t, yi) in ts.iter().zip(&y) {
        let a2: Vec<f64> = agent.actor_target.predict(&t.next_state).unwrap().iter().map(|v| v.tanh()).collect();
        let q2 = agent.critic_targets[0].predict(&cat(&t.next_state, &a2)).unwrap()[0];
        let want = if t.terminal { t.reward } else { t.reward + agent.config.gamma * q2 };
        assert!((yi - want).abs() < 1e-12);
    }
}

/// Single-step bandit `r(a) = -(a - 0.3)^2`: the critic regresses onto the
/// reward and the actor climbs to its maximizer.
#[test]
fn bandit_regression() {
    for alg in [Algorithm::Ddpg, Algorithm::Td3] {
        let cfg = AgentConfig { batch_size: 64, critic_lr: 3e-3, actor_lr: 3e-3, ..small(alg) };
        let mut r = rng(4);
        let mut agent = Agent::new(cfg, 1, 1, &mut r).unwrap();
        let mut buf = ReplayBuffer::new(4096);
        for _ in 0..4096 {
            let a: f64 = r.random_range(-1.0..1.0);
            buf.push(Transition {
                state: vec![0.5],
                action: vec![a],
                reward: -(a - 0.3) * (a - 0.3),
                next_state: vec![0.5],
                terminal: true,
            });
        }
        for _ in 0..3000 {
            let batch = buf.sample(64, &mut r);
            agent.update(&batch, &mut r).unwrap();
        }
        for k in 0..=10 {
            let a = -1.0 + 0.2 * k as f64;
            let q = agent.q_value(&[0.5], &[a]).unwrap();
            assert!((q + (a - 0.3) * (a - 0.3)).abs() < 0.05, "{alg}: Q({a}) = {q}");
        }
        let best = agent.act_greedy(&[0.5]).unwrap()[0];
        assert!((best - 0.3).abs() < 0.1, "{alg}: actor picks {best}");
    }
}

#[test]
fn td3_without_smoothing_takes_twin_minimum() {
    let cfg = AgentConfig { target_noise_clip: 0.0, ..small(Algorithm::Td3) };
    let mut agent = Agent::new(cfg, 3, 2, &mut rng(5)).unwrap();
    // second target critic is the first one shifted up by one
    agent.critic_targets[1] = agent.critic_targets[0].clone();
    let last = agent.critic_targets[1].layers.len() - 1;
    agent.critic_targets[1].layers[last].bias[0] += 1.0;
    let ts = transitions(16, 5, 6);
    let refs: Vec<&Transition> = ts.iter().collect();
    let y = agent.targets(&refs, &mut rng(7)).unwrap();
    for (t, yi) in ts.iter().zip(&y) {
        let a2 = policy_mean(&agent.actor_target, Algorithm::Td3, 2, &t.next_state).unwrap();
        let q = agent.critic_targets[0].predict(&cat(&t.next_state, &a2)).unwrap()[0];
        let want = if t.terminal { t.reward } else { t.reward + agent.config.gamma * q };
        assert!((yi - want).abs() < 1e-12, "the optimistic twin must be ignored");
    }
}

#[test]
fn td3_policy_delay_holds_actor_and_targets() {
    let mut agent = Agent::new(small(Algorithm::Td3), 3, 2, &mut rng(8)).unwrap();
    let ts = transitions(8, 3, 9);
    let refs: Vec<&Transition> = ts.iter().collect();
    let (actor0, target0) = (agent.actor.clone(), agent.critic_targets.clone());
    let s = agent.update(&refs, &mut rng(10)).unwrap();
    assert!(s.actor_loss.is_none());
    assert_eq!(agent.actor, actor0);
    assert_eq!(agent.critic_targets, target0);
    assert_ne!(agent.critics[0], agent.critic_targets[0]);
    let s = agent.update(&refs, &mut rng(11)).unwrap();
    assert!(s.actor_loss.is_some());
    assert_ne!(agent.actor, actor0);
}

/// Standard-normal draws in the order the agent consumes them, and the
/// resulting squashed-Gaussian sample.
fn soft_sample(agent: &Agent, s: &[f64], r: &mut impl Rng) -> (Vec<f64>, f64) {
    let out = agent.actor.predict(s).unwrap();
    let n = agent.action_dim;
    let mut a = Vec::new();
    let mut logp = 0.0;
    for i in 0..n {
        let e: f64 = r.sample(StandardNormal);
        let ls = out[n + i].clamp(-5.0, 2.0);
        let u = out[i] + ls.exp() * e;
        let x = u.tanh();
        let normal = -0.5 * e * e - ls - 0.5 * (2.0 * std::f64::consts::PI).ln();
        logp += normal - (1.0 - x * x + 1e-6).ln();
        a.push(x);
    }
    (a, logp)
}

#[test]
fn sac_soft_target_by_hand() {
    for alpha in [0.0, 0.2, 1.5] {
        let cfg = AgentConfig { sac_alpha: alpha, ..small(Algorithm::Sac) };
        let agent = Agent::new(cfg, 3, 2, &mut rng(12)).unwrap();
        let ts = transitions(16, 4, 13);
        let refs: Vec<&Transition> = ts.iter().collect();
        let y = agent.targets(&refs, &mut rng(14)).unwrap();
        let mut r = rng(14);
        for (t, yi) in ts.iter().zip(&y) {
            if t.terminal {
                assert!((yi - t.reward).abs() < 1e-15);
                continue;
            }
            let (a2, logp) = soft_sample(&agent, &t.next_state, &mut r);
            let x = cat(&t.next_state, &a2);
            let q = agent.critic_targets.iter().map(|c| c.predict(&x).unwrap()[0]).fold(f64::INFINITY, f64::min);
            // alpha = 0 reduces to the plain twin-minimum target
            let want = t.reward + agent.config.gamma * (q - alpha * logp);
            assert!((yi - want).abs() < 1e-10, "alpha {alpha}: {yi} vs {want}");
        }
    }
}

#[test]
fn sac_entropy_grows_with_temperature() {
    let entropy = |alpha: f64| {
        let cfg = AgentConfig { sac_alpha: alpha, batch_size: 32, ..small(Algorithm::Sac) };
        let mut r = rng(15);
        let mut agent = Agent::new(cfg, 1, 1, &mut r).unwrap();
        let mut buf = ReplayBuffer::new(1024);
        for _ in 0..1024 {
            let a: f64 = r.random_range(-1.0..1.0);
            buf.push(Transition { state: vec![0.5], action: vec![a], reward: -a * a, next_state: vec![0.5], terminal: true });
        }
        for _ in 0..200 {
            let batch = buf.sample(32, &mut r);
            agent.update(&batch, &mut r).unwrap();
        }
        agent.policy_entropy(&[vec![0.5]]).unwrap()
    };
    let (low, high) = (entropy(0.01), entropy(1.0));
    assert!(high > low, "entropy {high} at alpha 1 vs {low} at alpha 0.01");
}

#[test]
fn polyak_targets_lag_online_networks() {
    let cfg = AgentConfig { tau: 0.1, ..small(Algorithm::Ddpg) };
    let mut agent = Agent::new(cfg, 3, 2, &mut rng(16)).unwrap();
    let ts = transitions(8, 3, 17);
    let refs: Vec<&Transition> = ts.iter().collect();
    for k in 0..5 {
        let (c0, a0) = (agent.critic_targets[0].clone(), agent.actor_target.clone());
        agent.update(&refs, &mut rng(18 + k)).unwrap();
        let mut want_c = c0;
        soft_update(&mut want_c, &agent.critics[0], 0.1).unwrap();
        let mut want_a = a0;
        soft_update(&mut want_a, &agent.actor, 0.1).unwrap();
        assert_eq!(agent.critic_targets[0], want_c);
        assert_eq!(agent.actor_target, want_a);
    }
    assert_ne!(agent.critic_targets[0], agent.critics[0]);
}

fn tiny_problem() -> (EnvSpec, TimeSeriesDataset) {
    let sc = Scenario::build(&ExperimentConfig::desk()).unwrap();
    let data = sc.data.select_days(&[0, 1]).unwrap();
    (sc.spec, data)
}

#[test]
fn zero_episodes_give_empty_curves() {
    let (spec, data) = tiny_problem();
    let dir = tempfile::tempdir().unwrap();
    let cfg = AgentConfig { episodes: 0, ..small(Algorithm::Sac) };
    let out = train(&spec, &data, &cfg, 1, Some(dir.path())).unwrap();
    assert!(out.curves.is_empty());
    let text = std::fs::read_to_string(dir.path().join("curves.csv")).unwrap();
    assert_eq!(text.lines().count(), 1, "header only");
    assert!(dir.path().join("actor.json").exists());
    assert!(dir.path().join("critic2.json").exists());
}

#[test]
fn training_is_deterministic_per_seed() {
    let (spec, data) = tiny_problem();
    for alg in Algorithm::ALL {
        let cfg = AgentConfig { episodes: 3, warmup_steps: 96, ..small(alg) };
        let a = train(&spec, &data, &cfg, 42, None).unwrap();
        let b = train(&spec, &data, &cfg, 42, None).unwrap();
        assert_eq!(a.curves, b.curves, "{alg}");
        assert_eq!(a.agent.actor, b.agent.actor, "{alg}");
        assert_eq!(a.agent.critics, b.agent.critics, "{alg}");
        let c = train(&spec, &data, &cfg, 43, None).unwrap();
        assert_ne!(a.agent.critics, c.agent.critics, "{alg}");
    }
}
