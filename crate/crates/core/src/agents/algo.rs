use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::buffer::Transition;
use super::config::{td_target, AgentConfig, Algorithm};
use crate::error::{Error, Result};
use crate::neural::{soft_update, Activation, AdamState, Gradients, MlpParams};
use crate::Mlp;

const LOG_STD_MIN: f64 = -5.0;
const LOG_STD_MAX: f64 = 2.0;
/// Keeps `log(1 - tanh^2)` finite at saturation.
const SQUASH_EPS: f64 = 1e-6;

/// Online and target networks plus optimizer state for one algorithm.
#[derive(Debug, Clone)]
pub struct Agent {
    pub config: AgentConfig,
    pub state_dim: usize,
    pub action_dim: usize,
    pub actor: Mlp,
    pub actor_target: Mlp,
    /// One critic for DDPG, two for TD3 and SAC.
    pub critics: Vec<Mlp>,
    pub critic_targets: Vec<Mlp>,
    actor_opt: AdamState<f64>,
    critic_opts: Vec<AdamState<f64>>,
    /// Completed update calls.
    pub updates: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UpdateStats {
    pub critic_loss: f64,
    /// `None` when the actor was not updated this step (TD3 delay).
    pub actor_loss: Option<f64>,
    pub mean_q: f64,
}

fn sizes(input: usize, hidden: &[usize], output: usize) -> Vec<usize> {
    std::iter::once(input).chain(hidden.iter().copied()).chain(std::iter::once(output)).collect()
}

fn cat(s: &[f64], a: &[f64]) -> Vec<f64> {
    let mut v = Vec::with_capacity(s.len() + a.len());
    v.extend_from_slice(s);
    v.extend_from_slice(a);
    v
}

/// Deterministic action of a frozen actor: the squashed output (the squashed
/// mean for SAC). Actors have a linear output layer; `tanh` is applied here.
pub fn policy_mean(actor: &Mlp, _algorithm: Algorithm, action_dim: usize, state: &[f64]) -> Result<Vec<f64>> {
    let out = actor.predict(state)?;
    Ok(out[..action_dim].iter().map(|m| m.tanh()).collect())
}

/// A reparameterized draw from the squashed Gaussian policy.
struct SacSample {
    action: Vec<f64>,
    log_prob: f64,
    mean: Vec<f64>,
    log_std: Vec<f64>,
    clamped: Vec<bool>,
    eps: Vec<f64>,
}

impl Agent {
    pub fn new<R: Rng + ?Sized>(config: AgentConfig, state_dim: usize, action_dim: usize, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let actor_out = match config.algorithm {
            Algorithm::Sac => 2 * action_dim,
            _ => action_dim,
        };
        let actor = MlpParams::random(&sizes(state_dim, &config.actor_hidden, actor_out), Activation::Relu, Activation::Linear, rng)?;
        let n_critics = if config.algorithm.twin_critics() { 2 } else { 1 };
        let critics = (0..n_critics)
            .map(|_| {
                MlpParams::random(
                    &sizes(state_dim + action_dim, &config.critic_hidden, 1),
                    Activation::Relu,
                    Activation::Linear,
                    rng,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            actor_opt: AdamState::new(&actor, config.actor_lr),
            critic_opts: critics.iter().map(|c| AdamState::new(c, config.critic_lr)).collect(),
            actor_target: actor.clone(),
            critic_targets: critics.clone(),
            actor,
            critics,
            config,
            state_dim,
            action_dim,
            updates: 0,
        })
    }

    /// Deterministic action in `[-1, 1]` (the policy mean for SAC).
    pub fn act_greedy(&self, state: &[f64]) -> Result<Vec<f64>> {
        policy_mean(&self.actor, self.config.algorithm, self.action_dim, state)
    }

    /// Training-time action: Gaussian noise around the policy for DDPG and
    /// TD3, a policy sample for SAC.
    pub fn act_explore<R: Rng + ?Sized>(&self, state: &[f64], rng: &mut R) -> Result<Vec<f64>> {
        match self.config.algorithm {
            Algorithm::Sac => Ok(self.sac_sample(&self.actor, state, rng)?.action),
            _ => {
                let mut a = self.act_greedy(state)?;
                for v in &mut a {
                    let n: f64 = rng.sample(StandardNormal);
                    *v = (*v + self.config.exploration_noise * n).clamp(-1.0, 1.0);
                }
                Ok(a)
            }
        }
    }

    /// `Q_1(s, a)`, the critic used for deployment.
    pub fn q_value(&self, state: &[f64], action: &[f64]) -> Result<f64> {
        Ok(self.critics[0].predict(&cat(state, action))?[0])
    }

    fn sac_sample<R: Rng + ?Sized>(&self, actor: &Mlp, state: &[f64], rng: &mut R) -> Result<SacSample> {
        let eps: Vec<f64> = (0..self.action_dim).map(|_| rng.sample(StandardNormal)).collect();
        self.sac_from_noise(actor, state, eps)
    }

    fn sac_from_noise(&self, actor: &Mlp, state: &[f64], eps: Vec<f64>) -> Result<SacSample> {
        let out = actor.predict(state)?;
        let n = self.action_dim;
        let mut action = Vec::with_capacity(n);
        let mut log_std = Vec::with_capacity(n);
        let mut clamped = Vec::with_capacity(n);
        let mut log_prob = 0.0;
        for i in 0..n {
            let raw = out[n + i];
            let ls = raw.clamp(LOG_STD_MIN, LOG_STD_MAX);
            let pre = out[i] + ls.exp() * eps[i];
            let a = pre.tanh();
            log_prob += -0.5 * eps[i] * eps[i] - ls - 0.5 * (2.0 * std::f64::consts::PI).ln()
                - (1.0 - a * a + SQUASH_EPS).ln();
            action.push(a);
            log_std.push(ls);
            clamped.push(raw != ls);
        }
        Ok(SacSample { action, log_prob, mean: out[..n].to_vec(), log_std, clamped, eps })
    }

    /// Mean Gaussian entropy (before squashing) of the policy over `states`.
    pub fn policy_entropy(&self, states: &[Vec<f64>]) -> Result<f64> {
        if self.config.algorithm != Algorithm::Sac {
            return Err(Error::Config("policy entropy is defined for SAC only".into()));
        }
        let c = 0.5 * (1.0 + (2.0 * std::f64::consts::PI).ln());
        let mut total = 0.0;
        for s in states {
            let out = self.actor.predict(s)?;
            total += out[self.action_dim..]
                .iter()
                .map(|r| r.clamp(LOG_STD_MIN, LOG_STD_MAX) + c)
                .sum::<f64>();
        }
        Ok(total / states.len().max(1) as f64)
    }

    fn min_target_q(&self, s2: &[f64], a2: &[f64]) -> Result<f64> {
        let x = cat(s2, a2);
        let mut q = f64::INFINITY;
        for c in &self.critic_targets {
            q = q.min(c.predict(&x)?[0]);
        }
        Ok(q)
    }

    /// Critic regression targets for a batch, per the configured algorithm.
    pub fn targets<R: Rng + ?Sized>(&self, batch: &[&Transition], rng: &mut R) -> Result<Vec<f64>> {
        let cfg = &self.config;
        batch
            .iter()
            .map(|t| {
                let r = cfg.reward_scale * t.reward;
                if t.terminal {
                    return Ok(r);
                }
                let next_q = match cfg.algorithm {
                    Algorithm::Ddpg => {
                        let a2 = policy_mean(&self.actor_target, cfg.algorithm, self.action_dim, &t.next_state)?;
                        self.min_target_q(&t.next_state, &a2)?
                    }
                    Algorithm::Td3 => {
                        let mut a2 = policy_mean(&self.actor_target, cfg.algorithm, self.action_dim, &t.next_state)?;
                        for v in &mut a2 {
                            let n: f64 = rng.sample(StandardNormal);
                            let noise = (cfg.target_noise * n).clamp(-cfg.target_noise_clip, cfg.target_noise_clip);
                            *v = (*v + noise).clamp(-1.0, 1.0);
                        }
                        self.min_target_q(&t.next_state, &a2)?
                    }
                    Algorithm::Sac => {
                        let smp = self.sac_sample(&self.actor, &t.next_state, rng)?;
                        self.min_target_q(&t.next_state, &smp.action)? - cfg.sac_alpha * smp.log_prob
                    }
                };
                Ok(td_target(r, next_q, cfg.gamma, false))
            })
            .collect()
    }

    /// One mean-squared-error step of every critic towards `y`.
    fn critic_step(&mut self, batch: &[&Transition], y: &[f64]) -> Result<(f64, f64)> {
        let b = batch.len() as f64;
        let mut loss = 0.0;
        let mut mean_q = 0.0;
        for (k, critic) in self.critics.iter_mut().enumerate() {
            let mut g = Gradients::zeros_like(critic);
            for (t, &yi) in batch.iter().zip(y) {
                let tr = critic.forward(&cat(&t.state, &t.action))?;
                let q = tr.output()[0];
                let e = q - yi;
                loss += e * e / b;
                if k == 0 {
                    mean_q += q / b;
                }
                critic.backward(&tr, &[2.0 * e / b], &mut g)?;
            }
            self.critic_opts[k].update(critic, &g)?;
        }
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!("critic loss at update {}", self.updates)));
        }
        Ok((loss / self.critics.len() as f64, mean_q))
    }

    /// Gradient of `min_k Q_k(s, a)` with respect to `a`, and that minimum.
    fn min_q_action_grad(&self, s: &[f64], a: &[f64], use_both: bool) -> Result<(f64, Vec<f64>)> {
        let x = cat(s, a);
        let mut best: Option<(f64, Vec<f64>)> = None;
        let n = if use_both { self.critics.len() } else { 1 };
        for c in &self.critics[..n] {
            let tr = c.forward(&x)?;
            let q = tr.output()[0];
            if best.as_ref().is_none_or(|(bq, _)| q < *bq) {
                let g = c.input_gradient(&tr, &[1.0])?;
                best = Some((q, g[self.state_dim..].to_vec()));
            }
        }
        Ok(best.expect("at least one critic"))
    }

    /// Deterministic-policy ascent on `Q` (TD3: on the twin minimum).
    fn deterministic_actor_step(&mut self, batch: &[&Transition]) -> Result<f64> {
        let b = batch.len() as f64;
        let twin = self.config.algorithm == Algorithm::Td3;
        let lambda = self.config.actor_preact_penalty;
        let mut g = Gradients::zeros_like(&self.actor);
        let mut loss = 0.0;
        for t in batch {
            let tr = self.actor.forward(&t.state)?;
            let pre = tr.output();
            let a: Vec<f64> = pre.iter().map(|p| p.tanh()).collect();
            let (q, dq) = self.min_q_action_grad(&t.state, &a, twin)?;
            loss += (lambda * pre.iter().map(|p| p * p).sum::<f64>() - q) / b;
            let up: Vec<f64> = dq
                .iter()
                .zip(pre.iter().zip(&a))
                .map(|(d, (p, a))| (-d * (1.0 - a * a) + 2.0 * lambda * p) / b)
                .collect();
            self.actor.backward(&tr, &up, &mut g)?;
        }
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!("actor loss at update {}", self.updates)));
        }
        self.actor_opt.update(&mut self.actor, &g)?;
        Ok(loss)
    }

    /// `E[alpha log pi(a|s) - min Q(s, a)]` with reparameterized `a`.
    fn sac_actor_step<R: Rng + ?Sized>(&mut self, batch: &[&Transition], rng: &mut R) -> Result<f64> {
        let b = batch.len() as f64;
        let alpha = self.config.sac_alpha;
        let n = self.action_dim;
        let mut g = Gradients::zeros_like(&self.actor);
        let mut loss = 0.0;
        for t in batch {
            let smp = self.sac_sample(&self.actor, &t.state, rng)?;
            let tr = self.actor.forward(&t.state)?;
            let (q, dq) = self.min_q_action_grad(&t.state, &smp.action, true)?;
            loss += (alpha * smp.log_prob - q) / b;
            let mut up = vec![0.0; 2 * n];
            for i in 0..n {
                let a = smp.action[i];
                let one_m = 1.0 - a * a;
                let d_pre = alpha * 2.0 * a * one_m / (one_m + SQUASH_EPS) - dq[i] * one_m;
                up[i] = (d_pre + 2.0 * self.config.actor_preact_penalty * smp.mean[i]) / b;
                if !smp.clamped[i] {
                    let sigma = smp.log_std[i].exp();
                    up[n + i] = (d_pre * sigma * smp.eps[i] - alpha) / b;
                }
            }
            self.actor.backward(&tr, &up, &mut g)?;
        }
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!("actor loss at update {}", self.updates)));
        }
        self.actor_opt.update(&mut self.actor, &g)?;
        Ok(loss)
    }

    fn soft_update_critics(&mut self) -> Result<()> {
        for (t, o) in self.critic_targets.iter_mut().zip(&self.critics) {
            soft_update(t, o, self.config.tau)?;
        }
        Ok(())
    }

    /// One update of the configured algorithm.
    pub fn update<R: Rng + ?Sized>(&mut self, batch: &[&Transition], rng: &mut R) -> Result<UpdateStats> {
        match self.config.algorithm {
            Algorithm::Ddpg => ddpg_update(self, batch, rng),
            Algorithm::Td3 => td3_update(self, batch, rng),
            Algorithm::Sac => sac_update(self, batch, rng),
        }
    }
}

/// Critic regression on `r + gamma Q'(s', mu'(s'))`, actor ascent on
/// `Q(s, mu(s))`, then Polyak averaging of both targets.
pub fn ddpg_update<R: Rng + ?Sized>(agent: &mut Agent, batch: &[&Transition], rng: &mut R) -> Result<UpdateStats> {
    let y = agent.targets(batch, rng)?;
    let (critic_loss, mean_q) = agent.critic_step(batch, &y)?;
    let actor_loss = agent.deterministic_actor_step(batch)?;
    agent.soft_update_critics()?;
    soft_update(&mut agent.actor_target, &agent.actor, agent.config.tau)?;
    agent.updates += 1;
    Ok(UpdateStats { critic_loss, actor_loss: Some(actor_loss), mean_q })
}

/// Twin critics towards the clipped double-Q target with target-policy
/// smoothing; the actor and all targets move every `policy_delay` updates.
pub fn td3_update<R: Rng + ?Sized>(agent: &mut Agent, batch: &[&Transition], rng: &mut R) -> Result<UpdateStats> {
    let y = agent.targets(batch, rng)?;
    let (critic_loss, mean_q) = agent.critic_step(batch, &y)?;
    agent.updates += 1;
    let actor_loss = if agent.updates % agent.config.policy_delay as u64 == 0 {
        let l = agent.deterministic_actor_step(batch)?;
        agent.soft_update_critics()?;
        soft_update(&mut agent.actor_target, &agent.actor, agent.config.tau)?;
        Some(l)
    } else {
        None
    };
    Ok(UpdateStats { critic_loss, actor_loss, mean_q })
}

/// Twin critics towards the soft target `r + gamma (min Q' - alpha log pi)`,
/// then a reparameterized actor step; fixed `alpha`.
pub fn sac_update<R: Rng + ?Sized>(agent: &mut Agent, batch: &[&Transition], rng: &mut R) -> Result<UpdateStats> {
    let y = agent.targets(batch, rng)?;
    let (critic_loss, mean_q) = agent.critic_step(batch, &y)?;
    let actor_loss = agent.sac_actor_step(batch, rng)?;
    agent.soft_update_critics()?;
    agent.updates += 1;
    Ok(UpdateStats { critic_loss, actor_loss: Some(actor_loss), mean_q })
}
