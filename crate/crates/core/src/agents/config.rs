use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Ddpg,
    Td3,
    Sac,
}

impl Algorithm {
    pub const ALL: [Algorithm; 3] = [Algorithm::Ddpg, Algorithm::Td3, Algorithm::Sac];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Ddpg => "ddpg",
            Algorithm::Td3 => "td3",
            Algorithm::Sac => "sac",
        }
    }

    pub fn twin_critics(self) -> bool {
        !matches!(self, Algorithm::Ddpg)
    }
}

impl std::str::FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ddpg" => Ok(Algorithm::Ddpg),
            "td3" => Ok(Algorithm::Td3),
            "sac" => Ok(Algorithm::Sac),
            other => Err(Error::Config(format!("unknown algorithm {other:?}"))),
        }
    }
}

impl std::fmt::Display for Algorithm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Hyperparameters of one training run. Actions are normalized to `[-1, 1]`,
/// so noise scales are in those units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AgentConfig {
    pub algorithm: Algorithm,
    /// Training episodes (one day each).
    pub episodes: usize,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub gamma: f64,
    pub tau: f64,
    /// Std of the Gaussian exploration noise (DDPG, TD3).
    pub exploration_noise: f64,
    pub target_noise: f64,
    pub target_noise_clip: f64,
    pub policy_delay: usize,
    /// Fixed entropy coefficient (SAC).
    pub sac_alpha: f64,
    pub critic_hidden: Vec<usize>,
    pub actor_hidden: Vec<usize>,
    /// Rewards are multiplied by this before entering the critic targets.
    pub reward_scale: f64,
    /// Learn from `reward + price * (load - PV) * dt`, i.e. without the part of
    /// the cost that no action can change. The greedy action is unchanged
    /// because that term does not depend on the dispatch.
    pub subtract_exogenous_cost: bool,
    /// Weight of a quadratic penalty on the actor's pre-squash output, which
    /// keeps `tanh` out of saturation.
    pub actor_preact_penalty: f64,
    /// Start each training episode from a uniformly random state of charge
    /// (deployment always starts from `soc_init`).
    pub random_initial_soc: bool,
    /// Environment steps at the start of training that use uniformly random
    /// actions instead of the policy.
    pub warmup_steps: usize,
    /// Gradient updates per environment step once the buffer holds a batch.
    pub updates_per_step: usize,
    /// Write checkpoints every this many episodes (0 = only at the end).
    pub checkpoint_every: usize,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self::desk(Algorithm::Ddpg)
    }
}

impl AgentConfig {
    /// The published hyperparameters: batch 512, learning rate 6e-5,
    /// buffer 5e4, discount 0.99.
    pub fn paper(algorithm: Algorithm) -> Self {
        Self {
            algorithm,
            episodes: 2000,
            batch_size: 512,
            buffer_capacity: 50_000,
            actor_lr: 6e-5,
            critic_lr: 6e-5,
            gamma: 0.99,
            tau: 0.005,
            exploration_noise: 0.2,
            target_noise: 0.2,
            target_noise_clip: 0.5,
            policy_delay: 2,
            sac_alpha: 0.2,
            critic_hidden: vec![32, 32],
            actor_hidden: vec![64, 64],
            reward_scale: 1.0,
            subtract_exogenous_cost: false,
            warmup_steps: 0,
            random_initial_soc: false,
            actor_preact_penalty: 0.0,
            updates_per_step: 1,
            checkpoint_every: 0,
        }
    }

    /// Short-run settings for the bundled desk scenario.
    pub fn desk(algorithm: Algorithm) -> Self {
        Self {
            episodes: 400,
            batch_size: 64,
            buffer_capacity: 50_000,
            actor_lr: 3e-4,
            critic_lr: 1e-3,
            reward_scale: 0.1,
            subtract_exogenous_cost: true,
            warmup_steps: 4800,
            random_initial_soc: true,
            actor_preact_penalty: 1e-3,
            updates_per_step: 2,
            ..Self::paper(algorithm)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return bad("gamma must lie in (0, 1)");
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return bad("tau must lie in (0, 1]");
        }
        if self.batch_size == 0 || self.buffer_capacity < self.batch_size {
            return bad("batch size must be positive and fit in the buffer");
        }
        if self.policy_delay == 0 {
            return bad("policy delay must be at least 1");
        }
        if self.critic_hidden.is_empty() || self.critic_hidden.contains(&0) || self.actor_hidden.contains(&0) {
            return bad("hidden layer sizes must be positive");
        }
        if [self.actor_preact_penalty, self.actor_lr, self.critic_lr, self.exploration_noise, self.target_noise, self.target_noise_clip, self.sac_alpha]
            .iter()
            .any(|v| !(v.is_finite() && *v >= 0.0))
        {
            return bad("rates and noise scales must be finite and non-negative");
        }
        Ok(())
    }
}

/// `r + gamma * next_q`, or `r` at a terminal transition.
pub fn td_target(r: f64, next_q: f64, gamma: f64, terminal: bool) -> f64 {
    if terminal {
        r
    } else {
        r + gamma * next_q
    }
}
