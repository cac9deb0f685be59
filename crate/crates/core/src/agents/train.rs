use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::algo::Agent;
use super::buffer::{ReplayBuffer, Transition};
use super::config::AgentConfig;
use crate::env::{Env, EnvSpec, FeatureScaling, TimeSeriesDataset};
use crate::error::{Error, Result};
use crate::neural::Checkpoint;
use crate::Mlp;

/// One row of the training curves.
///
/// `penalty_term` is the magnitude of the summed voltage penalty (so it is
/// non-negative), and `total_reward = -cost_term - penalty_term`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub episode: usize,
    pub total_reward: f64,
    pub cost_term: f64,
    pub penalty_term: f64,
    pub violations: usize,
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub agent: Agent,
    pub scaling: FeatureScaling,
    pub curves: Vec<EpisodeRecord>,
}

pub fn write_curves_csv(path: impl AsRef<Path>, curves: &[EpisodeRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    // header is written even for an empty run
    w.write_record(["episode", "total_reward", "cost_term", "penalty_term", "violations"])?;
    for r in curves {
        w.write_record([
            r.episode.to_string(),
            r.total_reward.to_string(),
            r.cost_term.to_string(),
            r.penalty_term.to_string(),
            r.violations.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_curves_csv(path: impl AsRef<Path>) -> Result<Vec<EpisodeRecord>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

fn metadata(agent: &Agent, scaling: &FeatureScaling, role: &str, episode: usize) -> serde_json::Value {
    serde_json::json!({
        "role": role,
        "algorithm": agent.config.algorithm.name(),
        "episode": episode,
        "scaling": scaling,
        "agent_config": agent.config,
    })
}

/// Writes `actor.json` and `critic{k}.json` into `dir`.
pub fn save_agent(dir: &Path, agent: &Agent, scaling: &FeatureScaling, episode: usize) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    Checkpoint::new(agent.actor.clone(), metadata(agent, scaling, "actor", episode)).save(dir.join("actor.json"))?;
    for (k, c) in agent.critics.iter().enumerate() {
        Checkpoint::new(c.clone(), metadata(agent, scaling, "critic", episode)).save(dir.join(format!("critic{}.json", k + 1)))?;
    }
    Ok(())
}

/// A frozen network together with the scaling and config it was trained under.
#[derive(Debug, Clone)]
pub struct LoadedNet {
    pub params: Mlp,
    pub scaling: FeatureScaling,
    pub config: AgentConfig,
}

pub fn load_net(path: impl AsRef<Path>) -> Result<LoadedNet> {
    let c = Checkpoint::load(path)?;
    let field = |k: &str| {
        c.metadata
            .get(k)
            .cloned()
            .ok_or_else(|| Error::Checkpoint(format!("checkpoint metadata lacks `{k}`")))
    };
    Ok(LoadedNet {
        scaling: serde_json::from_value(field("scaling")?)?,
        config: serde_json::from_value(field("agent_config")?)?,
        params: c.params,
    })
}

/// Trains one agent over the days of `data`.
///
/// Episodes visit the days in a seeded shuffled order, reshuffled after every
/// pass. Exploration actions are in normalized units; the stored action is
/// the one proposed, so state-of-charge clipping is part of the dynamics the
/// critic learns. Updates start once
/// the buffer holds a full batch. With `out_dir`, curves and checkpoints are
/// written there.
pub fn train(
    spec: &EnvSpec,
    data: &TimeSeriesDataset,
    config: &AgentConfig,
    seed: u64,
    out_dir: Option<&Path>,
) -> Result<TrainOutput> {
    config.validate()?;
    let scaling = FeatureScaling::fit(spec, data);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut agent = Agent::new(config.clone(), scaling.state_dim(), scaling.action_dim(), &mut rng)?;
    let mut env = Env::new(spec, data)?;
    let mut buffer = ReplayBuffer::new(config.buffer_capacity);
    let mut curves = Vec::with_capacity(config.episodes);
    let mut order: Vec<usize> = (0..data.n_days()).collect();
    let mut total_steps = 0usize;

    for ep in 0..config.episodes {
        let pos = ep % order.len();
        if pos == 0 {
            order.shuffle(&mut rng);
        }
        let mut s = if config.random_initial_soc {
            let soc = spec.ess.iter().map(|e| rng.random_range(e.soc_min..=e.soc_max)).collect();
            env.reset_with_soc(order[pos], soc)?
        } else {
            env.reset(order[pos])?
        };
        let mut f = scaling.features(&s);
        let mut rec = EpisodeRecord { episode: ep, total_reward: 0.0, cost_term: 0.0, penalty_term: 0.0, violations: 0 };
        loop {
            let u = if total_steps < config.warmup_steps {
                (0..agent.action_dim).map(|_| rng.random_range(-1.0..=1.0)).collect()
            } else {
                agent.act_explore(&f, &mut rng)?
            };
            total_steps += 1;
            let i = data.index(s.day, s.t);
            let step = env.step(&scaling.to_kw(&u))?;
            let baseline = if config.subtract_exogenous_cost {
                spec.step_cost(data.price_eur_per_kwh[i], &data.load_kw[i], &data.pv_kw[i], &[], data.timestep_hours)
            } else {
                0.0
            };
            let f2 = scaling.features(&step.next_state);
            rec.total_reward += step.reward;
            rec.cost_term += step.cost_eur;
            rec.penalty_term -= step.penalty;
            rec.violations += step.voltage_violations;
            buffer.push(Transition {
                state: f,
                action: u,
                reward: step.reward + baseline,
                next_state: f2.clone(),
                terminal: step.done,
            });
            if buffer.len() >= config.batch_size {
                for _ in 0..config.updates_per_step {
                    let batch = buffer.sample(config.batch_size, &mut rng);
                    agent.update(&batch, &mut rng).map_err(|e| {
                        Error::NonFinite(format!("episode {ep}, step {}: {e}", s.t))
                    })?;
                }
            }
            s = step.next_state;
            f = f2;
            if step.done {
                break;
            }
        }
        log::debug!(
            "{} ep {ep}: reward {:.3} cost {:.3} penalty {:.4} viol {}",
            config.algorithm,
            rec.total_reward,
            rec.cost_term,
            rec.penalty_term,
            rec.violations
        );
        curves.push(rec);
        if let Some(dir) = out_dir {
            if config.checkpoint_every > 0 && (ep + 1) % config.checkpoint_every == 0 {
                save_agent(&dir.join(format!("checkpoints/ep{:05}", ep + 1)), &agent, &scaling, ep + 1)?;
            }
        }
    }
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
        write_curves_csv(dir.join("curves.csv"), &curves)?;
        save_agent(dir, &agent, &scaling, config.episodes)?;
    }
    Ok(TrainOutput { agent, scaling, curves })
}

/// Trailing moving average over `window` entries (shorter at the start).
pub fn smooth(values: &[f64], window: usize) -> Vec<f64> {
    let w = window.max(1);
    let mut out = Vec::with_capacity(values.len());
    let mut sum = 0.0;
    for i in 0..values.len() {
        sum += values[i];
        if i >= w {
            sum -= values[i - w];
        }
        out.push(sum / (i + 1).min(w) as f64);
    }
    out
}
