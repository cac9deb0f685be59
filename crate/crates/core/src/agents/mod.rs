//! Replay buffer and the DDPG, TD3 and SAC learners that produce the critic
//! consumed by [`crate::qmip`].

mod algo;
mod buffer;
mod config;
mod train;

pub use algo::{ddpg_update, policy_mean, sac_update, td3_update, Agent, UpdateStats};
pub use buffer::{ReplayBuffer, Transition};
pub use config::{td_target, AgentConfig, Algorithm};
pub use train::{
    load_net, read_curves_csv, save_agent, smooth, train, write_curves_csv, EpisodeRecord, LoadedNet, TrainOutput,
};
