//! The storage-dispatch MDP: battery dynamics, exogenous data and the
//! penalized reward.

mod data;
mod ess;
mod mdp;

pub use data::{generate_synthetic, SyntheticConfig, TimeSeriesDataset};
pub use ess::{soc_update, EssSpec, SocUpdate, SOC_CLIP_TOL};
pub use mdp::{violation_penalty, Env, EnvConfig, EnvSpec, EnvState, FeatureScaling, StepResult};
