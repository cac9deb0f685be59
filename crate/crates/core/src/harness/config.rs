use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::agents::{AgentConfig, Algorithm};
use crate::env::{EnvConfig, EssSpec, SyntheticConfig};
use crate::error::{Error, Result};
use crate::qmip::DeployConfig;

/// How test days are dispatched.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DeployMode {
    /// Maximize the critic subject to the operational constraints.
    Mip,
    /// Apply the frozen actor's deterministic action (standard DRL baseline).
    GreedyActor,
}

impl DeployMode {
    pub fn name(self) -> &'static str {
        match self {
            DeployMode::Mip => "mip",
            DeployMode::GreedyActor => "greedy-actor",
        }
    }
}

impl std::str::FromStr for DeployMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mip" => Ok(DeployMode::Mip),
            "greedy-actor" | "greedy" | "actor" => Ok(DeployMode::GreedyActor),
            _ => Err(Error::Config(format!("unknown deployment mode `{s}`"))),
        }
    }
}

/// Where the exogenous series come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetSource {
    Synthetic(SyntheticConfig),
    Csv { path: PathBuf },
}

/// What the terminal state of charge must satisfy in the oracle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminalSoc {
    /// Same as the MDP: the final state of charge carries no value.
    Free,
    /// Final state of charge at least the initial one.
    AtLeastInitial,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OracleConfig {
    /// State-of-charge grid points per storage unit.
    pub soc_points: usize,
    /// Dispatch levels per storage unit, evenly spaced over the power range.
    pub action_levels: usize,
    pub terminal_soc: TerminalSoc,
    /// Refuse instances with more joint (state, action) pairs per stage.
    pub max_stage_work: usize,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            soc_points: 51,
            action_levels: 11,
            terminal_soc: TerminalSoc::Free,
            max_stage_work: 20_000_000,
        }
    }
}

/// Everything needed to reproduce one experiment.
///
/// JSON schema (all fields optional except where noted; defaults give the
/// bundled desk scenario):
///
/// - `name`: label used in reports.
/// - `network`: path to a feeder JSON; `null` selects the bundled 6-node feeder.
/// - `dataset`: `{"kind": "synthetic", ...SyntheticConfig}` or `{"kind": "csv", "path": ...}`.
/// - `ess`: list of storage units (`node`, `e_max_kwh`, `eta`, `p_min_kw`,
///   `p_max_kw`, `soc_min`, `soc_max`, `soc_init`).
/// - `env`: `sigma`, `power_factor`, `monitored_nodes`, `divergence_penalty`.
/// - `agent`: hyperparameters, see [`AgentConfig`].
/// - `train_days`, `test_days`: disjoint day indices into the dataset.
/// - `mode`: `"mip"` or `"greedy-actor"`.
/// - `deploy`: MIP deployment settings, see [`DeployConfig`].
/// - `oracle`: dynamic-programming discretization.
/// - `output_dir`: root of the run directories.
/// - `seed`: global seed; `n_seeds` trainings use `seed, seed + 1, ...`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub name: String,
    pub network: Option<PathBuf>,
    pub dataset: DatasetSource,
    pub ess: Vec<EssSpec>,
    pub env: EnvConfig,
    pub agent: AgentConfig,
    pub train_days: Vec<usize>,
    pub test_days: Vec<usize>,
    pub mode: DeployMode,
    pub deploy: DeployConfig,
    pub oracle: OracleConfig,
    pub output_dir: PathBuf,
    pub seed: u64,
    pub n_seeds: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::desk()
    }
}

/// Days of the bundled scenario with a clear-sky morning PV surge that
/// overloads the feeder when storage stays idle.
pub const DESK_STRESS_DAYS: [usize; 6] = [3, 10, 17, 21, 25, 28];

pub fn desk_ess(node: usize) -> EssSpec {
    EssSpec {
        node,
        e_max_kwh: 1600.0,
        eta: 0.95,
        p_min_kw: -200.0,
        p_max_kw: 200.0,
        soc_min: 0.1,
        soc_max: 0.9,
        soc_init: 0.5,
    }
}

impl ExperimentConfig {
    /// The bundled desk scenario: 6-node feeder, storage at nodes 3 and 5,
    /// 30 synthetic days split 24 / 6, with stress days in both halves.
    pub fn desk() -> Self {
        let mut data = SyntheticConfig::desk(2024, 30);
        data.stress_days = DESK_STRESS_DAYS.to_vec();
        data.stress_factor = 1.0;
        data.stress_pv_factor = 6.0;
        data.stress_pv_hour = 10.0;
        Self {
            name: "desk-6".into(),
            network: None,
            dataset: DatasetSource::Synthetic(data),
            ess: vec![desk_ess(3), desk_ess(5)],
            env: EnvConfig { sigma: 500.0, ..EnvConfig::default() },
            agent: AgentConfig::desk(Algorithm::Ddpg),
            train_days: (0..24).collect(),
            test_days: (24..30).collect(),
            mode: DeployMode::Mip,
            deploy: DeployConfig::default(),
            oracle: OracleConfig::default(),
            output_dir: PathBuf::from("runs"),
            seed: 1,
            n_seeds: 1,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Checks the parts that do not need the dataset loaded.
    pub fn validate(&self) -> Result<()> {
        if let Some(p) = &self.network {
            if !p.exists() {
                return Err(Error::Config(format!("network file {} does not exist", p.display())));
            }
        }
        if let DatasetSource::Csv { path } = &self.dataset {
            if !path.exists() {
                return Err(Error::Config(format!("dataset file {} does not exist", path.display())));
            }
        }
        if self.test_days.iter().any(|d| self.train_days.contains(d)) {
            return Err(Error::Config("test days overlap training days".into()));
        }
        if self.train_days.is_empty() {
            return Err(Error::Config("no training days".into()));
        }
        if self.n_seeds == 0 {
            return Err(Error::Config("n_seeds must be at least 1".into()));
        }
        if self.oracle.soc_points < 2 || self.oracle.action_levels < 2 {
            return Err(Error::Config("oracle needs at least 2 grid points and 2 action levels".into()));
        }
        self.agent.validate()
    }

    /// SHA-256 of the canonical JSON serialization.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        hex(&Sha256::digest(&bytes))
    }

    pub fn with_algorithm(&self, algorithm: Algorithm) -> Self {
        let mut c = self.clone();
        c.agent.algorithm = algorithm;
        c
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
