use serde::Serialize;
use sha2::{Digest, Sha256};

use super::config::{hex, DatasetSource, ExperimentConfig};
use crate::env::{generate_synthetic, EnvSpec, TimeSeriesDataset};
use crate::error::{Error, Result};
use crate::grid::bundled_feeder6;
use crate::Network;

/// Feeder, storage and the full dataset of one experiment, plus its split.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub spec: EnvSpec,
    pub data: TimeSeriesDataset,
    pub train_days: Vec<usize>,
    pub test_days: Vec<usize>,
}

impl Scenario {
    pub fn build(cfg: &ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        let network = match &cfg.network {
            Some(p) => Network::load(p)?,
            None => bundled_feeder6(),
        };
        let data = match &cfg.dataset {
            DatasetSource::Synthetic(s) => generate_synthetic(s)?,
            DatasetSource::Csv { path } => TimeSeriesDataset::load_csv(path, network.node_count)?,
        };
        let spec = EnvSpec::new(network, cfg.ess.clone(), cfg.env.clone())?;
        let n = data.n_days();
        if let Some(d) = cfg.train_days.iter().chain(&cfg.test_days).find(|&&d| d >= n) {
            return Err(Error::Config(format!("day {d} is outside the dataset ({n} days)")));
        }
        Ok(Self {
            spec,
            data,
            train_days: cfg.train_days.clone(),
            test_days: cfg.test_days.clone(),
        })
    }

    pub fn train_data(&self) -> Result<TimeSeriesDataset> {
        self.data.select_days(&self.train_days)
    }

    pub fn test_data(&self) -> Result<TimeSeriesDataset> {
        self.data.select_days(&self.test_days)
    }

    /// Identifies the evaluation problem (feeder, storage, reward, test data),
    /// so reports from different scenarios are never compared.
    pub fn fingerprint(&self) -> Result<String> {
        #[derive(Serialize)]
        struct Key<'a> {
            spec: &'a EnvSpec,
            test: TimeSeriesDataset,
        }
        let bytes = serde_json::to_vec(&Key { spec: &self.spec, test: self.test_data()? })?;
        Ok(hex(&Sha256::digest(&bytes)))
    }
}
