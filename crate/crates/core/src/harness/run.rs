//! Run directories: training, deployment, oracle and report artifacts, each
//! with a manifest recording the config hash and code version.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::config::{DeployMode, ExperimentConfig};
use super::evaluate::{oracle_report, run_deployment, DeploymentRun, Policy};
use super::oracle::{dp_oracle, OracleResult};
use super::report::{mean_std, write_comparison, write_trace_csv, MetricsReport, ReportInput};
use super::scenario::Scenario;
use crate::agents::{load_net, read_curves_csv, train, Algorithm, EpisodeRecord, TrainOutput};
use crate::error::{Error, Result};

pub const CODE_VERSION: &str = concat!(env!("CARGO_PKG_NAME"), " ", env!("CARGO_PKG_VERSION"));

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub config_hash: String,
    pub code_version: String,
    pub seed: u64,
    pub config: ExperimentConfig,
    pub artifacts: Vec<String>,
}

impl Manifest {
    pub fn new(command: &str, cfg: &ExperimentConfig, artifacts: Vec<String>) -> Self {
        Self {
            command: command.into(),
            config_hash: cfg.hash(),
            code_version: CODE_VERSION.into(),
            seed: cfg.seed,
            config: cfg.clone(),
            artifacts,
        }
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

pub fn train_dir(cfg: &ExperimentConfig, algorithm: Algorithm) -> PathBuf {
    cfg.output_dir.join("train").join(algorithm.name())
}

pub fn seed_dir(cfg: &ExperimentConfig, algorithm: Algorithm, seed: u64) -> PathBuf {
    train_dir(cfg, algorithm).join(format!("seed{seed}"))
}

pub fn deploy_dir(cfg: &ExperimentConfig, algorithm: Algorithm, mode: DeployMode) -> PathBuf {
    cfg.output_dir.join("deploy").join(format!("{}-{}", algorithm.name(), mode.name()))
}

pub fn oracle_dir(cfg: &ExperimentConfig) -> PathBuf {
    cfg.output_dir.join("oracle")
}

/// Per-episode mean and standard deviation across seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRecord {
    pub episode: usize,
    pub total_reward_mean: f64,
    pub total_reward_std: f64,
    pub cost_term_mean: f64,
    pub cost_term_std: f64,
    pub penalty_term_mean: f64,
    pub penalty_term_std: f64,
    pub violations_mean: f64,
    pub violations_std: f64,
}

pub fn aggregate_curves(runs: &[Vec<EpisodeRecord>]) -> Vec<AggregateRecord> {
    let n = runs.iter().map(Vec::len).min().unwrap_or(0);
    (0..n)
        .map(|e| {
            let col = |f: &dyn Fn(&EpisodeRecord) -> f64| mean_std(&runs.iter().map(|r| f(&r[e])).collect::<Vec<_>>());
            let (rm, rs) = col(&|r| r.total_reward);
            let (cm, cs) = col(&|r| r.cost_term);
            let (pm, ps) = col(&|r| r.penalty_term);
            let (vm, vs) = col(&|r| r.violations as f64);
            AggregateRecord {
                episode: e,
                total_reward_mean: rm,
                total_reward_std: rs,
                cost_term_mean: cm,
                cost_term_std: cs,
                penalty_term_mean: pm,
                penalty_term_std: ps,
                violations_mean: vm,
                violations_std: vs,
            }
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct TrainingRun {
    pub seeds: Vec<u64>,
    pub outputs: Vec<TrainOutput>,
    pub aggregate: Vec<AggregateRecord>,
}

/// Trains `cfg.n_seeds` agents (seeds `seed, seed + 1, ...`) on the
/// training days and writes curves, checkpoints, the cross-seed aggregate
/// and a manifest. With `out = false` nothing is written.
pub fn run_training(cfg: &ExperimentConfig, scenario: &Scenario, out: bool) -> Result<TrainingRun> {
    let data = scenario.train_data()?;
    let seeds: Vec<u64> = (0..cfg.n_seeds as u64).map(|k| cfg.seed + k).collect();
    let alg = cfg.agent.algorithm;
    let mut outputs = Vec::with_capacity(seeds.len());
    for &s in &seeds {
        let dir = seed_dir(cfg, alg, s);
        log::info!("training {alg} seed {s} for {} episodes", cfg.agent.episodes);
        outputs.push(train(&scenario.spec, &data, &cfg.agent, s, out.then_some(dir.as_path()))?);
    }
    let aggregate = aggregate_curves(&outputs.iter().map(|o| o.curves.clone()).collect::<Vec<_>>());
    if out {
        let dir = train_dir(cfg, alg);
        let mut w = csv::Writer::from_path(dir.join("curves_mean_std.csv"))?;
        if aggregate.is_empty() {
            w.write_record([
                "episode",
                "total_reward_mean",
                "total_reward_std",
                "cost_term_mean",
                "cost_term_std",
                "penalty_term_mean",
                "penalty_term_std",
                "violations_mean",
                "violations_std",
            ])?;
        }
        for r in &aggregate {
            w.serialize(r)?;
        }
        w.flush()?;
        let mut artifacts = vec!["curves_mean_std.csv".to_string()];
        artifacts.extend(seeds.iter().map(|s| format!("seed{s}/")));
        Manifest::new("train", cfg, artifacts).write(&dir)?;
    }
    Ok(TrainingRun { seeds, outputs, aggregate })
}

/// Builds the deployment policy from the checkpoints of training seed `cfg.seed`.
pub fn load_policy(cfg: &ExperimentConfig, algorithm: Algorithm, mode: DeployMode) -> Result<Policy> {
    let dir = seed_dir(cfg, algorithm, cfg.seed);
    match mode {
        DeployMode::Mip => {
            let c = load_net(dir.join("critic1.json"))?;
            Ok(Policy::Mip { critic: c.params, scaling: c.scaling, config: cfg.deploy.clone() })
        }
        DeployMode::GreedyActor => {
            let a = load_net(dir.join("actor.json"))?;
            Ok(Policy::Greedy { actor: a.params, algorithm: a.config.algorithm, scaling: a.scaling })
        }
    }
}

/// Oracle schedules for every test day, with per-day wall time.
pub fn run_oracle(cfg: &ExperimentConfig, scenario: &Scenario) -> Result<(Vec<OracleResult>, Vec<f64>)> {
    let mut res = Vec::new();
    let mut times = Vec::new();
    for &d in &scenario.test_days {
        let start = Instant::now();
        res.push(dp_oracle(&scenario.spec, &scenario.data, d, &cfg.oracle)?);
        times.push(start.elapsed().as_secs_f64());
    }
    Ok((res, times))
}

pub fn write_oracle(cfg: &ExperimentConfig, scenario: &Scenario, res: &[OracleResult], times: &[f64]) -> Result<MetricsReport> {
    let dir = oracle_dir(cfg);
    std::fs::create_dir_all(&dir)?;
    std::fs::write(dir.join("oracle.json"), serde_json::to_string_pretty(res)?)?;
    let report = oracle_report(scenario, res, times)?;
    report.save(dir.join("report.json"))?;
    Manifest::new("oracle", cfg, vec!["oracle.json".into(), "report.json".into()]).write(&dir)?;
    Ok(report)
}

pub fn read_oracle(cfg: &ExperimentConfig) -> Result<Option<Vec<OracleResult>>> {
    let p = oracle_dir(cfg).join("oracle.json");
    if !p.exists() {
        return Ok(None);
    }
    Ok(Some(serde_json::from_str(&std::fs::read_to_string(p)?)?))
}

/// Deploys the trained agent of `cfg.agent.algorithm` in `mode` and writes
/// the report, the per-step trace and a manifest.
pub fn run_and_write_deployment(
    cfg: &ExperimentConfig,
    scenario: &Scenario,
    mode: DeployMode,
    oracle: Option<&[OracleResult]>,
) -> Result<DeploymentRun> {
    let alg = cfg.agent.algorithm;
    let policy = load_policy(cfg, alg, mode)?;
    let label = match mode {
        DeployMode::Mip => format!("MIP-{}", alg.name().to_uppercase()),
        DeployMode::GreedyActor => alg.name().to_uppercase(),
    };
    let run = run_deployment(scenario, &policy, &label, Some(alg), oracle)?;
    let dir = deploy_dir(cfg, alg, mode);
    std::fs::create_dir_all(&dir)?;
    run.report.save(dir.join("report.json"))?;
    write_trace_csv(dir.join("trace.csv"), &run.trace)?;
    std::fs::write(dir.join("trace.json"), serde_json::to_string(&run.trace)?)?;
    Manifest::new("deploy", cfg, vec!["report.json".into(), "trace.csv".into(), "trace.json".into()]).write(&dir)?;
    Ok(run)
}

/// Collects every deployment report (and the oracle's) under the output
/// directory and writes the comparison into `<output_dir>/report`.
pub fn run_report(cfg: &ExperimentConfig) -> Result<PathBuf> {
    let mut inputs = Vec::new();
    let oracle = oracle_dir(cfg).join("report.json");
    if oracle.exists() {
        inputs.push(ReportInput::from(MetricsReport::load(&oracle)?));
    }
    let deploy_root = cfg.output_dir.join("deploy");
    let mut dirs: Vec<PathBuf> = match std::fs::read_dir(&deploy_root) {
        Ok(rd) => rd.filter_map(|e| e.ok().map(|e| e.path())).filter(|p| p.join("report.json").exists()).collect(),
        Err(_) => Vec::new(),
    };
    dirs.sort();
    for d in dirs {
        let report = MetricsReport::load(d.join("report.json"))?;
        let trace = match std::fs::read_to_string(d.join("trace.json")) {
            Ok(t) => serde_json::from_str(&t)?,
            Err(_) => Vec::new(),
        };
        let curves = report
            .algorithm
            .as_deref()
            .and_then(|a| a.parse::<Algorithm>().ok())
            .map(|a| seed_dir(cfg, a, cfg.seed).join("curves.csv"))
            .filter(|p| p.exists())
            .map(read_curves_csv)
            .transpose()?
            .unwrap_or_default();
        inputs.push(ReportInput { report: Some(report), trace, curves });
    }
    if inputs.is_empty() {
        return Err(Error::Report(format!("no reports under {}", cfg.output_dir.display())));
    }
    let dir = cfg.output_dir.join("report");
    write_comparison(&dir, &inputs)?;
    Manifest::new("report", cfg, vec!["table.md".into(), "table.csv".into()]).write(&dir)?;
    Ok(dir)
}
