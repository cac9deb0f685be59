//! Command-line entry point: data generation, training, deployment, the
//! perfect-foresight oracle and the comparison report.

use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use mipdrl::agents::Algorithm;
use mipdrl::env::generate_synthetic;
use mipdrl::harness::{
    read_oracle, run_and_write_deployment, run_oracle, run_report, run_training, write_oracle, DatasetSource,
    DeployMode, ExperimentConfig, Manifest, Scenario,
};

#[derive(Parser)]
#[command(name = "mipdrl", version, about = "Storage dispatch with MIP-deployed actor-critic agents")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the synthetic dataset of the config as CSV.
    GenData {
        #[command(flatten)]
        common: Common,
        /// Output CSV (default: <output_dir>/data.csv).
        #[arg(long)]
        csv: Option<PathBuf>,
        /// Also write a config (JSON) that reads the written CSV.
        #[arg(long)]
        write_config: Option<PathBuf>,
    },
    /// Train agents on the training days.
    Train {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        alg: AlgArg,
    },
    /// Deploy trained agents on the test days.
    Deploy {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        alg: AlgArg,
        /// `mip`, `greedy-actor` or `both` (default: the config's mode).
        #[arg(long)]
        mode: Option<String>,
    },
    /// Solve the perfect-foresight dispatch for every test day.
    Oracle {
        #[command(flatten)]
        common: Common,
    },
    /// Collect every deployment under the output directory into one table.
    Report {
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Args)]
struct Common {
    /// Experiment config (JSON). Without it the bundled desk scenario is used.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Override the global seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct AlgArg {
    /// `ddpg`, `td3`, `sac` or `all` (default: the config's algorithm).
    #[arg(long, short)]
    algorithm: Option<String>,
}

impl Common {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::desk(),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(o) = &self.out {
            cfg.output_dir = o.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

impl AlgArg {
    fn resolve(&self, cfg: &ExperimentConfig) -> Result<Vec<Algorithm>> {
        match self.algorithm.as_deref() {
            None => Ok(vec![cfg.agent.algorithm]),
            Some("all") => Ok(Algorithm::ALL.to_vec()),
            Some(s) => Ok(vec![s.parse()?]),
        }
    }
}

fn modes(arg: Option<&str>, cfg: &ExperimentConfig) -> Result<Vec<DeployMode>> {
    match arg {
        None => Ok(vec![cfg.mode]),
        Some("both") => Ok(vec![DeployMode::Mip, DeployMode::GreedyActor]),
        Some(s) => Ok(vec![s.parse()?]),
    }
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::GenData { common, csv, write_config } => {
            let mut cfg = common.load()?;
            let DatasetSource::Synthetic(syn) = &mut cfg.dataset else {
                bail!("gen-data needs a synthetic dataset in the config");
            };
            let data = generate_synthetic(syn)?;
            let path = csv.unwrap_or_else(|| cfg.output_dir.join("data.csv"));
            if let Some(dir) = path.parent() {
                std::fs::create_dir_all(dir)?;
            }
            data.save_csv(&path).with_context(|| format!("writing {}", path.display()))?;
            if let Some(p) = write_config {
                let mut c = cfg.clone();
                c.dataset = DatasetSource::Csv { path: std::path::absolute(&path)? };
                std::fs::write(&p, c.to_json()?)?;
            }
            Manifest::new("gen-data", &cfg, vec![path.display().to_string()]).write(&cfg.output_dir)?;
            println!("{} days written to {}", data.n_days(), path.display());
        }
        Command::Train { common, alg } => {
            let base = common.load()?;
            let scenario = Scenario::build(&base)?;
            for a in alg.resolve(&base)? {
                let cfg = base.with_algorithm(a);
                let run = run_training(&cfg, &scenario, true)?;
                match run.aggregate.last() {
                    Some(last) => println!(
                        "{a}: {} episodes x {} seeds, final reward {:.2} +- {:.2}",
                        run.aggregate.len(),
                        run.seeds.len(),
                        last.total_reward_mean,
                        last.total_reward_std
                    ),
                    None => println!("{a}: no episodes run"),
                }
            }
        }
        Command::Deploy { common, alg, mode } => {
            let base = common.load()?;
            let scenario = Scenario::build(&base)?;
            let oracle = read_oracle(&base)?.filter(|o| {
                o.len() == scenario.test_days.len() && o.iter().zip(&scenario.test_days).all(|(r, d)| r.day == *d)
            });
            if oracle.is_none() {
                log::info!("no oracle results for these test days; cost errors are left out");
            }
            for a in alg.resolve(&base)? {
                let cfg = base.with_algorithm(a);
                for m in modes(mode.as_deref(), &cfg)? {
                    let run = run_and_write_deployment(&cfg, &scenario, m, oracle.as_deref())?;
                    let r = &run.report;
                    print!(
                        "{}: mean daily cost {:.2} EUR, {} voltage violations, {} SOC clips",
                        r.label,
                        r.mean_cost(),
                        r.total_violations(),
                        r.total_clip_events()
                    );
                    if let Some((m, s)) = r.cost_error_mean_std() {
                        print!(", cost error {m:.2} +- {s:.2} %");
                    }
                    println!();
                }
            }
        }
        Command::Oracle { common } => {
            let cfg = common.load()?;
            let scenario = Scenario::build(&cfg)?;
            let (res, times) = run_oracle(&cfg, &scenario)?;
            let report = write_oracle(&cfg, &scenario, &res, &times)?;
            println!("oracle: mean daily cost {:.2} EUR over {} days", report.mean_cost(), res.len());
        }
        Command::Report { common } => {
            let cfg = common.load()?;
            let dir = run_report(&cfg)?;
            print!("{}", std::fs::read_to_string(dir.join("table.md"))?);
        }
    }
    Ok(())
}
