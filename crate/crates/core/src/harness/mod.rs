//! Experiment plumbing: configuration, the bundled desk scenario, the
//! perfect-foresight oracle, deployment metrics and run directories.

mod config;
mod evaluate;
mod oracle;
mod report;
mod run;
mod scenario;

pub use config::{desk_ess, DatasetSource, DeployMode, ExperimentConfig, OracleConfig, TerminalSoc, DESK_STRESS_DAYS};
pub use evaluate::{oracle_report, run_day, run_deployment, DeploymentRun, Policy, StepTrace};
pub use oracle::{dp_oracle, OracleResult};
pub use report::{
    compare_report, cost_error_pct, mean_std, median, write_comparison, write_trace_csv, Comparison, DayMetrics,
    MetricsReport, ReportInput, TableRow,
};
pub use run::{
    aggregate_curves, deploy_dir, load_policy, oracle_dir, read_oracle, run_and_write_deployment, run_oracle,
    run_report, run_training, seed_dir, train_dir, write_oracle, AggregateRecord, Manifest, TrainingRun,
    CODE_VERSION,
};
pub use scenario::Scenario;
