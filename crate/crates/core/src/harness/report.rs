use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::evaluate::StepTrace;
use crate::agents::EpisodeRecord;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DayMetrics {
    pub day: usize,
    pub cost_eur: f64,
    /// Magnitude of the summed voltage penalty.
    pub penalty_eur: f64,
    pub voltage_violations: usize,
    pub soc_clip_events: usize,
    pub solve_time_s: f64,
    pub oracle_cost_eur: Option<f64>,
    /// `100 * (cost - oracle) / |oracle|`.
    pub cost_error_pct: Option<f64>,
}

pub fn cost_error_pct(cost: f64, oracle: f64) -> f64 {
    100.0 * (cost - oracle) / oracle.abs()
}

impl DayMetrics {
    pub fn from_trace(day: usize, steps: &[StepTrace]) -> Self {
        Self {
            day,
            cost_eur: steps.iter().map(|s| s.cost_eur).sum(),
            penalty_eur: -steps.iter().map(|s| s.penalty).sum::<f64>(),
            voltage_violations: steps.iter().map(|s| s.voltage_violations).sum(),
            soc_clip_events: steps.iter().map(|s| s.soc_clip_events).sum(),
            solve_time_s: steps.iter().map(|s| s.solve_time_s).sum(),
            oracle_cost_eur: None,
            cost_error_pct: None,
        }
    }

    pub fn set_oracle(&mut self, oracle_cost: f64) {
        self.oracle_cost_eur = Some(oracle_cost);
        self.cost_error_pct = Some(cost_error_pct(self.cost_eur, oracle_cost));
    }
}

/// Mean and (population) standard deviation.
pub fn mean_std(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n;
    (m, var.sqrt())
}

pub fn median(v: &[f64]) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

/// Per-day and aggregate deployment metrics for one policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub label: String,
    pub algorithm: Option<String>,
    pub mode: String,
    /// Fingerprint of the evaluation scenario.
    pub scenario: String,
    pub days: Vec<DayMetrics>,
    pub step_solve_time_mean_s: f64,
    pub step_solve_time_std_s: f64,
    pub step_solve_time_median_s: f64,
    pub day_solve_time_mean_s: f64,
    pub day_solve_time_std_s: f64,
    /// How the reference cost was obtained (grid resolution of the oracle).
    pub oracle_note: Option<String>,
}

impl MetricsReport {
    pub fn new(
        label: &str,
        algorithm: Option<String>,
        mode: &str,
        scenario: String,
        days: Vec<DayMetrics>,
        step_times: &[f64],
        oracle_note: Option<String>,
    ) -> Self {
        let (sm, ss) = mean_std(step_times);
        let day_times: Vec<f64> = days.iter().map(|d| d.solve_time_s).collect();
        let (dm, ds) = mean_std(&day_times);
        Self {
            label: label.into(),
            algorithm,
            mode: mode.into(),
            scenario,
            days,
            step_solve_time_mean_s: sm,
            step_solve_time_std_s: ss,
            step_solve_time_median_s: median(step_times),
            day_solve_time_mean_s: dm,
            day_solve_time_std_s: ds,
            oracle_note,
        }
    }

    pub fn mean_cost(&self) -> f64 {
        mean_std(&self.days.iter().map(|d| d.cost_eur).collect::<Vec<_>>()).0
    }

    /// Cost plus penalty magnitude, averaged over days.
    pub fn mean_cost_with_penalty(&self) -> f64 {
        mean_std(&self.days.iter().map(|d| d.cost_eur + d.penalty_eur).collect::<Vec<_>>()).0
    }

    pub fn total_violations(&self) -> usize {
        self.days.iter().map(|d| d.voltage_violations).sum()
    }

    pub fn violations_mean_std(&self) -> (f64, f64) {
        mean_std(&self.days.iter().map(|d| d.voltage_violations as f64).collect::<Vec<_>>())
    }

    pub fn total_clip_events(&self) -> usize {
        self.days.iter().map(|d| d.soc_clip_events).sum()
    }

    /// Mean and std of the per-day cost error; `None` without oracle costs.
    pub fn cost_error_mean_std(&self) -> Option<(f64, f64)> {
        let e: Option<Vec<f64>> = self.days.iter().map(|d| d.cost_error_pct).collect();
        e.filter(|v| !v.is_empty()).map(|v| mean_std(&v))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

/// One line of the comparison table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub label: String,
    pub mode: String,
    pub mean_daily_cost_eur: f64,
    pub cost_error_mean_pct: Option<f64>,
    pub cost_error_std_pct: Option<f64>,
    pub violations_mean: f64,
    pub violations_std: f64,
    pub violations_total: usize,
    pub soc_clip_events: usize,
    pub step_time_mean_s: f64,
    pub step_time_std_s: f64,
    pub day_time_mean_s: f64,
    pub day_time_std_s: f64,
}

/// A report plus the optional traces and curves that go with it.
#[derive(Debug, Clone, Default)]
pub struct ReportInput {
    pub report: Option<MetricsReport>,
    pub trace: Vec<StepTrace>,
    pub curves: Vec<EpisodeRecord>,
}

impl From<MetricsReport> for ReportInput {
    fn from(r: MetricsReport) -> Self {
        Self { report: Some(r), ..Self::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub scenario: String,
    pub rows: Vec<TableRow>,
}

impl Comparison {
    pub fn to_markdown(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "| method | mode | daily cost (EUR) | cost error (%) | voltage violations | SOC clips | step time (s) | day time (s) |"
        );
        let _ = writeln!(s, "|---|---|---|---|---|---|---|---|");
        for r in &self.rows {
            let err = match (r.cost_error_mean_pct, r.cost_error_std_pct) {
                (Some(m), Some(sd)) => format!("{m:.2} ± {sd:.2}"),
                _ => "-".into(),
            };
            let _ = writeln!(
                s,
                "| {} | {} | {:.2} | {} | {:.1} ± {:.1} | {} | {:.4} ± {:.4} | {:.2} ± {:.2} |",
                r.label,
                r.mode,
                r.mean_daily_cost_eur,
                err,
                r.violations_mean,
                r.violations_std,
                r.soc_clip_events,
                r.step_time_mean_s,
                r.step_time_std_s,
                r.day_time_mean_s,
                r.day_time_std_s
            );
        }
        s
    }
}

/// Table-II-shaped comparison of deployment reports. All reports must come
/// from the same scenario.
pub fn compare_report(reports: &[MetricsReport]) -> Result<Comparison> {
    let first = reports.first().ok_or_else(|| Error::Report("no reports to compare".into()))?;
    if let Some(r) = reports.iter().find(|r| r.scenario != first.scenario) {
        return Err(Error::Report(format!(
            "report `{}` comes from a different scenario than `{}`",
            r.label, first.label
        )));
    }
    let rows = reports
        .iter()
        .map(|r| {
            let (vm, vs) = r.violations_mean_std();
            let err = r.cost_error_mean_std();
            TableRow {
                label: r.label.clone(),
                mode: r.mode.clone(),
                mean_daily_cost_eur: r.mean_cost(),
                cost_error_mean_pct: err.map(|e| e.0),
                cost_error_std_pct: err.map(|e| e.1),
                violations_mean: vm,
                violations_std: vs,
                violations_total: r.total_violations(),
                soc_clip_events: r.total_clip_events(),
                step_time_mean_s: r.step_solve_time_mean_s,
                step_time_std_s: r.step_solve_time_std_s,
                day_time_mean_s: r.day_solve_time_mean_s,
                day_time_std_s: r.day_solve_time_std_s,
            }
        })
        .collect();
    Ok(Comparison { scenario: first.scenario.clone(), rows })
}

pub fn write_trace_csv(path: impl AsRef<Path>, trace: &[StepTrace]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let (n_ess, n_nodes) = trace.first().map_or((0, 0), |s| (s.action_kw.len(), s.voltages.len()));
    let mut header = vec!["day".to_string(), "t".into()];
    header.extend((0..n_ess).map(|i| format!("action_kw_{i}")));
    header.extend((0..n_ess).map(|i| format!("soc_{i}")));
    header.extend((0..n_nodes).map(|m| format!("v_pu_{m}")));
    header.extend(
        ["cost_eur", "penalty", "voltage_violations", "soc_clip_events", "solve_time_s", "status", "retried", "fallback"]
            .map(String::from),
    );
    w.write_record(&header)?;
    for s in trace {
        let mut rec = vec![s.day.to_string(), s.t.to_string()];
        rec.extend(s.action_kw.iter().map(f64::to_string));
        rec.extend(s.soc.iter().map(f64::to_string));
        rec.extend(s.voltages.iter().map(f64::to_string));
        rec.extend([
            s.cost_eur.to_string(),
            s.penalty.to_string(),
            s.voltage_violations.to_string(),
            s.soc_clip_events.to_string(),
            s.solve_time_s.to_string(),
            s.status.clone().unwrap_or_default(),
            s.retried.to_string(),
            s.fallback.to_string(),
        ]);
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `table.md`, `table.csv` and, where inputs carry them,
/// `reward_curves.csv`, `voltage_traces.csv` and `soc_traces.csv`.
pub fn write_comparison(dir: &Path, inputs: &[ReportInput]) -> Result<Comparison> {
    let reports: Vec<MetricsReport> = inputs.iter().filter_map(|i| i.report.clone()).collect();
    let cmp = compare_report(&reports)?;
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("table.md"), cmp.to_markdown())?;
    let mut w = csv::Writer::from_path(dir.join("table.csv"))?;
    for r in &cmp.rows {
        w.serialize(r)?;
    }
    w.flush()?;

    let label = |i: &ReportInput| i.report.as_ref().map_or(String::new(), |r| r.label.clone());
    if inputs.iter().any(|i| !i.curves.is_empty()) {
        let mut w = csv::Writer::from_path(dir.join("reward_curves.csv"))?;
        w.write_record(["label", "episode", "total_reward", "cost_term", "penalty_term", "violations"])?;
        for i in inputs {
            for c in &i.curves {
                w.write_record([
                    label(i),
                    c.episode.to_string(),
                    c.total_reward.to_string(),
                    c.cost_term.to_string(),
                    c.penalty_term.to_string(),
                    c.violations.to_string(),
                ])?;
            }
        }
        w.flush()?;
    }
    if inputs.iter().any(|i| !i.trace.is_empty()) {
        let mut wv = csv::Writer::from_path(dir.join("voltage_traces.csv"))?;
        let mut ws = csv::Writer::from_path(dir.join("soc_traces.csv"))?;
        wv.write_record(["label", "day", "t", "node", "v_pu"])?;
        ws.write_record(["label", "day", "t", "ess", "soc", "action_kw"])?;
        for i in inputs {
            let l = label(i);
            for s in &i.trace {
                for (m, v) in s.voltages.iter().enumerate() {
                    wv.write_record([l.clone(), s.day.to_string(), s.t.to_string(), m.to_string(), v.to_string()])?;
                }
                for (k, (soc, a)) in s.soc.iter().zip(&s.action_kw).enumerate() {
                    ws.write_record([
                        l.clone(),
                        s.day.to_string(),
                        s.t.to_string(),
                        k.to_string(),
                        soc.to_string(),
                        a.to_string(),
                    ])?;
                }
            }
        }
        wv.flush()?;
        ws.flush()?;
    }
    Ok(cmp)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn report(label: &str, scenario: &str, costs: &[f64], oracle: Option<&[f64]>) -> MetricsReport {
        let days = costs
            .iter()
            .enumerate()
            .map(|(d, &c)| {
                let mut m = DayMetrics {
                    day: d,
                    cost_eur: c,
                    penalty_eur: 0.0,
                    voltage_violations: d,
                    soc_clip_events: 0,
                    solve_time_s: 1.0,
                    oracle_cost_eur: None,
                    cost_error_pct: None,
                };
                if let Some(o) = oracle {
                    m.set_oracle(o[d]);
                }
                m
            })
            .collect();
        MetricsReport::new(label, None, "mip", scenario.into(), days, &[0.5, 0.5], None)
    }

    #[test]
    fn single_report_gives_one_row() {
        let c = compare_report(&[report("a", "s", &[1.0, 2.0], None)]).unwrap();
        assert_eq!(c.rows.len(), 1);
        assert_eq!(c.rows[0].violations_total, 1);
        assert!(c.to_markdown().contains("| a |"));
    }

    #[test]
    fn self_comparison_has_zero_error() {
        let o = [100.0, 120.0];
        let c = compare_report(&[report("oracle", "s", &o, Some(&o))]).unwrap();
        assert_eq!(c.rows[0].cost_error_mean_pct, Some(0.0));
    }

    #[test]
    fn cost_error_by_hand() {
        // (110 - 100)/100 = 10 %, (90 - 120)/120 = -25 %
        let c = compare_report(&[report("x", "s", &[110.0, 90.0], Some(&[100.0, 120.0]))]).unwrap();
        assert!((c.rows[0].cost_error_mean_pct.unwrap() - (10.0 - 25.0) / 2.0).abs() < 1e-12);
        assert!((c.rows[0].cost_error_std_pct.unwrap() - 17.5).abs() < 1e-12);
    }

    #[test]
    fn mismatched_scenarios_are_rejected() {
        let r = compare_report(&[report("a", "s1", &[1.0], None), report("b", "s2", &[1.0], None)]);
        assert!(matches!(r, Err(Error::Report(_))));
    }
}
