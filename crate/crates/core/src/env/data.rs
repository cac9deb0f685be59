use std::io::{Read, Write};
use std::path::Path;

use chrono::{Duration, NaiveDate, NaiveDateTime};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const TS_FORMAT: &str = "%Y-%m-%dT%H:%M:%S";

/// Exogenous price, load and PV series on a fixed cadence.
///
/// `load_kw[t][m]` and `pv_kw[t][m]` are indexed by step and network node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSeriesDataset {
    pub timestep_hours: f64,
    pub steps_per_day: usize,
    pub start: NaiveDateTime,
    pub node_count: usize,
    pub price_eur_per_kwh: Vec<f64>,
    pub load_kw: Vec<Vec<f64>>,
    pub pv_kw: Vec<Vec<f64>>,
}

impl TimeSeriesDataset {
    pub fn validate(&self) -> Result<()> {
        let n = self.price_eur_per_kwh.len();
        if self.load_kw.len() != n || self.pv_kw.len() != n {
            return Err(Error::Dataset("series lengths differ".into()));
        }
        if self.steps_per_day == 0 || n % self.steps_per_day != 0 || n == 0 {
            return Err(Error::Dataset(format!(
                "{n} records do not form whole days of {} steps",
                self.steps_per_day
            )));
        }
        for (t, (l, p)) in self.load_kw.iter().zip(&self.pv_kw).enumerate() {
            if l.len() != self.node_count || p.len() != self.node_count {
                return Err(Error::Dataset(format!("record {t} has wrong node count")));
            }
            if l.iter().chain(p).any(|v| !(v.is_finite() && *v >= 0.0)) {
                return Err(Error::Dataset(format!("record {t} has negative or non-finite power")));
            }
            if !self.price_eur_per_kwh[t].is_finite() {
                return Err(Error::Dataset(format!("record {t} has non-finite price")));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.price_eur_per_kwh.len()
    }

    pub fn is_empty(&self) -> bool {
        self.price_eur_per_kwh.is_empty()
    }

    pub fn n_days(&self) -> usize {
        self.len() / self.steps_per_day
    }

    /// Index of step `t` of day `day` in the flat series.
    pub fn index(&self, day: usize, t: usize) -> usize {
        day * self.steps_per_day + t
    }

    pub fn max_price(&self) -> f64 {
        self.price_eur_per_kwh.iter().fold(0.0f64, |m, &p| m.max(p.abs()))
    }

    /// Largest nodal net demand magnitude, used for feature scaling.
    pub fn peak_nodal_kw(&self) -> f64 {
        self.load_kw
            .iter()
            .zip(&self.pv_kw)
            .flat_map(|(l, p)| l.iter().zip(p).map(|(a, b)| (a - b).abs()))
            .fold(0.0f64, f64::max)
    }

    /// Copy holding only the given days, in the given order.
    pub fn select_days(&self, days: &[usize]) -> Result<Self> {
        let mut out = Self {
            price_eur_per_kwh: Vec::new(),
            load_kw: Vec::new(),
            pv_kw: Vec::new(),
            ..self.clone()
        };
        for &d in days {
            if d >= self.n_days() {
                return Err(Error::Dataset(format!("day {d} out of range")));
            }
            let r = self.index(d, 0)..self.index(d + 1, 0);
            out.price_eur_per_kwh.extend_from_slice(&self.price_eur_per_kwh[r.clone()]);
            out.load_kw.extend_from_slice(&self.load_kw[r.clone()]);
            out.pv_kw.extend_from_slice(&self.pv_kw[r]);
        }
        Ok(out)
    }

    /// Column layout: `timestamp, price_eur_per_kwh, load_kw_<node>..., pv_kw_<node>...`
    /// with one load and one PV column per node.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        let mut header = vec!["timestamp".to_string(), "price_eur_per_kwh".to_string()];
        header.extend((0..self.node_count).map(|m| format!("load_kw_{m}")));
        header.extend((0..self.node_count).map(|m| format!("pv_kw_{m}")));
        wr.write_record(&header)?;
        let step = Duration::seconds((self.timestep_hours * 3600.0).round() as i64);
        for t in 0..self.len() {
            let ts = self.start + step * t as i32;
            let mut rec = vec![ts.format(TS_FORMAT).to_string(), format!("{}", self.price_eur_per_kwh[t])];
            rec.extend(self.load_kw[t].iter().map(|v| format!("{v}")));
            rec.extend(self.pv_kw[t].iter().map(|v| format!("{v}")));
            wr.write_record(&rec)?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }

    /// Reads a 15-minute CSV. Nodes without a column get zero load/PV.
    /// Cadence must be exactly 15 minutes and the series must cover whole days.
    pub fn read_csv<R: Read>(r: R, node_count: usize) -> Result<Self> {
        let mut rd = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r);
        let headers = rd.headers()?.clone();
        let col = |name: &str| headers.iter().position(|h| h == name);
        let ts_col = col("timestamp").ok_or_else(|| Error::Dataset("missing timestamp column".into()))?;
        let price_col =
            col("price_eur_per_kwh").ok_or_else(|| Error::Dataset("missing price_eur_per_kwh column".into()))?;
        let mut load_cols = Vec::new();
        let mut pv_cols = Vec::new();
        for (i, h) in headers.iter().enumerate() {
            let parse_node = |rest: &str| -> Result<usize> {
                let m: usize = rest
                    .parse()
                    .map_err(|_| Error::Dataset(format!("bad column name {h}")))?;
                if m >= node_count {
                    return Err(Error::Dataset(format!("column {h} refers to unknown node")));
                }
                Ok(m)
            };
            if let Some(rest) = h.strip_prefix("load_kw_") {
                load_cols.push((i, parse_node(rest)?));
            } else if let Some(rest) = h.strip_prefix("pv_kw_") {
                pv_cols.push((i, parse_node(rest)?));
            }
        }
        let cadence = Duration::minutes(15);
        let mut ds = TimeSeriesDataset {
            timestep_hours: 0.25,
            steps_per_day: 96,
            start: NaiveDateTime::default(),
            node_count,
            price_eur_per_kwh: Vec::new(),
            load_kw: Vec::new(),
            pv_kw: Vec::new(),
        };
        let mut prev: Option<NaiveDateTime> = None;
        for (row, rec) in rd.records().enumerate() {
            let rec = rec?;
            let field = |i: usize| rec.get(i).unwrap_or("");
            let ts = NaiveDateTime::parse_from_str(field(ts_col), TS_FORMAT)
                .map_err(|e| Error::Dataset(format!("row {row}: bad timestamp: {e}")))?;
            match prev {
                None => ds.start = ts,
                Some(p) if ts - p != cadence => {
                    return Err(Error::Dataset(format!("row {row}: cadence is not 15 minutes")));
                }
                _ => {}
            }
            prev = Some(ts);
            let num = |i: usize| -> Result<f64> {
                field(i)
                    .parse()
                    .map_err(|_| Error::Dataset(format!("row {row}: bad number in column {i}")))
            };
            ds.price_eur_per_kwh.push(num(price_col)?);
            let mut load = vec![0.0; node_count];
            for &(i, m) in &load_cols {
                load[m] = num(i)?;
            }
            let mut pv = vec![0.0; node_count];
            for &(i, m) in &pv_cols {
                pv[m] = num(i)?;
            }
            ds.load_kw.push(load);
            ds.pv_kw.push(pv);
        }
        ds.validate()?;
        Ok(ds)
    }

    pub fn load_csv(path: impl AsRef<Path>, node_count: usize) -> Result<Self> {
        Self::read_csv(std::fs::File::open(path)?, node_count)
    }
}

/// Parameters of the synthetic price/load/PV generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub seed: u64,
    pub days: usize,
    pub node_count: usize,
    /// Peak demand per node (kW); the slack entry should be zero.
    pub load_peak_kw: Vec<f64>,
    /// Clear-sky PV peak per node (kW).
    pub pv_peak_kw: Vec<f64>,
    /// Days whose evening demand is scaled by `stress_factor`; on the same
    /// days the sky is clear and the PV output around noon is scaled by up to
    /// `stress_pv_factor` around `stress_pv_hour`.
    pub stress_days: Vec<usize>,
    pub stress_factor: f64,
    #[serde(default = "unit_factor")]
    pub stress_pv_factor: f64,
    /// Hour of day at which the PV surge peaks.
    #[serde(default = "noon")]
    pub stress_pv_hour: f64,
    /// Average price level (EUR/kWh) and the heights of the daily features.
    pub price_base: f64,
    pub price_morning_peak: f64,
    pub price_evening_peak: f64,
    pub price_midday_dip: f64,
}

impl SyntheticConfig {
    /// Defaults for the bundled six-node feeder.
    pub fn desk(seed: u64, days: usize) -> Self {
        Self {
            seed,
            days,
            node_count: 6,
            load_peak_kw: vec![0.0, 210.0, 260.0, 300.0, 210.0, 300.0],
            pv_peak_kw: vec![0.0, 0.0, 120.0, 180.0, 80.0, 180.0],
            stress_days: Vec::new(),
            stress_factor: 1.3,
            stress_pv_factor: 1.0,
            stress_pv_hour: 13.0,
            price_base: 0.11,
            price_morning_peak: 0.06,
            price_evening_peak: 0.14,
            price_midday_dip: 0.06,
        }
    }
}

fn unit_factor() -> f64 {
    1.0
}

fn noon() -> f64 {
    13.0
}

fn bump(h: f64, centre: f64, width: f64) -> f64 {
    (-(h - centre).powi(2) / (2.0 * width * width)).exp()
}

/// Deterministic synthetic day-ahead price, residential load and PV profiles
/// with morning and evening price peaks and a midday dip.
pub fn generate_synthetic(cfg: &SyntheticConfig) -> Result<TimeSeriesDataset> {
    if cfg.load_peak_kw.len() != cfg.node_count || cfg.pv_peak_kw.len() != cfg.node_count {
        return Err(Error::Config("peak vectors must have one entry per node".into()));
    }
    if cfg.days == 0 {
        return Err(Error::Config("synthetic dataset needs at least one day".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let steps = 96;
    let dt = 0.25;
    let noise = Normal::new(0.0, 1.0).expect("unit normal");
    let mut ds = TimeSeriesDataset {
        timestep_hours: dt,
        steps_per_day: steps,
        start: NaiveDate::from_ymd_opt(2024, 1, 1)
            .and_then(|d| d.and_hms_opt(0, 0, 0))
            .expect("valid date"),
        node_count: cfg.node_count,
        price_eur_per_kwh: Vec::with_capacity(cfg.days * steps),
        load_kw: Vec::with_capacity(cfg.days * steps),
        pv_kw: Vec::with_capacity(cfg.days * steps),
    };
    for day in 0..cfg.days {
        let level: f64 = rng.random_range(0.85..1.0);
        let sky: f64 = rng.random_range(0.25..1.0);
        let price_shift = 0.01 * noise.sample(&mut rng);
        let stressed = cfg.stress_days.contains(&day);
        let evening_scale = if stressed { cfg.stress_factor } else { 1.0 };
        let surge = stressed && cfg.stress_pv_factor != 1.0;
        let sky = if surge { 1.0 } else { sky };
        let node_level: Vec<f64> = (0..cfg.node_count).map(|_| rng.random_range(0.9..1.1)).collect();
        for t in 0..steps {
            let h = (t as f64 + 0.5) * dt;
            let price = cfg.price_base
                + cfg.price_morning_peak * bump(h, 8.0, 1.5)
                + cfg.price_evening_peak * bump(h, 19.0, 1.8)
                - cfg.price_midday_dip * bump(h, 13.5, 2.5)
                + price_shift
                + 0.004 * noise.sample(&mut rng);
            ds.price_eur_per_kwh.push(price.max(0.005));

            let shape = 0.32 + 0.25 * bump(h, 7.5, 1.2) + 0.12 * bump(h, 13.0, 3.0)
                + 0.62 * evening_scale * bump(h, 19.0, 1.7);
            let solar = if (6.0..20.0).contains(&h) {
                (std::f64::consts::PI * (h - 6.0) / 14.0).sin().powf(1.5)
            } else {
                0.0
            };
            let solar = if surge {
                solar * (1.0 + (cfg.stress_pv_factor - 1.0) * bump(h, cfg.stress_pv_hour, 1.0))
            } else {
                solar
            };
            let mut load = Vec::with_capacity(cfg.node_count);
            let mut pv = Vec::with_capacity(cfg.node_count);
            for m in 0..cfg.node_count {
                let jitter = 1.0 + 0.03 * noise.sample(&mut rng);
                load.push((cfg.load_peak_kw[m] * level * node_level[m] * shape * jitter).max(0.0));
                let cloud = (1.0 + 0.05 * noise.sample(&mut rng)).max(0.0);
                pv.push((cfg.pv_peak_kw[m] * sky * solar * cloud).max(0.0));
            }
            ds.load_kw.push(load);
            ds.pv_kw.push(pv);
        }
    }
    ds.validate()?;
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn synthetic_is_deterministic() {
        let cfg = SyntheticConfig::desk(7, 3);
        let a = generate_synthetic(&cfg).unwrap();
        let b = generate_synthetic(&cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.n_days(), 3);
        let c = generate_synthetic(&SyntheticConfig::desk(8, 3)).unwrap();
        assert_ne!(a.price_eur_per_kwh, c.price_eur_per_kwh);
    }

    #[test]
    fn csv_round_trip() {
        let ds = generate_synthetic(&SyntheticConfig::desk(1, 2)).unwrap();
        let mut buf = Vec::new();
        ds.write_csv(&mut buf).unwrap();
        let back = TimeSeriesDataset::read_csv(buf.as_slice(), 6).unwrap();
        assert_eq!(back, ds);
    }

    #[test]
    fn csv_rejects_bad_cadence() {
        let text = "timestamp,price_eur_per_kwh,load_kw_1\n\
                    2024-01-01T00:00:00,0.1,5\n\
                    2024-01-01T00:30:00,0.1,5\n";
        let err = TimeSeriesDataset::read_csv(text.as_bytes(), 2).unwrap_err();
        assert!(err.to_string().contains("cadence"));
    }

    #[test]
    fn csv_rejects_partial_day() {
        let text = "timestamp,price_eur_per_kwh,load_kw_1\n2024-01-01T00:00:00,0.1,5\n";
        assert!(TimeSeriesDataset::read_csv(text.as_bytes(), 2).is_err());
    }

    #[test]
    fn select_days_bounds() {
        let ds = generate_synthetic(&SyntheticConfig::desk(1, 2)).unwrap();
        assert_eq!(ds.select_days(&[1]).unwrap().n_days(), 1);
        assert!(ds.select_days(&[2]).is_err());
    }
}
