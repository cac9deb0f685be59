use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A battery connected at one feeder node. Positive power charges.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EssSpec {
    pub node: usize,
    pub e_max_kwh: f64,
    pub eta: f64,
    pub p_min_kw: f64,
    pub p_max_kw: f64,
    pub soc_min: f64,
    pub soc_max: f64,
    pub soc_init: f64,
}

/// Outcome of one state-of-charge update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SocUpdate {
    pub soc: f64,
    /// The unclipped update left `[soc_min, soc_max]` by more than `1e-9`.
    pub clipped: bool,
    /// Power actually exchanged once the clip is applied.
    pub applied_kw: f64,
}

/// Clip tolerance on state of charge, absorbs LP round-off.
pub const SOC_CLIP_TOL: f64 = 1e-9;

impl EssSpec {
    pub fn validate(&self) -> Result<()> {
        let ok = self.e_max_kwh > 0.0
            && self.eta > 0.0
            && self.eta <= 1.0
            && self.p_min_kw < 0.0
            && 0.0 < self.p_max_kw
            && self.soc_min <= self.soc_init
            && self.soc_init <= self.soc_max
            && 0.0 <= self.soc_min
            && self.soc_max <= 1.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid storage spec at node {}", self.node)))
        }
    }

    /// Change in state of charge per kW held for `dt_h` hours.
    pub fn soc_per_kw(&self, dt_h: f64) -> f64 {
        self.eta * dt_h / self.e_max_kwh
    }

    /// Dispatch range that keeps the next state of charge within limits.
    pub fn feasible_power(&self, soc: f64, dt_h: f64) -> (f64, f64) {
        let k = self.soc_per_kw(dt_h);
        let lo = self.p_min_kw.max((self.soc_min - soc) / k);
        let hi = self.p_max_kw.min((self.soc_max - soc) / k);
        (lo.min(hi), hi)
    }

    pub fn clip_power(&self, p_kw: f64) -> f64 {
        p_kw.clamp(self.p_min_kw, self.p_max_kw)
    }
}

/// `soc + eta * p * dt / E`, clipped into `[soc_min, soc_max]`.
pub fn soc_update(spec: &EssSpec, soc: f64, p_kw: f64, dt_h: f64) -> SocUpdate {
    let k = spec.soc_per_kw(dt_h);
    let raw = soc + k * p_kw;
    let next = raw.clamp(spec.soc_min, spec.soc_max);
    let clipped = raw > spec.soc_max + SOC_CLIP_TOL || raw < spec.soc_min - SOC_CLIP_TOL;
    let applied_kw = if next == raw { p_kw } else { (next - soc) / k };
    SocUpdate {
        soc: next,
        clipped,
        applied_kw,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec() -> EssSpec {
        EssSpec {
            node: 1,
            e_max_kwh: 10.0,
            eta: 1.0,
            p_min_kw: -5.0,
            p_max_kw: 5.0,
            soc_min: 0.0,
            soc_max: 1.0,
            soc_init: 0.5,
        }
    }

    #[test]
    fn charges_by_energy_over_capacity() {
        let u = soc_update(&spec(), 0.5, 2.0, 0.25);
        assert!((u.soc - 0.55).abs() < 1e-15);
        assert!(!u.clipped);
    }

    #[test]
    fn zero_power_is_identity() {
        let u = soc_update(&spec(), 0.37, 0.0, 0.25);
        assert_eq!(u.soc, 0.37);
    }

    #[test]
    fn clamps_and_flags() {
        let u = soc_update(&spec(), 0.99, 5.0, 0.25);
        assert_eq!(u.soc, 1.0);
        assert!(u.clipped);
        assert!((u.applied_kw - 0.4).abs() < 1e-12);
    }

    #[test]
    fn feasible_range_collapses_at_full() {
        let (lo, hi) = spec().feasible_power(1.0, 0.25);
        assert_eq!(hi, 0.0);
        assert_eq!(lo, -5.0);
    }

    #[test]
    fn validation() {
        let mut s = spec();
        assert!(s.validate().is_ok());
        s.soc_init = 1.2;
        assert!(s.validate().is_err());
    }
}
