//! Scenario description shared by every other module.
//!
//! All per-(u, v, t) tables are stored densely in row-major order
//! `(u * V + v) * T + t`, per-(u, v) tables as `u * V + v`, and per-(δ, t)
//! tables as `k * T + t` where `k` indexes [`NetworkConfig::charge_rates`].
//! Time steps are 0-based internally (`t ∈ 0..T`).

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const CONFIG_SCHEMA: &str = "fleetlab-config-v1";

/// Seconds of charging needed per 1% of battery, banded by state of charge.
///
/// `band_edges` holds `n + 1` increasing percentages starting at 0 and ending
/// at 100; `seconds_per_percent[i]` applies on `[band_edges[i], band_edges[i+1])`.
/// The table is measured at `reference_rate` battery units per step; a charger
/// with rate `δ` runs the same curve `δ / reference_rate` times as fast.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChargingCurve {
    pub band_edges: Vec<f64>,
    pub seconds_per_percent: Vec<f64>,
    pub reference_rate: u32,
}

impl ChargingCurve {
    /// Fast-charger curve for the robo-taxi pack: 0-10%, 10-40%, 40-60%,
    /// 60-80%, 80-90%, 90-95%, 95-100%.
    pub fn dc_fast(reference_rate: u32) -> Self {
        Self {
            band_edges: vec![0.0, 10.0, 40.0, 60.0, 80.0, 90.0, 95.0, 100.0],
            seconds_per_percent: vec![47.0, 33.0, 40.0, 60.0, 107.0, 173.0, 533.0],
            reference_rate,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.seconds_per_percent.len();
        if n == 0 || self.band_edges.len() != n + 1 {
            return Err(Error::InvalidConfig(
                "charging curve needs n bands and n+1 edges".into(),
            ));
        }
        if self.band_edges[0] != 0.0 || self.band_edges[n] != 100.0 {
            return Err(Error::InvalidConfig(
                "charging curve edges must span 0..100 percent".into(),
            ));
        }
        if self.band_edges.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidConfig(
                "charging curve edges must be strictly increasing".into(),
            ));
        }
        if self
            .seconds_per_percent
            .iter()
            .any(|s| !s.is_finite() || *s <= 0.0)
        {
            return Err(Error::InvalidConfig(
                "charging curve seconds must be positive".into(),
            ));
        }
        if self.reference_rate == 0 {
            return Err(Error::InvalidConfig(
                "charging curve reference rate must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Seconds at the reference rate to go from `from_pct` to `to_pct`.
    pub fn seconds_between(&self, from_pct: f64, to_pct: f64) -> f64 {
        if to_pct <= from_pct {
            return 0.0;
        }
        self.band_edges
            .windows(2)
            .zip(&self.seconds_per_percent)
            .map(|(edge, sec)| {
                let lo = edge[0].max(from_pct);
                let hi = edge[1].min(to_pct);
                if hi > lo {
                    (hi - lo) * sec
                } else {
                    0.0
                }
            })
            .sum()
    }

    /// State of charge reached after charging `seconds` (at the reference
    /// rate) starting from `start_pct`; saturates at 100.
    pub fn percent_after(&self, start_pct: f64, seconds: f64) -> f64 {
        let mut pct = start_pct.clamp(0.0, 100.0);
        let mut left = seconds.max(0.0);
        for (edge, sec) in self.band_edges.windows(2).zip(&self.seconds_per_percent) {
            if pct >= edge[1] {
                continue;
            }
            let span = edge[1] - pct;
            let need = span * sec;
            if left < need {
                return pct + left / sec;
            }
            left -= need;
            pct = edge[1];
        }
        100.0
    }

    /// Average percent per second over `[lo, hi)`.
    pub fn mean_rate_pct_per_sec(&self, lo: f64, hi: f64) -> f64 {
        (hi - lo) / self.seconds_between(lo, hi)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dimensions {
    pub regions: usize,
    pub horizon_steps: usize,
    pub charge_rates: usize,
}

/// Immutable scenario: network, demand, rewards, chargers and fleet.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub schema: String,
    pub dims: Dimensions,
    pub fleet_size: u32,
    pub battery_capacity: u32,
    pub epoch_minutes: f64,
    /// Battery units replenished per step, one entry per charger type.
    pub charge_rates: Vec<u32>,
    pub charge_period: u32,
    /// `(v, k)` → number of chargers, stored as `v * |Δ| + k`.
    pub charger_counts: Vec<u32>,
    pub pickup_patience: u32,
    pub connection_patience: u32,
    pub trip_duration: Vec<u32>,
    pub battery_cost: Vec<u32>,
    pub arrival_rate: Vec<f64>,
    pub trip_reward: Vec<f64>,
    pub reposition_reward: Vec<f64>,
    pub charge_reward: Vec<f64>,
    #[serde(default)]
    pub charging_curve: Option<ChargingCurve>,
}

impl NetworkConfig {
    /// Blank config with zero demand, unit durations scaled to respect the
    /// patience constraints, and no chargers. Used as a builder base.
    pub fn blank(
        regions: usize,
        horizon_steps: usize,
        fleet_size: u32,
        battery_capacity: u32,
        charge_rates: Vec<u32>,
    ) -> Self {
        let v2 = regions * regions;
        let k = charge_rates.len();
        Self {
            schema: CONFIG_SCHEMA.to_string(),
            dims: Dimensions {
                regions,
                horizon_steps,
                charge_rates: k,
            },
            fleet_size,
            battery_capacity,
            epoch_minutes: 5.0,
            charge_rates,
            charge_period: 1,
            charger_counts: vec![0; regions * k],
            pickup_patience: 0,
            connection_patience: 0,
            trip_duration: vec![1; v2 * horizon_steps],
            battery_cost: vec![0; v2],
            arrival_rate: vec![0.0; v2 * horizon_steps],
            trip_reward: vec![0.0; v2 * horizon_steps],
            reposition_reward: vec![0.0; v2 * horizon_steps],
            charge_reward: vec![0.0; k * horizon_steps],
            charging_curve: None,
        }
    }

    #[inline]
    pub fn num_regions(&self) -> usize {
        self.dims.regions
    }

    #[inline]
    pub fn horizon(&self) -> usize {
        self.dims.horizon_steps
    }

    #[inline]
    pub fn num_rates(&self) -> usize {
        self.charge_rates.len()
    }

    #[inline]
    pub fn uvt(&self, u: usize, v: usize, t: usize) -> usize {
        (u * self.dims.regions + v) * self.dims.horizon_steps + t
    }

    #[inline]
    pub fn uv(&self, u: usize, v: usize) -> usize {
        u * self.dims.regions + v
    }

    #[inline]
    pub fn duration(&self, u: usize, v: usize, t: usize) -> u32 {
        self.trip_duration[self.uvt(u, v, t)]
    }

    #[inline]
    pub fn bcost(&self, u: usize, v: usize) -> u32 {
        self.battery_cost[self.uv(u, v)]
    }

    #[inline]
    pub fn lambda(&self, u: usize, v: usize, t: usize) -> f64 {
        self.arrival_rate[self.uvt(u, v, t)]
    }

    #[inline]
    pub fn fulfill_reward(&self, u: usize, v: usize, t: usize) -> f64 {
        self.trip_reward[self.uvt(u, v, t)]
    }

    #[inline]
    pub fn reposition_cost(&self, u: usize, v: usize, t: usize) -> f64 {
        self.reposition_reward[self.uvt(u, v, t)]
    }

    #[inline]
    pub fn charge_cost(&self, k: usize, t: usize) -> f64 {
        self.charge_reward[k * self.dims.horizon_steps + t]
    }

    #[inline]
    pub fn chargers(&self, v: usize, k: usize) -> u32 {
        self.charger_counts[v * self.num_rates() + k]
    }

    /// Queue cap per trip status, `N (L_c + 1)`.
    pub fn trip_cap(&self) -> u32 {
        self.fleet_size * (self.connection_patience + 1)
    }

    /// Longest off-diagonal trip duration.
    pub fn max_duration(&self) -> u32 {
        let v = self.num_regions();
        let mut best = 0;
        for a in 0..v {
            for b in 0..v {
                if a != b {
                    for t in 0..self.horizon() {
                        best = best.max(self.duration(a, b, t));
                    }
                }
            }
        }
        best
    }

    /// Largest remaining-time value any vehicle status can take.
    pub fn max_eta(&self) -> u32 {
        let trip = (self.pickup_patience + self.max_duration()).saturating_sub(1);
        trip.max(self.charge_period - 1)
    }

    pub fn is_nonlinear(&self) -> bool {
        self.charging_curve.is_some()
    }

    /// Battery after one full charging period at rate index `k`.
    pub fn charged_battery(&self, battery: u32, k: usize) -> u32 {
        let cap = self.battery_capacity;
        match &self.charging_curve {
            None => (battery + self.charge_rates[k] * self.charge_period).min(cap),
            Some(curve) => {
                let secs = f64::from(self.charge_period) * self.epoch_minutes * 60.0;
                let scaled = secs * f64::from(self.charge_rates[k]) / f64::from(curve.reference_rate);
                let start = f64::from(battery) / f64::from(cap) * 100.0;
                let pct = curve.percent_after(start, scaled);
                let units = (pct / 100.0 * f64::from(cap) + 1e-9).floor() as u32;
                units.clamp(battery, cap)
            }
        }
    }

    /// Copy with the nonlinear curve replaced by a linear per-step rate equal
    /// to the curve's mean rate over the 10-40% band.
    pub fn linearized(&self) -> NetworkConfig {
        let mut out = self.clone();
        if let Some(curve) = &self.charging_curve {
            let pct_per_sec = curve.mean_rate_pct_per_sec(10.0, 40.0);
            let step_secs = self.epoch_minutes * 60.0;
            for (k, rate) in out.charge_rates.iter_mut().enumerate() {
                let scale = f64::from(self.charge_rates[k]) / f64::from(curve.reference_rate);
                let units = pct_per_sec * scale * step_secs / 100.0 * f64::from(self.battery_capacity);
                *rate = units.floor().max(1.0) as u32;
            }
            out.charging_curve = None;
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.dims.regions;
        let t = self.dims.horizon_steps;
        let k = self.charge_rates.len();
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.schema != CONFIG_SCHEMA {
            return bad(format!("unknown schema `{}`", self.schema));
        }
        if v == 0 || t == 0 || self.fleet_size == 0 || self.battery_capacity == 0 {
            return bad("regions, horizon, fleet and battery must be positive".into());
        }
        if self.dims.charge_rates != k {
            return bad("dims.charge_rates disagrees with charge_rates".into());
        }
        let lens = [
            ("charger_counts", self.charger_counts.len(), v * k),
            ("trip_duration", self.trip_duration.len(), v * v * t),
            ("battery_cost", self.battery_cost.len(), v * v),
            ("arrival_rate", self.arrival_rate.len(), v * v * t),
            ("trip_reward", self.trip_reward.len(), v * v * t),
            ("reposition_reward", self.reposition_reward.len(), v * v * t),
            ("charge_reward", self.charge_reward.len(), k * t),
        ];
        for (name, got, want) in lens {
            if got != want {
                return bad(format!("{name} has {got} entries, expected {want}"));
            }
        }
        if self.charge_period == 0 {
            return bad("charge_period must be at least 1".into());
        }
        if self.charge_period <= self.pickup_patience {
            return bad("charge_period must exceed pickup_patience".into());
        }
        if self.charge_rates.iter().any(|&r| r == 0) {
            return bad("charge rates must be positive".into());
        }
        if !(self.epoch_minutes > 0.0) {
            return bad("epoch_minutes must be positive".into());
        }
        for a in 0..v {
            if self.bcost(a, a) != 0 {
                return bad(format!("battery_cost({a},{a}) must be 0"));
            }
            for b in 0..v {
                if self.bcost(a, b) > self.battery_capacity {
                    return bad(format!("battery_cost({a},{b}) exceeds capacity"));
                }
                for s in 0..t {
                    let i = self.uvt(a, b, s);
                    if a != b && self.trip_duration[i] <= self.pickup_patience {
                        return bad(format!(
                            "trip_duration({a},{b},{s}) must exceed pickup_patience"
                        ));
                    }
                    let lam = self.arrival_rate[i];
                    if !lam.is_finite() || lam < 0.0 {
                        return bad(format!("arrival_rate({a},{b},{s}) must be >= 0"));
                    }
                    if a == b && lam != 0.0 {
                        return bad(format!("intra-region arrival_rate({a},{a},{s}) must be 0"));
                    }
                    let rf = self.trip_reward[i];
                    if !rf.is_finite() || rf < 0.0 {
                        return bad(format!("trip_reward({a},{b},{s}) must be >= 0"));
                    }
                    let re = self.reposition_reward[i];
                    if !re.is_finite() || re > 0.0 {
                        return bad(format!("reposition_reward({a},{b},{s}) must be <= 0"));
                    }
                }
            }
        }
        if self.charge_reward.iter().any(|r| !r.is_finite() || *r > 0.0) {
            return bad("charge_reward entries must be <= 0".into());
        }
        if let Some(curve) = &self.charging_curve {
            curve.validate()?;
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: NetworkConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    /// Hex SHA-256 of the compact JSON encoding; stamped on every report.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        let digest = Sha256::digest(&bytes);
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> NetworkConfig {
        let mut c = NetworkConfig::blank(2, 3, 2, 10, vec![2]);
        c.charge_period = 2;
        c.trip_duration = vec![2; 12];
        c.battery_cost = vec![0, 3, 3, 0];
        c
    }

    #[test]
    fn curve_band_durations() {
        let curve = ChargingCurve::dc_fast(10);
        assert_eq!(curve.seconds_between(0.0, 10.0), 470.0);
        assert_eq!(curve.seconds_between(10.0, 40.0), 990.0);
        assert_eq!(curve.seconds_between(95.0, 100.0), 2665.0);
        let back = curve.percent_after(0.0, 470.0);
        assert!((back - 10.0).abs() < 1e-12);
        assert_eq!(curve.percent_after(99.0, 1e9), 100.0);
    }

    #[test]
    fn validation_catches_patience_violation() {
        let mut c = tiny();
        c.validate().unwrap();
        c.pickup_patience = 2;
        assert!(c.validate().is_err());
        let mut c = tiny();
        c.charge_period = 0;
        assert!(c.validate().is_err());
        let mut c = tiny();
        c.reposition_reward[1] = 0.5;
        assert!(c.validate().is_err());
    }

    #[test]
    fn json_round_trip_is_exact() {
        let mut c = tiny();
        c.arrival_rate[3] = 0.1 + 0.2;
        c.trip_reward[3] = 1.0 / 3.0;
        let back = NetworkConfig::from_json(&c.to_json().unwrap()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.hash(), c.hash());
    }

    #[test]
    fn linear_charging_clamps_at_capacity() {
        let c = tiny();
        assert_eq!(c.charged_battery(3, 0), 7);
        assert_eq!(c.charged_battery(9, 0), 10);
    }

    #[test]
    fn nonlinear_charging_slows_near_full() {
        let mut c = tiny();
        c.battery_capacity = 100;
        c.battery_cost = vec![0, 3, 3, 0];
        c.charging_curve = Some(ChargingCurve::dc_fast(2));
        // 600 s: 470 s reaches 10%, then 130 s / 33 s per % = 13.94%.
        assert_eq!(c.charged_battery(0, 0), 13);
        let low = c.charged_battery(0, 0);
        let high = c.charged_battery(90, 0) - 90;
        assert!(high < low);
    }
}
