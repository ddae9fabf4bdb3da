use std::fs;
use std::io::Write;

use fleetlab::baselines::PowerOfK;
use fleetlab::eval::{evaluate, fluid_solution};
use fleetlab::ppo::{self, NeuralPolicy};
use fleetlab::{Error, NetworkConfig, Result};

use crate::commands::{load_config, ppo_config};
use crate::{SweepChargersArgs, SweepCommon, SweepHardwareArgs};

/// Charger counts per region and rate type.
#[derive(Debug, Clone, PartialEq)]
pub enum Allocation {
    Uniform(u32),
    Concentrated { region: usize, count: u32 },
    /// One charger per vehicle in every region.
    Abundant,
    Counts(Vec<u32>),
}

impl std::str::FromStr for Allocation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidArgument(format!("bad allocation `{s}`"));
        let num = |x: &str| x.trim().parse::<u32>().map_err(|_| bad());
        let parts: Vec<&str> = s.trim().split(':').collect();
        match parts.as_slice() {
            ["uniform", m] => Ok(Self::Uniform(num(m)?)),
            ["concentrated", r, m] => Ok(Self::Concentrated {
                region: r.trim().parse().map_err(|_| bad())?,
                count: num(m)?,
            }),
            ["abundant"] => Ok(Self::Abundant),
            ["counts", list] => Ok(Self::Counts(list.split('/').map(num).collect::<Result<_>>()?)),
            _ => Err(bad()),
        }
    }
}

impl Allocation {
    /// Replaces the charger counts of every rate type.
    pub fn apply(&self, cfg: &NetworkConfig) -> Result<NetworkConfig> {
        let v = cfg.num_regions();
        let per_region: Vec<u32> = match self {
            Self::Uniform(m) => vec![*m; v],
            Self::Concentrated { region, count } => {
                if *region >= v {
                    return Err(Error::InvalidArgument(format!("region {region} out of range (V = {v})")));
                }
                (0..v).map(|u| if u == *region { *count } else { 0 }).collect()
            }
            Self::Abundant => vec![cfg.fleet_size; v],
            Self::Counts(c) => {
                if c.len() != v {
                    return Err(Error::InvalidArgument(format!("{} counts for {v} regions", c.len())));
                }
                c.clone()
            }
        };
        let mut out = cfg.clone();
        let k = cfg.num_rates();
        out.charger_counts = per_region.iter().flat_map(|&m| std::iter::repeat(m).take(k)).collect();
        out.validate()?;
        Ok(out)
    }
}

/// Charger power and range multiplier relative to the base config.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hardware {
    pub kw: f64,
    pub range_mult: f64,
}

impl std::str::FromStr for Hardware {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidArgument(format!("bad hardware variant `{s}`"));
        let (kw, mult) = s.trim().split_once(':').ok_or_else(bad)?;
        let kw: f64 = kw.trim().parse().map_err(|_| bad())?;
        let range_mult: f64 = mult.trim().parse().map_err(|_| bad())?;
        if !(kw > 0.0 && range_mult > 0.0) {
            return Err(bad());
        }
        Ok(Self { kw, range_mult })
    }
}

impl Hardware {
    /// Scales charge rates by `kw / base_kw` and divides trip battery costs
    /// by the range multiplier.
    pub fn apply(&self, cfg: &NetworkConfig, base_kw: f64) -> Result<NetworkConfig> {
        let mut out = cfg.clone();
        let scale = self.kw / base_kw;
        for r in &mut out.charge_rates {
            *r = ((f64::from(*r) * scale).round() as u32).max(1);
        }
        if let Some(curve) = out.charging_curve.as_mut() {
            curve.reference_rate = ((f64::from(curve.reference_rate) * scale).round() as u32).max(1);
        }
        for c in &mut out.battery_cost {
            *c = (f64::from(*c) / self.range_mult - 1e-9).ceil().max(0.0) as u32;
        }
        out.validate()?;
        Ok(out)
    }
}

struct Row {
    label: String,
    bound: f64,
    indicative: bool,
    ppo: Option<f64>,
    power2: f64,
    hash: String,
}

fn run_one(cfg: &NetworkConfig, common: &SweepCommon, seed: u64) -> Result<(f64, bool, Option<f64>, f64)> {
    let sol = fluid_solution(cfg)?;
    let power2 = evaluate(cfg, &PowerOfK::new(2)?, seed, common.eval_trajectories, common.eval_days)?;
    let ppo = if common.no_train {
        None
    } else {
        let pcfg = ppo_config(&common.training, seed)?;
        let outcome = ppo::train(cfg, &pcfg, None)?;
        let policy = NeuralPolicy::new(outcome.policy);
        Some(evaluate(cfg, &policy, seed, common.eval_trajectories, common.eval_days)?.summary.mean)
    };
    Ok((sol.objective, sol.indicative, ppo, power2.summary.mean))
}

fn ratio(x: f64, bound: f64) -> String {
    if bound.abs() > 1e-12 {
        format!("{:.6}", x / bound)
    } else {
        "n/a".into()
    }
}

fn write_rows(common: &SweepCommon, rows: &[Row]) -> Result<()> {
    let mut out = Vec::new();
    writeln!(out, "variant,bound,bound_indicative,ppo,ppo_ratio,power_of_2,power_of_2_ratio,config_hash")?;
    for r in rows {
        let (ppo, ppo_ratio) = match r.ppo {
            Some(x) => (format!("{x:.6}"), ratio(x, r.bound)),
            None => ("n/a".into(), "n/a".into()),
        };
        writeln!(
            out,
            "{},{:.6},{},{ppo},{ppo_ratio},{:.6},{},{}",
            r.label,
            r.bound,
            r.indicative,
            r.power2,
            ratio(r.power2, r.bound),
            r.hash
        )?;
    }
    match &common.out {
        Some(path) => {
            if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir)?;
            }
            fs::write(path, &out)?;
        }
        None => std::io::stdout().write_all(&out)?,
    }
    Ok(())
}

fn sweep(common: &SweepCommon, seed: u64, variants: Vec<(String, NetworkConfig)>) -> Result<()> {
    let mut rows = Vec::with_capacity(variants.len());
    for (label, cfg) in variants {
        log::info!("sweep variant {label}");
        let (bound, indicative, ppo, power2) = run_one(&cfg, common, seed)?;
        rows.push(Row { label, bound, indicative, ppo, power2, hash: cfg.hash() });
    }
    write_rows(common, &rows)
}

pub fn chargers(a: &SweepChargersArgs, seed: u64) -> Result<()> {
    let base = load_config(&a.common.config)?;
    let variants = a
        .allocations
        .iter()
        .filter(|s| !s.trim().is_empty())
        .map(|s| Ok((s.trim().to_string(), s.parse::<Allocation>()?.apply(&base)?)))
        .collect::<Result<Vec<_>>>()?;
    sweep(&a.common, seed, variants)
}

pub fn hardware(a: &SweepHardwareArgs, seed: u64) -> Result<()> {
    if !(a.base_kw > 0.0) {
        return Err(Error::InvalidArgument("base-kw must be positive".into()));
    }
    let base = load_config(&a.common.config)?;
    let variants = a
        .variants
        .iter()
        .filter(|s| !s.trim().is_empty())
        .map(|s| Ok((s.trim().to_string(), s.parse::<Hardware>()?.apply(&base, a.base_kw)?)))
        .collect::<Result<Vec<_>>>()?;
    sweep(&a.common, seed, variants)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base() -> NetworkConfig {
        fleetlab::data::synth_scenario("two-region-commute", 0).unwrap()
    }

    #[test]
    fn allocations_parse_and_apply() {
        let cfg = base();
        let k = cfg.num_rates();
        let u = "uniform:3".parse::<Allocation>().unwrap().apply(&cfg).unwrap();
        assert!(u.charger_counts.iter().all(|&c| c == 3));
        let c = "concentrated:1:5".parse::<Allocation>().unwrap().apply(&cfg).unwrap();
        assert_eq!(c.chargers(0, 0), 0);
        assert_eq!(c.chargers(1, k - 1), 5);
        let a = "abundant".parse::<Allocation>().unwrap().apply(&cfg).unwrap();
        assert_eq!(a.chargers(1, 0), cfg.fleet_size);
        let n = "counts:2/0".parse::<Allocation>().unwrap().apply(&cfg).unwrap();
        assert_eq!((n.chargers(0, 0), n.chargers(1, 0)), (2, 0));
        assert!("counts:1/2/3".parse::<Allocation>().unwrap().apply(&cfg).is_err());
        assert!("concentrated:9:1".parse::<Allocation>().unwrap().apply(&cfg).is_err());
        assert!("lots".parse::<Allocation>().is_err());
    }

    #[test]
    fn hardware_scales_rates_and_costs() {
        let mut cfg = base();
        cfg.charge_rates = vec![2];
        cfg.battery_cost.iter_mut().for_each(|c| *c = (*c).min(3));
        let h: Hardware = "37.5:2".parse().unwrap();
        let out = h.apply(&cfg, 75.0).unwrap();
        assert_eq!(out.charge_rates, vec![1]);
        for (a, b) in cfg.battery_cost.iter().zip(&out.battery_cost) {
            assert_eq!(*b, (*a + 1) / 2);
        }
        assert!("75".parse::<Hardware>().is_err());
        assert!("0:1".parse::<Hardware>().is_err());
    }
}
