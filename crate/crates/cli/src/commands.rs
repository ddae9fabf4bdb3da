use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use fleetlab::data::{self, CalibrationParams, DayFilter, RegionMap};
use fleetlab::eval::{self, build_policy, fluid_solution, CompareReport, EvalReport, PolicySpec};
use fleetlab::fluid::{build_full_lp, build_reduced_lp, solve_fluid, FluidLp};
use fleetlab::nn::{NetConfig, Sharing};
use fleetlab::ppo::{self, IterationReport, PpoConfig};
use fleetlab::{ChargingCurve, Error, NetworkConfig, Result};

use crate::{BoundArgs, CalibrateArgs, CompareArgs, EvaluateArgs, SynthArgs, TrainArgs, TrainingArgs};

pub fn load_config(path: &Path) -> Result<NetworkConfig> {
    let cfg = NetworkConfig::load(path).map_err(|e| match e {
        Error::Io(io) => Error::InvalidArgument(format!("cannot read config {}: {io}", path.display())),
        other => other,
    })?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

pub fn ppo_config(t: &TrainingArgs, seed: u64) -> Result<PpoConfig> {
    let cfg = PpoConfig {
        policy_iterations: t.iterations,
        trajectories_per_iter: t.trajectories,
        days_per_trajectory: t.days,
        seed,
        net: NetConfig {
            hidden: t.hidden.clone(),
            sharing: if t.shared { Sharing::Shared } else { Sharing::PerTime },
            ..NetConfig::default()
        },
        early_stop_patience: (t.patience > 0).then_some(t.patience),
        ..PpoConfig::default()
    };
    cfg.validate()?;
    Ok(cfg)
}

/// A checkpoint directory, or a training output directory holding `best/`.
pub fn resolve_checkpoint(dir: &Path) -> Result<PathBuf> {
    for cand in [dir.to_path_buf(), dir.join("best")] {
        if cand.join("policy.bin").is_file() {
            return Ok(cand);
        }
    }
    Err(Error::MissingArtifact(format!("no policy.bin under {}", dir.display())))
}

pub fn build(spec: PolicySpec, cfg: &NetworkConfig, checkpoint: Option<&Path>) -> Result<Box<dyn fleetlab::sim::Policy>> {
    let dir = match (spec, checkpoint) {
        (PolicySpec::Ppo, Some(d)) => Some(resolve_checkpoint(d)?),
        _ => None,
    };
    build_policy(spec, cfg, dir.as_deref())
}

pub fn calibrate(a: &CalibrateArgs) -> Result<()> {
    let filter = match a.days.as_str() {
        "all" => DayFilter::All,
        "weekdays" => DayFilter::Weekdays,
        "mon-thu" => DayFilter::MonThu,
        other => return Err(Error::InvalidArgument(format!("unknown day filter `{other}`"))),
    };
    let records = data::load_records(&a.records)?;
    let map = RegionMap::load(&a.regions)?;
    let params = CalibrationParams {
        fleet_size: a.fleet,
        battery_capacity: a.battery_units,
        charger_kw: a.charger_kw.clone(),
        chargers: a.chargers.clone(),
        charge_period: a.charge_period,
        pickup_patience: a.pickup_patience,
        connection_patience: a.connection_patience,
        curve: a.nonlinear.then(|| ChargingCurve::dc_fast(1)),
        ..CalibrationParams::default()
    };
    let mut cfg = data::calibrate(&records, &map, a.epoch_min, filter, &params)?;
    if let Some(curve) = cfg.charging_curve.as_mut() {
        curve.reference_rate = cfg.charge_rates[0];
    }
    let reference = match a.reference_fleet {
        Some(r) => r,
        None => data::estimate_reference_fleet(&records),
    };
    if let Some(target) = a.scale_fleet {
        cfg = data::scale_demand(&cfg, target, reference)?;
    }
    cfg.validate()?;
    cfg.save(&a.out)?;
    let total: f64 = cfg.arrival_rate.iter().sum();
    println!("records          {}", records.len());
    println!("regions          {}", cfg.num_regions());
    println!("time steps       {}", cfg.horizon());
    println!("fleet            {}", cfg.fleet_size);
    println!("reference fleet  {reference}");
    println!("orders per day   {total:.3}");
    println!("charge rates     {:?}", cfg.charge_rates);
    println!("config hash      {}", cfg.hash());
    Ok(())
}

pub fn synth(a: &SynthArgs, seed: u64) -> Result<()> {
    let cfg = data::synth_scenario(&a.template, seed)?;
    cfg.save(&a.out)?;
    println!("{} written to {} (config hash {})", a.template, a.out.display(), cfg.hash());
    Ok(())
}

pub fn train(a: &TrainArgs, seed: u64) -> Result<()> {
    let cfg = load_config(&a.config)?;
    let pcfg = ppo_config(&a.training, seed)?;
    let outcome = ppo::train(&cfg, &pcfg, Some(&a.out))?;
    let best_report = match outcome.best_iteration {
        0 => IterationReport {
            iteration: 0,
            g_hat: f64::NAN,
            clip: pcfg.clip_at(0),
            value_loss: Vec::new(),
            surrogate: 0.0,
            clip_fraction: 0.0,
            policy_samples: 0,
            dropped_samples: 0,
            eval_reward: outcome.initial_eval_reward,
        },
        m => outcome.reports[m - 1].clone(),
    };
    ppo::write_checkpoint(&a.out.join("best"), &cfg, &pcfg, &outcome.policy, &outcome.value, &best_report)?;
    let summary = serde_json::json!({
        "config_hash": cfg.hash(),
        "seed": seed,
        "best_iteration": outcome.best_iteration,
        "initial_eval_reward": outcome.initial_eval_reward,
        "iterations": outcome.reports,
    });
    write_json(&a.out.join("train_report.json"), &summary)?;
    println!("iteration  g_hat  eval_reward  clip_fraction");
    for r in &outcome.reports {
        println!("{:>9}  {:>5.3}  {:>11.3}  {:>13.3}", r.iteration, r.g_hat, r.eval_reward, r.clip_fraction);
    }
    println!("best iteration {} (initial eval {:.3})", outcome.best_iteration, outcome.initial_eval_reward);
    println!("config hash {}", cfg.hash());
    Ok(())
}

fn print_report(r: &EvalReport) {
    println!("policy            {}", r.policy);
    println!("avg daily reward  {:.4} +- {:.4}", r.summary.mean, r.summary.stderr);
    println!(
        "orders            {} arrived, {} fulfilled, {} abandoned, {} rejected ({:.2}% fulfilled)",
        r.fulfillment.arrivals,
        r.fulfillment.fulfilled,
        r.fulfillment.abandoned,
        r.fulfillment.rejected,
        100.0 * r.fulfillment.rate
    );
    println!("config hash       {}", r.config_hash);
}

pub fn evaluate(a: &EvaluateArgs, seed: u64) -> Result<()> {
    let cfg = load_config(&a.config)?;
    let spec: PolicySpec = a.policy.parse()?;
    let policy = build(spec, &cfg, a.checkpoint.as_deref())?;
    let report = eval::evaluate(&cfg, policy.as_ref(), seed, a.trajectories, a.days)?;
    if let Some(dir) = &a.out {
        write_json(&dir.join("report.json"), &report)?;
        report.write_timeseries_csv(fs::File::create(dir.join("timeseries.csv"))?)?;
    }
    print_report(&report);
    Ok(())
}

pub fn bound(a: &BoundArgs) -> Result<()> {
    let cfg = load_config(&a.config)?;
    let target = if cfg.is_nonlinear() { cfg.linearized() } else { cfg.clone() };
    let lp: Option<FluidLp> = match a.formulation.as_str() {
        "auto" => None,
        "full" => Some(build_full_lp(&target)?),
        "reduced" => Some(build_reduced_lp(&target)?),
        other => return Err(Error::InvalidArgument(format!("unknown formulation `{other}`"))),
    };
    let mut sol = match &lp {
        Some(lp) => solve_fluid(&target, lp)?,
        None => fluid_solution(&cfg)?,
    };
    sol.indicative = cfg.is_nonlinear();
    sol.config_hash = cfg.hash();
    if let Some(path) = &a.mps {
        let lp = match lp {
            Some(lp) => lp,
            None => match sol.formulation {
                fleetlab::fluid::Formulation::Full => build_full_lp(&target)?,
                fleetlab::fluid::Formulation::Reduced => build_reduced_lp(&target)?,
            },
        };
        lp.problem.write_mps(std::io::BufWriter::new(fs::File::create(path)?))?;
    }
    if let Some(path) = &a.out {
        write_json(path, &sol)?;
    }
    let tag = if sol.indicative { " (indicative: linearized charging)" } else { "" };
    println!("upper bound       {:.6}{tag}", sol.objective);
    println!("formulation       {:?}", sol.formulation);
    println!("lp size           {} columns, {} rows", sol.num_columns, sol.num_rows);
    println!("simplex pivots    {}", sol.stats.iterations);
    println!("max residual      {:.3e}", sol.max_residual);
    println!("config hash       {}", sol.config_hash);
    Ok(())
}

pub fn compare(a: &CompareArgs, seed: u64) -> Result<()> {
    let cfg = load_config(&a.config)?;
    let specs: Vec<PolicySpec> = a.policies.iter().map(|p| p.parse()).collect::<Result<_>>()?;
    if specs.contains(&PolicySpec::Ppo) {
        match &a.checkpoint {
            Some(dir) => drop(resolve_checkpoint(dir)?),
            None => return Err(Error::MissingArtifact("ppo is listed but no --checkpoint was given".into())),
        }
    }
    let sol = fluid_solution(&cfg)?;
    let mut reports = Vec::new();
    for spec in specs {
        let policy = build(spec, &cfg, a.checkpoint.as_deref())?;
        log::info!("evaluating {spec}");
        reports.push(eval::evaluate(&cfg, policy.as_ref(), seed, a.trajectories, a.days)?);
    }
    let cmp = CompareReport::new(&cfg, Some(sol.objective), sol.indicative, &reports);
    let mut table = Vec::new();
    cmp.write_csv(&mut table)?;
    if let Some(path) = &a.out {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir)?;
        }
        fs::write(path, &table)?;
        write_json(&path.with_extension("json"), &cmp)?;
    }
    let tag = if sol.indicative { " (indicative)" } else { "" };
    println!("upper bound {:.4}{tag}", sol.objective);
    std::io::stdout().write_all(&table)?;
    println!("config hash {}", cfg.hash());
    Ok(())
}
