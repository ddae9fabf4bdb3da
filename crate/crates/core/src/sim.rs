//! Discrete-time fleet dynamics and the sequential per-vehicle assignment
//! loop that every policy runs through.

use std::collections::BTreeMap;
use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::Serialize;

use crate::config::NetworkConfig;
use crate::error::{Error, Result};
use crate::model::{
    atomic_reward, check_fleet_action, feasible_atomic_actions, AtomicAction, FleetAction,
    SystemState, TripStatus, VehicleStatus,
};
use crate::reduction::{ActionSlots, ObservationLayout, ObservationTracker};

pub type SimRng = ChaCha8Rng;

/// Seed plus trajectory index. Arrivals and policy sampling draw from two
/// separate ChaCha streams so that two policies evaluated on the same
/// stream see the same demand realization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct RngStream {
    pub seed: u64,
    pub stream_id: u64,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        Self { seed, stream_id }
    }

    pub fn arrivals(&self) -> SimRng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(2 * self.stream_id);
        rng
    }

    pub fn policy(&self) -> SimRng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(2 * self.stream_id + 1);
        rng
    }
}

/// All vehicles idle at half charge, spread round-robin over regions; all
/// chargers free; no queued trips; time 0.
pub fn initial_state(cfg: &NetworkConfig) -> SystemState {
    let mut s = SystemState::empty(cfg, 0);
    let battery = cfg.battery_capacity / 2;
    for i in 0..cfg.fleet_size as usize {
        s.add_vehicles(VehicleStatus::new(i % cfg.num_regions(), 0, battery), 1);
    }
    for v in 0..cfg.num_regions() {
        for k in 0..cfg.num_rates() {
            s.chargers[SystemState::charger_index(cfg, v, k, 0)] = cfg.chargers(v, k);
        }
    }
    s
}

/// Status of a vehicle at the next epoch after taking `action` at time `t`.
pub fn post_status(cfg: &NetworkConfig, vehicle: VehicleStatus, action: AtomicAction, t: usize) -> VehicleStatus {
    match action {
        AtomicAction::Fulfill(o) => {
            let (u, v) = (o.origin as usize, o.dest as usize);
            let eta = u32::from(vehicle.eta) + cfg.duration(u, v, t) - 1;
            VehicleStatus::new(v, eta, u32::from(vehicle.battery) - cfg.bcost(u, v))
        }
        AtomicAction::Reposition(v) => {
            let (u, v) = (vehicle.region(), v as usize);
            VehicleStatus::new(v, cfg.duration(u, v, t) - 1, u32::from(vehicle.battery) - cfg.bcost(u, v))
        }
        AtomicAction::Charge(k) => VehicleStatus::new(
            vehicle.region(),
            cfg.charge_period - 1,
            cfg.charged_battery(u32::from(vehicle.battery), k as usize),
        ),
        AtomicAction::Pass => {
            if vehicle.eta == 0 {
                vehicle
            } else {
                VehicleStatus {
                    eta: vehicle.eta - 1,
                    ..vehicle
                }
            }
        }
    }
}

/// Next-epoch vehicle counts under a feasible fleet action.
pub fn transition_fleet(
    cfg: &NetworkConfig,
    state: &SystemState,
    action: &FleetAction,
) -> Result<BTreeMap<VehicleStatus, u32>> {
    check_fleet_action(cfg, state, action)?;
    let t = state.time;
    let mut next: BTreeMap<VehicleStatus, u32> = BTreeMap::new();
    let mut put = |s: VehicleStatus, n: u32| {
        if n > 0 {
            *next.entry(s).or_insert(0) += n;
        }
    };
    for (&(s, o), &n) in &action.fulfill {
        put(post_status(cfg, s, AtomicAction::Fulfill(o), t), n);
    }
    for (&(s, v), &n) in &action.reposition {
        put(post_status(cfg, s, AtomicAction::Reposition(v), t), n);
    }
    for (&(s, k), &n) in &action.charge {
        put(post_status(cfg, s, AtomicAction::Charge(k), t), n);
    }
    for (&s, &n) in &action.pass {
        put(post_status(cfg, s, AtomicAction::Pass, t), n);
    }
    Ok(next)
}

/// Per origin-destination trip flow during one transition.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct TripFlow {
    /// Raw arrivals, before the queue cap.
    pub arrivals: Vec<u32>,
    pub rejected: Vec<u32>,
    pub abandoned: Vec<u32>,
    pub fulfilled: Vec<u32>,
}

/// Next-epoch trip queue: new arrivals enter at age 0 (capped), unserved
/// orders age by one, orders past the connection patience are abandoned.
pub fn transition_trips(
    cfg: &NetworkConfig,
    state: &SystemState,
    action: &FleetAction,
    arrivals: &[u32],
) -> Result<(Vec<u32>, TripFlow)> {
    let nv = cfg.num_regions();
    let lc = cfg.connection_patience as usize;
    if arrivals.len() != nv * nv {
        return Err(Error::InvalidArgument("arrival vector has wrong length".into()));
    }
    let mut served = vec![0u32; state.trips.len()];
    for (&(_, o), &n) in &action.fulfill {
        served[SystemState::trip_index(cfg, o.origin as usize, o.dest as usize, o.age as usize)] += n;
    }
    let cap = cfg.trip_cap();
    let mut next = vec![0u32; state.trips.len()];
    let mut flow = TripFlow {
        arrivals: arrivals.to_vec(),
        rejected: vec![0; nv * nv],
        abandoned: vec![0; nv * nv],
        fulfilled: vec![0; nv * nv],
    };
    for u in 0..nv {
        for v in 0..nv {
            let uv = u * nv + v;
            for age in 0..=lc {
                let i = SystemState::trip_index(cfg, u, v, age);
                let left = state.trips[i].checked_sub(served[i]).ok_or_else(|| {
                    Error::ContractViolation(format!(
                        "trip ({u},{v},{age}) fulfilled {} times but queue holds {}",
                        served[i], state.trips[i]
                    ))
                })?;
                flow.fulfilled[uv] += served[i];
                if age == lc {
                    flow.abandoned[uv] += left;
                } else {
                    next[i + 1] = left;
                }
            }
            let a = arrivals[uv];
            next[SystemState::trip_index(cfg, u, v, 0)] = a.min(cap);
            flow.rejected[uv] = a.saturating_sub(cap);
        }
    }
    Ok((next, flow))
}

/// Next-epoch charger counts: new sessions start at `J - 1`, busy chargers
/// count down, free = just finished + unclaimed.
pub fn transition_chargers(cfg: &NetworkConfig, state: &SystemState, action: &FleetAction) -> Result<Vec<u32>> {
    let j = cfg.charge_period as usize;
    let mut next = vec![0u32; state.chargers.len()];
    for v in 0..cfg.num_regions() {
        for k in 0..cfg.num_rates() {
            let base = SystemState::charger_index(cfg, v, k, 0);
            let used = action.charging_at(v, k);
            let free = state.chargers[base].checked_sub(used).ok_or_else(|| {
                Error::ContractViolation(format!("charger ({v},{k}) oversubscribed"))
            })?;
            if j == 1 {
                next[base] = free + used;
                continue;
            }
            next[base + j - 1] = used;
            for jj in 1..j - 1 {
                next[base + jj] = state.chargers[base + jj + 1];
            }
            next[base] = state.chargers[base + 1] + free;
        }
    }
    Ok(next)
}

/// Independent Poisson draws with mean `λ_uv^t`, dense over `(u, v)`.
pub fn sample_arrivals(cfg: &NetworkConfig, t: usize, rng: &mut SimRng) -> Vec<u32> {
    let nv = cfg.num_regions();
    let mut out = vec![0u32; nv * nv];
    for u in 0..nv {
        for v in 0..nv {
            let lam = cfg.lambda(u, v, t);
            if lam > 0.0 {
                let d = Poisson::new(lam).expect("positive finite rate");
                out[u * nv + v] = d.sample(rng) as u32;
            }
        }
    }
    out
}

/// Applies a complete fleet action and the arrivals for the next epoch.
pub fn step(
    cfg: &NetworkConfig,
    state: &SystemState,
    action: &FleetAction,
    arrivals: &[u32],
) -> Result<(SystemState, TripFlow)> {
    let vehicles = transition_fleet(cfg, state, action)?;
    let (trips, flow) = transition_trips(cfg, state, action, arrivals)?;
    let chargers = transition_chargers(cfg, state, action)?;
    Ok((
        SystemState {
            time: (state.time + 1) % cfg.horizon(),
            vehicles,
            trips,
            chargers,
        },
        flow,
    ))
}

/// One policy choice plus the probability the policy assigned to it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Decision {
    pub action: AtomicAction,
    pub prob: f64,
}

impl Decision {
    pub fn certain(action: AtomicAction) -> Self {
        Self { action, prob: 1.0 }
    }
}

/// What a policy sees when asked about one vehicle.
pub struct AtomicContext<'a> {
    pub cfg: &'a NetworkConfig,
    /// Unassigned vehicles plus unclaimed trips and chargers.
    pub remaining: &'a SystemState,
    pub vehicle: VehicleStatus,
    pub feasible: &'a [AtomicAction],
    /// Reduced observation of the intra-epoch state, if the policy asked for it.
    pub observation: Option<&'a [f64]>,
    /// 0-based position of this vehicle in the epoch's assignment order.
    pub step: usize,
}

/// A dispatching policy. `start_epoch` may plan for the whole fleet; the
/// returned dispatcher is then asked once per vehicle in assignment order.
pub trait Policy: Send + Sync {
    fn name(&self) -> String;

    fn uses_observation(&self) -> bool {
        false
    }

    fn start_epoch<'a>(
        &'a self,
        cfg: &'a NetworkConfig,
        state: &SystemState,
        rng: &mut SimRng,
    ) -> Box<dyn Dispatcher + 'a>;
}

pub trait Dispatcher {
    fn decide(&mut self, ctx: &AtomicContext<'_>, rng: &mut SimRng) -> Decision;
}

/// How much of each trajectory to keep.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TraceLevel {
    /// Atomic records with observations and masks (training).
    Full,
    /// Atomic records without observations.
    Atomic,
    /// Epoch summaries only.
    Summary,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AtomicRecord {
    pub day: u32,
    pub time: u16,
    pub step: u16,
    pub vehicle: VehicleStatus,
    pub action: AtomicAction,
    pub slot: u16,
    /// Feasible slots as a bitmask.
    pub mask: u64,
    pub prob: f64,
    pub reward: f64,
}

/// Counts of atomic decisions by kind; pass is split by idle / busy.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct FleetHistogram {
    pub fulfill: u32,
    pub reposition: u32,
    pub charge: u32,
    pub idle: u32,
    pub busy: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochRecord {
    pub day: u32,
    pub time: u16,
    pub reward: f64,
    pub arrivals: u32,
    pub fulfilled: u32,
    pub abandoned: u32,
    pub rejected: u32,
    /// Orders carried over into the next epoch (age ≥ 1).
    pub queued: u32,
    pub fleet: FleetHistogram,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpisodeTrace {
    pub stream: RngStream,
    pub days: u32,
    pub horizon: u32,
    pub fleet_size: u32,
    pub obs_dim: usize,
    /// Row-major, one row per atomic record (empty unless `TraceLevel::Full`).
    #[serde(skip)]
    pub observations: Vec<f64>,
    /// Observation of the state after the final transition.
    #[serde(skip)]
    pub terminal_observation: Vec<f64>,
    pub atomic: Vec<AtomicRecord>,
    pub epochs: Vec<EpochRecord>,
    pub daily_rewards: Vec<f64>,
    #[serde(skip)]
    pub final_state: Option<SystemState>,
}

impl EpisodeTrace {
    pub fn observation(&self, i: usize) -> &[f64] {
        &self.observations[i * self.obs_dim..(i + 1) * self.obs_dim]
    }

    pub fn total_reward(&self) -> f64 {
        self.daily_rewards.iter().sum()
    }

    pub fn mean_daily_reward(&self) -> f64 {
        self.total_reward() / self.days as f64
    }

    pub fn fulfillment_rate(&self) -> f64 {
        let arr: u64 = self.epochs.iter().map(|e| u64::from(e.arrivals)).sum();
        let ful: u64 = self.epochs.iter().map(|e| u64::from(e.fulfilled)).sum();
        if arr == 0 {
            0.0
        } else {
            ful as f64 / arr as f64
        }
    }

    /// One row per atomic step.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "day", "time", "step", "dest", "eta", "battery", "action", "target", "age", "prob", "reward",
        ])?;
        for r in &self.atomic {
            let (kind, target, age) = match r.action {
                AtomicAction::Fulfill(o) => ("fulfill", o.dest.to_string(), o.age.to_string()),
                AtomicAction::Reposition(v) => ("reposition", v.to_string(), String::new()),
                AtomicAction::Charge(k) => ("charge", k.to_string(), String::new()),
                AtomicAction::Pass => ("pass", String::new(), String::new()),
            };
            w.write_record([
                r.day.to_string(),
                r.time.to_string(),
                r.step.to_string(),
                r.vehicle.dest.to_string(),
                r.vehicle.eta.to_string(),
                r.vehicle.battery.to_string(),
                kind.to_string(),
                target,
                age,
                format!("{:?}", r.prob),
                format!("{:?}", r.reward),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Compact little-endian log: magic `FLTR`, version, record count, then
    /// fixed 40-byte records.
    pub fn write_binary<W: Write>(&self, mut out: W) -> Result<()> {
        out.write_all(b"FLTR")?;
        out.write_all(&1u32.to_le_bytes())?;
        out.write_all(&(self.atomic.len() as u64).to_le_bytes())?;
        for r in &self.atomic {
            let (kind, a, b): (u8, u16, u16) = match r.action {
                AtomicAction::Fulfill(o) => (0, o.dest, o.age),
                AtomicAction::Reposition(v) => (1, v, 0),
                AtomicAction::Charge(k) => (2, k, 0),
                AtomicAction::Pass => (3, 0, 0),
            };
            out.write_all(&r.day.to_le_bytes())?;
            out.write_all(&r.time.to_le_bytes())?;
            out.write_all(&r.step.to_le_bytes())?;
            out.write_all(&r.vehicle.dest.to_le_bytes())?;
            out.write_all(&r.vehicle.eta.to_le_bytes())?;
            out.write_all(&r.vehicle.battery.to_le_bytes())?;
            out.write_all(&[kind, 0])?;
            out.write_all(&a.to_le_bytes())?;
            out.write_all(&b.to_le_bytes())?;
            out.write_all(&r.prob.to_le_bytes())?;
            out.write_all(&r.reward.to_le_bytes())?;
        }
        Ok(())
    }

    /// Per-trajectory metrics: daily reward, fulfillment, per-epoch fleet and
    /// trip breakdowns.
    pub fn metrics_json(&self) -> serde_json::Value {
        serde_json::json!({
            "stream": self.stream,
            "days": self.days,
            "daily_rewards": self.daily_rewards,
            "mean_daily_reward": self.mean_daily_reward(),
            "fulfillment_rate": self.fulfillment_rate(),
            "epochs": self.epochs,
        })
    }
}

/// Runs one epoch of sequential assignment and the transition that follows.
/// Appends atomic records (and observations) to `trace` per `level`.
pub fn run_epoch_atomic(
    cfg: &NetworkConfig,
    layout: &ObservationLayout,
    state: &SystemState,
    policy: &dyn Policy,
    arrival_rng: &mut SimRng,
    policy_rng: &mut SimRng,
    day: u32,
    level: TraceLevel,
    trace: &mut EpisodeTrace,
) -> Result<(SystemState, EpochRecord, FleetAction)> {
    let t = state.time;
    let slots = ActionSlots::for_config(cfg);
    let want_obs = policy.uses_observation() || level == TraceLevel::Full;
    let mut tracker = want_obs.then(|| ObservationTracker::new(layout, cfg, state));
    let mut order: Vec<VehicleStatus> = Vec::with_capacity(cfg.fleet_size as usize);
    for (s, &n) in &state.vehicles {
        order.extend(std::iter::repeat(*s).take(n as usize));
    }
    order.sort_by_key(|s| s.assignment_key());

    let mut remaining = state.clone();
    let mut action = FleetAction::default();
    let mut hist = FleetHistogram::default();
    let mut reward = 0.0;
    let mut dispatcher = policy.start_epoch(cfg, state, policy_rng);
    for (n, &vehicle) in order.iter().enumerate() {
        let feasible = feasible_atomic_actions(cfg, &remaining, vehicle)?;
        let decision = {
            let ctx = AtomicContext {
                cfg,
                remaining: &remaining,
                vehicle,
                feasible: &feasible,
                observation: tracker.as_ref().map(|o| o.values.as_slice()),
                step: n,
            };
            dispatcher.decide(&ctx, policy_rng)
        };
        if !feasible.contains(&decision.action) {
            return Err(Error::ContractViolation(format!(
                "policy {} chose infeasible {:?} for {vehicle:?}",
                policy.name(),
                decision.action
            )));
        }
        let r = atomic_reward(cfg, vehicle, decision.action, t)?;
        reward += r;
        if level != TraceLevel::Summary {
            let mut mask = 0u64;
            for a in &feasible {
                mask |= 1u64 << slots.slot_of(a);
            }
            if let (TraceLevel::Full, Some(tr)) = (level, tracker.as_ref()) {
                trace.observations.extend_from_slice(&tr.values);
            }
            trace.atomic.push(AtomicRecord {
                day,
                time: t as u16,
                step: n as u16,
                vehicle,
                action: decision.action,
                slot: slots.slot_of(&decision.action) as u16,
                mask,
                prob: decision.prob,
                reward: r,
            });
        }
        remaining.remove_vehicles(vehicle, 1)?;
        match decision.action {
            AtomicAction::Fulfill(o) => {
                remaining.trips[SystemState::trip_index(cfg, o.origin as usize, o.dest as usize, o.age as usize)] -= 1;
                if let Some(tr) = tracker.as_mut() {
                    tr.take_trip(layout, &o);
                }
                hist.fulfill += 1;
            }
            AtomicAction::Charge(k) => {
                remaining.chargers[SystemState::charger_index(cfg, vehicle.region(), k as usize, 0)] -= 1;
                if let Some(tr) = tracker.as_mut() {
                    tr.take_charger(layout, vehicle.region(), k as usize);
                }
                hist.charge += 1;
            }
            AtomicAction::Reposition(_) => hist.reposition += 1,
            AtomicAction::Pass if vehicle.eta == 0 => hist.idle += 1,
            AtomicAction::Pass => hist.busy += 1,
        }
        if let Some(tr) = tracker.as_mut() {
            tr.move_vehicle(layout, &vehicle, &post_status(cfg, vehicle, decision.action, t));
        }
        action.record(vehicle, decision.action);
    }
    let next_t = (t + 1) % cfg.horizon();
    let arrivals = sample_arrivals(cfg, next_t, arrival_rng);
    let (next, flow) = step(cfg, state, &action, &arrivals)?;
    let queued = (0..cfg.num_regions())
        .flat_map(|u| (0..cfg.num_regions()).map(move |v| (u, v)))
        .map(|(u, v)| {
            let base = SystemState::trip_index(cfg, u, v, 0);
            next.trips[base + 1..base + 1 + cfg.connection_patience as usize].iter().sum::<u32>()
        })
        .sum();
    let rec = EpochRecord {
        day,
        time: t as u16,
        reward,
        arrivals: flow.arrivals.iter().sum(),
        fulfilled: flow.fulfilled.iter().sum(),
        abandoned: flow.abandoned.iter().sum(),
        rejected: flow.rejected.iter().sum(),
        queued,
        fleet: hist,
    };
    Ok((next, rec, action))
}

/// Simulates `days · T` epochs from `initial` (whose time must be 0).
pub fn run_trajectory(
    cfg: &NetworkConfig,
    initial: &SystemState,
    policy: &dyn Policy,
    days: u32,
    stream: RngStream,
    level: TraceLevel,
) -> Result<EpisodeTrace> {
    if days == 0 {
        return Err(Error::InvalidArgument("days must be at least 1".into()));
    }
    let layout = ObservationLayout::new(cfg);
    let mut arrival_rng = stream.arrivals();
    let mut policy_rng = stream.policy();
    let horizon = cfg.horizon();
    let mut trace = EpisodeTrace {
        stream,
        days,
        horizon: horizon as u32,
        fleet_size: cfg.fleet_size,
        obs_dim: layout.dim(),
        observations: Vec::new(),
        terminal_observation: Vec::new(),
        atomic: Vec::new(),
        epochs: Vec::with_capacity(days as usize * horizon),
        daily_rewards: vec![0.0; days as usize],
        final_state: None,
    };
    if level != TraceLevel::Summary {
        trace.atomic.reserve(days as usize * horizon * cfg.fleet_size as usize);
    }
    let mut state = initial.clone();
    for d in 0..days {
        for _ in 0..horizon {
            let (next, rec, _) = run_epoch_atomic(
                cfg,
                &layout,
                &state,
                policy,
                &mut arrival_rng,
                &mut policy_rng,
                d,
                level,
                &mut trace,
            )?;
            trace.daily_rewards[d as usize] += rec.reward;
            trace.epochs.push(rec);
            state = next;
        }
    }
    if level == TraceLevel::Full {
        trace.terminal_observation = crate::reduction::reduce_state(&layout, cfg, &state, 0).values;
    }
    trace.final_state = Some(state);
    Ok(trace)
}

/// Runs `count` trajectories on streams `first_stream..first_stream+count`.
/// Results are ordered by stream regardless of scheduling.
pub fn rollout_many(
    cfg: &NetworkConfig,
    initial: &SystemState,
    policy: &dyn Policy,
    days: u32,
    seed: u64,
    first_stream: u64,
    count: usize,
    level: TraceLevel,
) -> Result<Vec<EpisodeTrace>> {
    crate::par::map_indexed(count, |i| {
        run_trajectory(cfg, initial, policy, days, RngStream::new(seed, first_stream + i as u64), level)
    })
    .into_iter()
    .collect()
}

/// Trip status helper for tests and baselines: oldest queued order for
/// `(u, v)` in `state`, if any.
pub fn oldest_trip(cfg: &NetworkConfig, state: &SystemState, u: usize, v: usize) -> Option<TripStatus> {
    (0..=cfg.connection_patience)
        .rev()
        .map(|age| TripStatus::new(u, v, age))
        .find(|o| state.trip_count(cfg, *o) > 0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> NetworkConfig {
        let mut c = NetworkConfig::blank(2, 2, 1, 6, vec![1]);
        c.charge_period = 3;
        c.pickup_patience = 0;
        c.connection_patience = 1;
        c.trip_duration = vec![2; 8];
        c.battery_cost = vec![0, 1, 1, 0];
        c.charger_counts = vec![3, 0];
        c.validate().unwrap();
        c
    }

    #[test]
    fn fulfill_moves_vehicle_per_duration_and_battery() {
        let c = cfg();
        let mut s = initial_state(&c);
        s.vehicles.clear();
        let v = VehicleStatus::new(0, 0, 4);
        s.add_vehicles(v, 1);
        s.trips[SystemState::trip_index(&c, 0, 1, 0)] = 1;
        let mut a = FleetAction::default();
        a.record(v, AtomicAction::Fulfill(TripStatus::new(0, 1, 0)));
        let next = transition_fleet(&c, &s, &a).unwrap();
        assert_eq!(next.into_iter().collect::<Vec<_>>(), vec![(VehicleStatus::new(1, 1, 3), 1)]);
    }

    #[test]
    fn charge_overfill_clamps_to_full() {
        let c = cfg();
        let mut s = initial_state(&c);
        s.vehicles.clear();
        let v = VehicleStatus::new(0, 0, c.battery_capacity - 1);
        s.add_vehicles(v, 1);
        let mut a = FleetAction::default();
        a.record(v, AtomicAction::Charge(0));
        let next = transition_fleet(&c, &s, &a).unwrap();
        assert_eq!(
            next.into_iter().collect::<Vec<_>>(),
            vec![(VehicleStatus::new(0, c.charge_period - 1, c.battery_capacity), 1)]
        );
    }

    #[test]
    fn idle_fleet_passing_is_stationary() {
        let c = cfg();
        let s = initial_state(&c);
        let next = transition_fleet(&c, &s, &FleetAction::all_pass(&s)).unwrap();
        assert_eq!(next, s.vehicles);
    }

    #[test]
    fn trips_age_and_get_abandoned() {
        let c = cfg();
        let mut s = initial_state(&c);
        s.trips[SystemState::trip_index(&c, 0, 1, 0)] = 3;
        s.trips[SystemState::trip_index(&c, 0, 1, 1)] = 2;
        let (next, flow) = transition_trips(&c, &s, &FleetAction::all_pass(&s), &[0; 4]).unwrap();
        assert_eq!(next[SystemState::trip_index(&c, 0, 1, 1)], 3);
        assert_eq!(next[SystemState::trip_index(&c, 0, 1, 0)], 0);
        assert_eq!(flow.abandoned[1], 2);
    }

    #[test]
    fn arrivals_beyond_cap_are_rejected() {
        let c = cfg();
        let s = initial_state(&c);
        let cap = c.trip_cap();
        let (next, flow) =
            transition_trips(&c, &s, &FleetAction::all_pass(&s), &[0, cap + 7, 0, 0]).unwrap();
        assert_eq!(next[SystemState::trip_index(&c, 0, 1, 0)], cap);
        assert_eq!(flow.rejected[1], 7);
    }

    #[test]
    fn partial_fulfillment_carries_remainder() {
        let mut c = cfg();
        c.fleet_size = 2;
        let mut s = initial_state(&c);
        s.vehicles.clear();
        let v = VehicleStatus::new(0, 0, 5);
        s.add_vehicles(v, 2);
        s.trips[SystemState::trip_index(&c, 0, 1, 0)] = 3;
        let mut a = FleetAction::default();
        a.record(v, AtomicAction::Fulfill(TripStatus::new(0, 1, 0)));
        a.record(v, AtomicAction::Fulfill(TripStatus::new(0, 1, 0)));
        let (next, _) = transition_trips(&c, &s, &a, &[0; 4]).unwrap();
        assert_eq!(next[SystemState::trip_index(&c, 0, 1, 1)], 1);
    }

    #[test]
    fn overserving_a_trip_is_a_contract_violation() {
        let c = cfg();
        let s = initial_state(&c);
        let mut a = FleetAction::default();
        a.record(VehicleStatus::new(0, 0, 3), AtomicAction::Fulfill(TripStatus::new(0, 1, 0)));
        assert!(matches!(transition_trips(&c, &s, &a, &[0; 4]), Err(Error::ContractViolation(_))));
        assert!(matches!(transition_fleet(&c, &s, &a), Err(Error::ContractViolation(_))));
    }

    #[test]
    fn charger_sessions_count_down() {
        let mut c = cfg();
        c.fleet_size = 2;
        let mut s = initial_state(&c);
        s.vehicles.clear();
        let v = VehicleStatus::new(0, 0, 2);
        s.add_vehicles(v, 2);
        let mut a = FleetAction::default();
        a.record(v, AtomicAction::Charge(0));
        a.record(v, AtomicAction::Charge(0));
        let next = transition_chargers(&c, &s, &a).unwrap();
        assert_eq!(next[SystemState::charger_index(&c, 0, 0, 2)], 2);
        assert_eq!(next[SystemState::charger_index(&c, 0, 0, 0)], 1);
        let pass_all = FleetAction::all_pass(&s);
        assert_eq!(transition_chargers(&c, &s, &pass_all).unwrap(), s.chargers);
    }

    #[test]
    fn initial_state_round_robin_half_battery() {
        let c = NetworkConfig::blank(5, 1, 10, 130, vec![]);
        c.validate().unwrap();
        let s = initial_state(&c);
        for v in 0..5 {
            assert_eq!(s.vehicle_count(&VehicleStatus::new(v, 0, 65)), 2);
        }
        s.check_invariants(&c).unwrap();
    }

    #[test]
    fn zero_rate_gives_zero_arrivals_and_seeds_repeat() {
        let c = cfg();
        let mut rng = RngStream::new(1, 0).arrivals();
        assert_eq!(sample_arrivals(&c, 0, &mut rng), vec![0; 4]);
        let mut c2 = c.clone();
        let i = c2.uvt(0, 1, 0);
        c2.arrival_rate[i] = 3.0;
        let a: Vec<_> = (0..50).map(|_| sample_arrivals(&c2, 0, &mut RngStream::new(9, 3).arrivals())).collect();
        assert!(a.windows(2).all(|w| w[0] == w[1]));
    }
}
