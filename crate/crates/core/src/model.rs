//! Vehicle, trip and charger statuses, the system state, fleet and atomic
//! actions, feasibility predicates and the per-epoch reward.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::config::NetworkConfig;
use crate::error::{Error, Result};

/// `(v, η, b)`: destination (or charging) region, steps remaining on the
/// current task, battery on arrival. `η = 0` means idle at `v`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct VehicleStatus {
    pub dest: u16,
    pub eta: u16,
    pub battery: u16,
}

impl VehicleStatus {
    pub fn new(dest: usize, eta: u32, battery: u32) -> Self {
        Self {
            dest: dest as u16,
            eta: eta as u16,
            battery: battery as u16,
        }
    }

    #[inline]
    pub fn region(&self) -> usize {
        self.dest as usize
    }

    /// Key for the canonical within-epoch assignment order:
    /// η ascending, battery descending, region ascending.
    #[inline]
    pub fn assignment_key(&self) -> (u16, std::cmp::Reverse<u16>, u16) {
        (self.eta, std::cmp::Reverse(self.battery), self.dest)
    }
}

/// `(u, v, ξ)`: origin, destination, steps waited for assignment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TripStatus {
    pub origin: u16,
    pub dest: u16,
    pub age: u16,
}

impl TripStatus {
    pub fn new(origin: usize, dest: usize, age: u32) -> Self {
        Self {
            origin: origin as u16,
            dest: dest as u16,
            age: age as u16,
        }
    }
}

/// `(v, δ, j)` with `δ` given as an index into the config's charge rates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ChargerStatus {
    pub region: u16,
    pub rate: u16,
    pub remaining: u16,
}

/// A task handed to a single vehicle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum AtomicAction {
    Fulfill(TripStatus),
    Reposition(u16),
    /// Charge at the vehicle's region with charger type `k`.
    Charge(u16),
    Pass,
}

/// Integer counts of vehicles, queued trips and chargers at one epoch.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SystemState {
    /// 0-based time of day.
    pub time: usize,
    pub vehicles: BTreeMap<VehicleStatus, u32>,
    /// Dense `(u, v, ξ)` → count, index `(u * V + v) * (L_c + 1) + ξ`.
    pub trips: Vec<u32>,
    /// Dense `(v, k, j)` → count, index `(v * |Δ| + k) * J + j`.
    pub chargers: Vec<u32>,
}

impl SystemState {
    pub fn empty(cfg: &NetworkConfig, time: usize) -> Self {
        let v = cfg.num_regions();
        let ages = cfg.connection_patience as usize + 1;
        let j = cfg.charge_period as usize;
        Self {
            time,
            vehicles: BTreeMap::new(),
            trips: vec![0; v * v * ages],
            chargers: vec![0; v * cfg.num_rates() * j],
        }
    }

    #[inline]
    pub fn trip_index(cfg: &NetworkConfig, u: usize, v: usize, age: usize) -> usize {
        (u * cfg.num_regions() + v) * (cfg.connection_patience as usize + 1) + age
    }

    #[inline]
    pub fn charger_index(cfg: &NetworkConfig, v: usize, k: usize, j: usize) -> usize {
        (v * cfg.num_rates() + k) * cfg.charge_period as usize + j
    }

    pub fn trip_count(&self, cfg: &NetworkConfig, trip: TripStatus) -> u32 {
        self.trips[Self::trip_index(
            cfg,
            trip.origin as usize,
            trip.dest as usize,
            trip.age as usize,
        )]
    }

    pub fn available_chargers(&self, cfg: &NetworkConfig, v: usize, k: usize) -> u32 {
        self.chargers[Self::charger_index(cfg, v, k, 0)]
    }

    pub fn vehicle_count(&self, status: &VehicleStatus) -> u32 {
        self.vehicles.get(status).copied().unwrap_or(0)
    }

    pub fn fleet_total(&self) -> u64 {
        self.vehicles.values().map(|&c| u64::from(c)).sum()
    }

    pub fn add_vehicles(&mut self, status: VehicleStatus, n: u32) {
        if n > 0 {
            *self.vehicles.entry(status).or_insert(0) += n;
        }
    }

    /// Removes `n` vehicles of `status`; errors if fewer are present.
    pub fn remove_vehicles(&mut self, status: VehicleStatus, n: u32) -> Result<()> {
        match self.vehicles.get_mut(&status) {
            Some(c) if *c >= n => {
                *c -= n;
                if *c == 0 {
                    self.vehicles.remove(&status);
                }
                Ok(())
            }
            _ => Err(Error::ContractViolation(format!(
                "not enough vehicles of status {status:?}"
            ))),
        }
    }

    /// Checks fleet and charger conservation plus per-status bounds.
    pub fn check_invariants(&self, cfg: &NetworkConfig) -> Result<()> {
        if self.time >= cfg.horizon() {
            return Err(Error::ContractViolation(format!("time {} out of range", self.time)));
        }
        if self.fleet_total() != u64::from(cfg.fleet_size) {
            return Err(Error::ContractViolation(format!(
                "fleet total {} != N {}",
                self.fleet_total(),
                cfg.fleet_size
            )));
        }
        let max_eta = cfg.max_eta();
        for (s, &c) in &self.vehicles {
            if c == 0 {
                return Err(Error::ContractViolation("zero-count vehicle entry".into()));
            }
            if s.region() >= cfg.num_regions()
                || u32::from(s.battery) > cfg.battery_capacity
                || u32::from(s.eta) > max_eta
            {
                return Err(Error::ContractViolation(format!("vehicle status {s:?} out of range")));
            }
        }
        let cap = cfg.trip_cap();
        if let Some(c) = self.trips.iter().find(|&&c| c > cap) {
            return Err(Error::ContractViolation(format!("trip bucket {c} exceeds cap {cap}")));
        }
        let j = cfg.charge_period as usize;
        for v in 0..cfg.num_regions() {
            for k in 0..cfg.num_rates() {
                let start = Self::charger_index(cfg, v, k, 0);
                let total: u32 = self.chargers[start..start + j].iter().sum();
                if total != cfg.chargers(v, k) {
                    return Err(Error::ContractViolation(format!(
                        "charger total at ({v},{k}) is {total}, expected {}",
                        cfg.chargers(v, k)
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Flow vector over the fleet for one epoch.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FleetAction {
    pub fulfill: BTreeMap<(VehicleStatus, TripStatus), u32>,
    pub reposition: BTreeMap<(VehicleStatus, u16), u32>,
    pub charge: BTreeMap<(VehicleStatus, u16), u32>,
    pub pass: BTreeMap<VehicleStatus, u32>,
}

impl FleetAction {
    /// Everyone passes.
    pub fn all_pass(state: &SystemState) -> Self {
        Self {
            pass: state.vehicles.clone(),
            ..Default::default()
        }
    }

    pub fn record(&mut self, vehicle: VehicleStatus, action: AtomicAction) {
        match action {
            AtomicAction::Fulfill(o) => *self.fulfill.entry((vehicle, o)).or_insert(0) += 1,
            AtomicAction::Reposition(v) => *self.reposition.entry((vehicle, v)).or_insert(0) += 1,
            AtomicAction::Charge(k) => *self.charge.entry((vehicle, k)).or_insert(0) += 1,
            AtomicAction::Pass => *self.pass.entry(vehicle).or_insert(0) += 1,
        }
    }

    /// Fulfillments of trip status `o` summed over vehicles.
    pub fn fulfilled(&self, o: TripStatus) -> u32 {
        self.fulfill
            .iter()
            .filter(|((_, t), _)| *t == o)
            .map(|(_, &c)| c)
            .sum()
    }

    /// Charging assignments at `(v, k)` summed over vehicles.
    pub fn charging_at(&self, v: usize, k: usize) -> u32 {
        self.charge
            .iter()
            .filter(|((s, kk), _)| s.region() == v && *kk as usize == k)
            .map(|(_, &c)| c)
            .sum()
    }

    pub fn fulfilled_total(&self) -> u32 {
        self.fulfill.values().sum()
    }

    pub fn scaled(&self, factor: u32) -> Self {
        fn s<K: Ord + Copy>(m: &BTreeMap<K, u32>, f: u32) -> BTreeMap<K, u32> {
            m.iter().map(|(k, v)| (*k, v * f)).collect()
        }
        Self {
            fulfill: s(&self.fulfill, factor),
            reposition: s(&self.reposition, factor),
            charge: s(&self.charge, factor),
            pass: s(&self.pass, factor),
        }
    }
}

fn fulfill_eligible(cfg: &NetworkConfig, vehicle: VehicleStatus, trip: TripStatus) -> bool {
    trip.origin == vehicle.dest
        && trip.origin != trip.dest
        && u32::from(vehicle.eta) <= cfg.pickup_patience
        && u32::from(vehicle.battery) >= cfg.bcost(trip.origin as usize, trip.dest as usize)
}

fn reposition_eligible(cfg: &NetworkConfig, vehicle: VehicleStatus, target: usize) -> bool {
    vehicle.eta == 0
        && target < cfg.num_regions()
        && target != vehicle.region()
        && u32::from(vehicle.battery) >= cfg.bcost(vehicle.region(), target)
}

/// Atomic actions available to one vehicle in `state`, where `state`'s trip
/// queue and `j = 0` charger counts are the amounts still unclaimed.
///
/// Order: fulfillments by (destination, age), repositions by target, charges
/// by rate index, then `Pass`.
pub fn feasible_atomic_actions(
    cfg: &NetworkConfig,
    state: &SystemState,
    vehicle: VehicleStatus,
) -> Result<Vec<AtomicAction>> {
    if state.vehicle_count(&vehicle) == 0 {
        return Err(Error::InvalidArgument(format!(
            "vehicle status {vehicle:?} not present in state"
        )));
    }
    let mut out = Vec::new();
    let u = vehicle.region();
    let nv = cfg.num_regions();
    if u32::from(vehicle.eta) <= cfg.pickup_patience {
        for v in 0..nv {
            for age in 0..=cfg.connection_patience {
                let trip = TripStatus::new(u, v, age);
                if fulfill_eligible(cfg, vehicle, trip) && state.trip_count(cfg, trip) > 0 {
                    out.push(AtomicAction::Fulfill(trip));
                }
            }
        }
    }
    if vehicle.eta == 0 {
        for v in 0..nv {
            if reposition_eligible(cfg, vehicle, v) {
                out.push(AtomicAction::Reposition(v as u16));
            }
        }
        for k in 0..cfg.num_rates() {
            if state.available_chargers(cfg, u, k) > 0 {
                out.push(AtomicAction::Charge(k as u16));
            }
        }
    }
    out.push(AtomicAction::Pass);
    Ok(out)
}

/// Total reward of a fleet action at time `t`; passing earns nothing.
pub fn epoch_reward(cfg: &NetworkConfig, action: &FleetAction, t: usize) -> f64 {
    let mut total = 0.0;
    for ((_, o), &n) in &action.fulfill {
        total += cfg.fulfill_reward(o.origin as usize, o.dest as usize, t) * f64::from(n);
    }
    for ((s, v), &n) in &action.reposition {
        total += cfg.reposition_cost(s.region(), *v as usize, t) * f64::from(n);
    }
    for ((_, k), &n) in &action.charge {
        total += cfg.charge_cost(*k as usize, t) * f64::from(n);
    }
    total
}

/// Reward of one atomic action on one vehicle. Does not check trip or
/// charger availability (that depends on the intra-epoch state).
pub fn atomic_reward(
    cfg: &NetworkConfig,
    vehicle: VehicleStatus,
    action: AtomicAction,
    t: usize,
) -> Result<f64> {
    let infeasible = || {
        Err(Error::InvalidArgument(format!(
            "{action:?} infeasible for vehicle {vehicle:?}"
        )))
    };
    match action {
        AtomicAction::Pass => Ok(0.0),
        AtomicAction::Fulfill(o) => {
            if !fulfill_eligible(cfg, vehicle, o) || u32::from(o.age) > cfg.connection_patience {
                return infeasible();
            }
            Ok(cfg.fulfill_reward(o.origin as usize, o.dest as usize, t))
        }
        AtomicAction::Reposition(v) => {
            if !reposition_eligible(cfg, vehicle, v as usize) {
                return infeasible();
            }
            Ok(cfg.reposition_cost(vehicle.region(), v as usize, t))
        }
        AtomicAction::Charge(k) => {
            if vehicle.eta != 0 || k as usize >= cfg.num_rates() {
                return infeasible();
            }
            Ok(cfg.charge_cost(k as usize, t))
        }
    }
}

/// Verifies every fleet-action constraint against `state`: eligibility of
/// each flow, trip and charger caps, and per-status flow conservation.
pub fn check_fleet_action(
    cfg: &NetworkConfig,
    state: &SystemState,
    action: &FleetAction,
) -> Result<()> {
    let fail = |m: String| Err(Error::ContractViolation(m));
    let mut assigned: BTreeMap<VehicleStatus, u32> = BTreeMap::new();
    let mut per_trip: BTreeMap<TripStatus, u32> = BTreeMap::new();
    for (&(s, o), &n) in &action.fulfill {
        if !fulfill_eligible(cfg, s, o) || u32::from(o.age) > cfg.connection_patience {
            return fail(format!("fulfill {s:?} -> {o:?} ineligible"));
        }
        *assigned.entry(s).or_insert(0) += n;
        *per_trip.entry(o).or_insert(0) += n;
    }
    for (o, n) in per_trip {
        if n > state.trip_count(cfg, o) {
            return fail(format!("trip {o:?} fulfilled {n} times, queue holds {}", state.trip_count(cfg, o)));
        }
    }
    for (&(s, v), &n) in &action.reposition {
        if !reposition_eligible(cfg, s, v as usize) {
            return fail(format!("reposition {s:?} -> {v} ineligible"));
        }
        *assigned.entry(s).or_insert(0) += n;
    }
    let mut per_charger: BTreeMap<(usize, usize), u32> = BTreeMap::new();
    for (&(s, k), &n) in &action.charge {
        if s.eta != 0 || k as usize >= cfg.num_rates() {
            return fail(format!("charge {s:?} at rate {k} ineligible"));
        }
        *assigned.entry(s).or_insert(0) += n;
        *per_charger.entry((s.region(), k as usize)).or_insert(0) += n;
    }
    for ((v, k), n) in per_charger {
        if n > state.available_chargers(cfg, v, k) {
            return fail(format!("charger ({v},{k}) oversubscribed: {n}"));
        }
    }
    for (&s, &n) in &action.pass {
        *assigned.entry(s).or_insert(0) += n;
    }
    assigned.retain(|_, n| *n > 0);
    let present: BTreeMap<VehicleStatus, u32> =
        state.vehicles.iter().filter(|(_, &n)| n > 0).map(|(s, n)| (*s, *n)).collect();
    if assigned != present {
        return fail("flow conservation violated".into());
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> NetworkConfig {
        let mut c = NetworkConfig::blank(2, 2, 2, 5, vec![1]);
        c.charge_period = 2;
        c.pickup_patience = 1;
        c.connection_patience = 1;
        c.trip_duration = vec![2; 8];
        c.battery_cost = vec![0, 2, 2, 0];
        c.charger_counts = vec![1, 0];
        c.trip_reward = vec![0.0, 0.0, 10.0, 12.5, 10.0, 10.0, 0.0, 0.0];
        c.reposition_reward = vec![0.0, 0.0, -2.0, -2.0, -2.0, -2.0, 0.0, 0.0];
        c.charge_reward = vec![-1.0, -1.0];
        c.validate().unwrap();
        c
    }

    fn state_with(c: &NetworkConfig, vehicles: &[(VehicleStatus, u32)]) -> SystemState {
        let mut s = SystemState::empty(c, 0);
        for &(v, n) in vehicles {
            s.add_vehicles(v, n);
        }
        s.chargers[SystemState::charger_index(c, 0, 0, 0)] = c.chargers(0, 0);
        s
    }

    #[test]
    fn empty_battery_idle_only_passes() {
        let c = cfg();
        let v = VehicleStatus::new(0, 0, 0);
        let mut s = state_with(&c, &[(v, 1)]);
        s.chargers.iter_mut().for_each(|x| *x = 0);
        let mut c2 = c.clone();
        c2.charger_counts = vec![0, 0];
        assert_eq!(feasible_atomic_actions(&c2, &s, v).unwrap(), vec![AtomicAction::Pass]);
    }

    #[test]
    fn far_vehicle_only_passes() {
        let c = cfg();
        let v = VehicleStatus::new(0, c.pickup_patience + 1, c.battery_capacity);
        let mut s = state_with(&c, &[(v, 1)]);
        s.trips[SystemState::trip_index(&c, 0, 1, 0)] = 3;
        assert_eq!(feasible_atomic_actions(&c, &s, v).unwrap(), vec![AtomicAction::Pass]);
    }

    #[test]
    fn all_four_kinds_when_everything_available() {
        let c = cfg();
        let v = VehicleStatus::new(0, 0, 3);
        let mut s = state_with(&c, &[(v, 1)]);
        s.trips[SystemState::trip_index(&c, 0, 1, 0)] = 1;
        let got = feasible_atomic_actions(&c, &s, v).unwrap();
        assert_eq!(
            got,
            vec![
                AtomicAction::Fulfill(TripStatus::new(0, 1, 0)),
                AtomicAction::Reposition(1),
                AtomicAction::Charge(0),
                AtomicAction::Pass,
            ]
        );
    }

    #[test]
    fn unknown_vehicle_is_invalid() {
        let c = cfg();
        let s = state_with(&c, &[]);
        assert!(matches!(
            feasible_atomic_actions(&c, &s, VehicleStatus::new(0, 0, 0)),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn epoch_reward_sums_components() {
        let mut c = cfg();
        let i = c.uvt(0, 1, 0);
        c.trip_reward[i] = 10.0;
        let a = VehicleStatus::new(0, 0, 5);
        let mut act = FleetAction::default();
        act.record(a, AtomicAction::Fulfill(TripStatus::new(0, 1, 0)));
        act.record(a, AtomicAction::Reposition(1));
        act.record(a, AtomicAction::Charge(0));
        act.record(a, AtomicAction::Pass);
        assert_eq!(epoch_reward(&c, &act, 0), 7.0);
        assert_eq!(epoch_reward(&c, &act.scaled(2), 0), 14.0);
        let s = state_with(&c, &[(a, 3)]);
        assert_eq!(epoch_reward(&c, &FleetAction::all_pass(&s), 0), 0.0);
    }

    #[test]
    fn atomic_reward_indexed_by_assignment_time() {
        let c = cfg();
        let v = VehicleStatus::new(0, 0, 5);
        for age in 0..=1 {
            let r = atomic_reward(&c, v, AtomicAction::Fulfill(TripStatus::new(0, 1, age)), 1).unwrap();
            assert_eq!(r, 12.5);
        }
        assert_eq!(atomic_reward(&c, v, AtomicAction::Pass, 0).unwrap(), 0.0);
        let low = VehicleStatus::new(0, 0, 1);
        assert!(atomic_reward(&c, low, AtomicAction::Reposition(1), 0).is_err());
    }

    #[test]
    fn fleet_checker_rejects_oversubscribed_charger() {
        let c = cfg();
        let v = VehicleStatus::new(0, 0, 3);
        let s = state_with(&c, &[(v, 2)]);
        let mut act = FleetAction::default();
        act.record(v, AtomicAction::Charge(0));
        act.record(v, AtomicAction::Pass);
        check_fleet_action(&c, &s, &act).unwrap();
        act.record(v, AtomicAction::Charge(0));
        assert!(check_fleet_action(&c, &s, &act).is_err());
    }
}
