//! Fixed-width observation vectors for the policy and value networks.
//!
//! Battery levels collapse into three classes, remaining times into three
//! buckets (`0`, `1..=L_p`, `>L_p`), and queued trips into per-region origin
//! and destination totals. Vehicle counts and charger counts are divided by
//! the fleet size; trip counts by the largest per-epoch total arrival rate.

use serde::Serialize;

use crate::config::NetworkConfig;
use crate::model::{AtomicAction, SystemState, TripStatus, VehicleStatus};

pub const BATTERY_CLASSES: usize = 3;
pub const ETA_BUCKETS: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ObservationLayout {
    pub regions: usize,
    pub rates: usize,
    pub horizon: usize,
    pub pickup_patience: u32,
    pub battery_capacity: u32,
    pub max_eta: u32,
    /// Battery class cutoffs in percent of capacity: `[low_below, high_from]`.
    pub cutoffs_pct: [f64; 2],
    pub fleet_size: f64,
    pub demand_scale: f64,
}

impl ObservationLayout {
    pub fn new(cfg: &NetworkConfig) -> Self {
        Self::with_cutoffs(cfg, [10.0, 40.0])
    }

    pub fn with_cutoffs(cfg: &NetworkConfig, cutoffs_pct: [f64; 2]) -> Self {
        let mut demand_scale: f64 = 1.0;
        for t in 0..cfg.horizon() {
            let mut tot = 0.0;
            for u in 0..cfg.num_regions() {
                for v in 0..cfg.num_regions() {
                    tot += cfg.lambda(u, v, t);
                }
            }
            demand_scale = demand_scale.max(tot);
        }
        Self {
            regions: cfg.num_regions(),
            rates: cfg.num_rates(),
            horizon: cfg.horizon(),
            pickup_patience: cfg.pickup_patience,
            battery_capacity: cfg.battery_capacity,
            max_eta: cfg.max_eta(),
            cutoffs_pct,
            fleet_size: f64::from(cfg.fleet_size),
            demand_scale,
        }
    }

    pub fn battery_class(&self, battery: u16) -> usize {
        let pct = f64::from(battery) * 100.0 / f64::from(self.battery_capacity);
        if pct < self.cutoffs_pct[0] {
            0
        } else if pct < self.cutoffs_pct[1] {
            1
        } else {
            2
        }
    }

    pub fn eta_bucket(&self, eta: u16) -> usize {
        if eta == 0 {
            0
        } else if u32::from(eta) <= self.pickup_patience {
            1
        } else {
            2
        }
    }

    // offsets
    fn fleet_offset(&self) -> usize {
        2
    }
    fn origin_offset(&self) -> usize {
        self.fleet_offset() + self.regions * ETA_BUCKETS * BATTERY_CLASSES
    }
    fn dest_offset(&self) -> usize {
        self.origin_offset() + self.regions
    }
    fn charger_offset(&self) -> usize {
        self.dest_offset() + self.regions
    }

    /// Observation width: time, assigned fraction, fleet cells, trip origins,
    /// trip destinations, available chargers.
    pub fn dim(&self) -> usize {
        self.charger_offset() + self.regions * self.rates
    }

    pub fn fleet_slot(&self, s: &VehicleStatus) -> usize {
        self.fleet_offset()
            + (s.region() * ETA_BUCKETS + self.eta_bucket(s.eta)) * BATTERY_CLASSES
            + self.battery_class(s.battery)
    }

    pub fn vehicle_dim(&self) -> usize {
        self.regions + 1 + BATTERY_CLASSES + 1
    }

    /// Slot names and offsets, written next to trained models.
    pub fn manifest(&self) -> serde_json::Value {
        let mut slots = vec![
            serde_json::json!({"name": "time_of_day", "offset": 0}),
            serde_json::json!({"name": "assigned_fraction", "offset": 1}),
        ];
        let classes = ["low", "med", "high"];
        let etas = ["idle", "within_pickup", "beyond_pickup"];
        for v in 0..self.regions {
            for (e, en) in etas.iter().enumerate() {
                for (c, cn) in classes.iter().enumerate() {
                    slots.push(serde_json::json!({
                        "name": format!("fleet[r{v}][{en}][{cn}]"),
                        "offset": self.fleet_offset() + (v * ETA_BUCKETS + e) * BATTERY_CLASSES + c
                    }));
                }
            }
        }
        for v in 0..self.regions {
            slots.push(serde_json::json!({"name": format!("trip_origin[r{v}]"), "offset": self.origin_offset() + v}));
        }
        for v in 0..self.regions {
            slots.push(serde_json::json!({"name": format!("trip_dest[r{v}]"), "offset": self.dest_offset() + v}));
        }
        for v in 0..self.regions {
            for k in 0..self.rates {
                slots.push(serde_json::json!({
                    "name": format!("chargers_free[r{v}][k{k}]"),
                    "offset": self.charger_offset() + v * self.rates + k
                }));
            }
        }
        serde_json::json!({
            "observation_dim": self.dim(),
            "vehicle_dim": self.vehicle_dim(),
            "action_slots": ActionSlots::new(self.regions, self.rates).len(),
            "layout": self,
            "slots": slots,
        })
    }
}

/// Reduced observation of a (possibly intra-epoch) state.
#[derive(Debug, Clone, PartialEq)]
pub struct ReducedObservation {
    pub values: Vec<f64>,
}

/// Pure reduction of `state`. `assigned` is the number of vehicles already
/// handled in the current epoch (0 at epoch start).
pub fn reduce_state(layout: &ObservationLayout, cfg: &NetworkConfig, state: &SystemState, assigned: u32) -> ReducedObservation {
    let mut x = vec![0.0; layout.dim()];
    x[0] = state.time as f64 / layout.horizon as f64;
    x[1] = f64::from(assigned) / layout.fleet_size;
    for (s, &n) in &state.vehicles {
        x[layout.fleet_slot(s)] += f64::from(n) / layout.fleet_size;
    }
    let ages = cfg.connection_patience as usize + 1;
    for u in 0..layout.regions {
        for v in 0..layout.regions {
            let base = SystemState::trip_index(cfg, u, v, 0);
            let n: u32 = state.trips[base..base + ages].iter().sum();
            let f = f64::from(n) / layout.demand_scale;
            x[layout.origin_offset() + u] += f;
            x[layout.dest_offset() + v] += f;
        }
    }
    for v in 0..layout.regions {
        for k in 0..layout.rates {
            x[layout.charger_offset() + v * layout.rates + k] =
                f64::from(state.available_chargers(cfg, v, k)) / layout.fleet_size;
        }
    }
    ReducedObservation { values: x }
}

/// Incrementally maintained observation used inside the assignment loop.
#[derive(Debug, Clone)]
pub struct ObservationTracker {
    pub values: Vec<f64>,
}

impl ObservationTracker {
    pub fn new(layout: &ObservationLayout, cfg: &NetworkConfig, state: &SystemState) -> Self {
        Self {
            values: reduce_state(layout, cfg, state, 0).values,
        }
    }

    pub fn move_vehicle(&mut self, layout: &ObservationLayout, from: &VehicleStatus, to: &VehicleStatus) {
        self.values[layout.fleet_slot(from)] -= 1.0 / layout.fleet_size;
        self.values[layout.fleet_slot(to)] += 1.0 / layout.fleet_size;
        self.values[1] += 1.0 / layout.fleet_size;
    }

    pub fn take_trip(&mut self, layout: &ObservationLayout, trip: &TripStatus) {
        self.values[layout.origin_offset() + trip.origin as usize] -= 1.0 / layout.demand_scale;
        self.values[layout.dest_offset() + trip.dest as usize] -= 1.0 / layout.demand_scale;
    }

    pub fn take_charger(&mut self, layout: &ObservationLayout, region: usize, k: usize) {
        self.values[layout.charger_offset() + region * layout.rates + k] -= 1.0 / layout.fleet_size;
    }
}

/// One-hot region, normalized η, battery-class one-hot, battery fraction.
pub fn encode_vehicle(layout: &ObservationLayout, vehicle: &VehicleStatus) -> Vec<f64> {
    let mut x = vec![0.0; layout.vehicle_dim()];
    encode_vehicle_into(layout, vehicle, &mut x);
    x
}

pub fn encode_vehicle_into(layout: &ObservationLayout, vehicle: &VehicleStatus, out: &mut [f64]) {
    out.iter_mut().for_each(|x| *x = 0.0);
    let v = layout.regions;
    out[vehicle.region()] = 1.0;
    out[v] = if layout.max_eta == 0 {
        0.0
    } else {
        f64::from(vehicle.eta) / f64::from(layout.max_eta)
    };
    out[v + 1 + layout.battery_class(vehicle.battery)] = 1.0;
    out[v + 1 + BATTERY_CLASSES] = f64::from(vehicle.battery) / f64::from(layout.battery_capacity);
}

/// The policy's fixed output space: fulfill toward each destination,
/// reposition to each region, charge at each rate, pass. A fulfill slot is
/// resolved to the oldest queued trip of that origin-destination pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ActionSlots {
    regions: usize,
    rates: usize,
}

impl ActionSlots {
    pub fn new(regions: usize, rates: usize) -> Self {
        Self { regions, rates }
    }

    pub fn for_config(cfg: &NetworkConfig) -> Self {
        Self::new(cfg.num_regions(), cfg.num_rates())
    }

    pub fn len(&self) -> usize {
        2 * self.regions + self.rates + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn pass(&self) -> usize {
        self.len() - 1
    }

    pub fn slot_of(&self, action: &AtomicAction) -> usize {
        match action {
            AtomicAction::Fulfill(o) => o.dest as usize,
            AtomicAction::Reposition(v) => self.regions + *v as usize,
            AtomicAction::Charge(k) => 2 * self.regions + *k as usize,
            AtomicAction::Pass => self.pass(),
        }
    }

    /// Feasibility mask over slots plus the concrete action for each
    /// feasible slot, derived from the feasible atomic action list.
    pub fn mask(&self, feasible: &[AtomicAction]) -> (Vec<bool>, Vec<Option<AtomicAction>>) {
        let mut mask = vec![false; self.len()];
        let mut resolved: Vec<Option<AtomicAction>> = vec![None; self.len()];
        for a in feasible {
            let s = self.slot_of(a);
            mask[s] = true;
            let replace = match (&resolved[s], a) {
                (Some(AtomicAction::Fulfill(old)), AtomicAction::Fulfill(new)) => new.age > old.age,
                (None, _) => true,
                _ => false,
            };
            if replace {
                resolved[s] = Some(*a);
            }
        }
        (mask, resolved)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> NetworkConfig {
        let mut c = NetworkConfig::blank(2, 4, 4, 100, vec![5]);
        c.pickup_patience = 1;
        c.connection_patience = 1;
        c.charge_period = 2;
        c.trip_duration = vec![3; 16];
        c.charger_counts = vec![2, 1];
        let i = c.uvt(0, 1, 2);
        c.arrival_rate[i] = 2.0;
        let i = c.uvt(1, 0, 2);
        c.arrival_rate[i] = 1.0;
        c.validate().unwrap();
        c
    }

    #[test]
    fn battery_cutoffs_at_ten_and_forty_percent() {
        let l = ObservationLayout::new(&cfg());
        assert_eq!(l.battery_class(9), 0);
        assert_eq!(l.battery_class(10), 1);
        assert_eq!(l.battery_class(39), 1);
        assert_eq!(l.battery_class(40), 2);
        assert_eq!(l.battery_class(100), 2);
    }

    #[test]
    fn empty_queue_gives_zero_trip_vectors_and_fleet_sums_to_one() {
        let c = cfg();
        let l = ObservationLayout::new(&c);
        let mut s = SystemState::empty(&c, 1);
        s.add_vehicles(VehicleStatus::new(0, 0, 50), 3);
        s.add_vehicles(VehicleStatus::new(1, 4, 5), 1);
        let x = reduce_state(&l, &c, &s, 0).values;
        assert!(x[l.origin_offset()..l.charger_offset()].iter().all(|&v| v == 0.0));
        let fleet: f64 = x[l.fleet_offset()..l.origin_offset()].iter().sum();
        assert!((fleet * 4.0 - 4.0).abs() < 1e-12);
        assert_eq!(x.len(), l.dim());
    }

    #[test]
    fn vehicle_encoding_matches_definition() {
        let c = NetworkConfig::blank(2, 1, 1, 10, vec![]);
        c.validate().unwrap();
        let l = ObservationLayout::new(&c);
        let x = encode_vehicle(&l, &VehicleStatus::new(0, 0, 0));
        assert_eq!(x, vec![1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn vehicle_encodings_in_same_class_differ_only_in_raw_battery() {
        let c = cfg();
        let l = ObservationLayout::new(&c);
        for b1 in 0..=100u32 {
            for b2 in 0..=100u32 {
                let a = encode_vehicle(&l, &VehicleStatus::new(1, 2, b1));
                let b = encode_vehicle(&l, &VehicleStatus::new(1, 2, b2));
                let diff: Vec<usize> = (0..a.len()).filter(|&i| a[i] != b[i]).collect();
                let last = l.vehicle_dim() - 1;
                if l.battery_class(b1 as u16) == l.battery_class(b2 as u16) {
                    if b1 == b2 {
                        assert!(diff.is_empty());
                    } else {
                        assert_eq!(diff, vec![last]);
                    }
                } else {
                    assert!(diff.iter().all(|&i| i >= 2 + 1));
                    assert!(diff.contains(&last));
                }
            }
        }
    }

    #[test]
    fn slot_mask_resolves_oldest_trip() {
        let slots = ActionSlots::new(2, 1);
        let feas = vec![
            AtomicAction::Fulfill(TripStatus::new(0, 1, 0)),
            AtomicAction::Fulfill(TripStatus::new(0, 1, 1)),
            AtomicAction::Pass,
        ];
        let (mask, res) = slots.mask(&feas);
        assert_eq!(mask, vec![false, true, false, false, false, true]);
        assert_eq!(res[1], Some(AtomicAction::Fulfill(TripStatus::new(0, 1, 1))));
    }
}
