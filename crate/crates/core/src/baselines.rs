//! Benchmark dispatch policies and an exact relative-value-iteration
//! oracle for tiny instances.

use std::collections::{BTreeMap, HashMap, VecDeque};

use rand::Rng;
use serde::Serialize;

use crate::config::NetworkConfig;
use crate::error::{Error, Result};
use crate::model::{feasible_atomic_actions, AtomicAction, FleetAction, SystemState, TripStatus, VehicleStatus};
use crate::sim::{initial_state, step, AtomicContext, Decision, Dispatcher, Policy, SimRng};

/// Hands out pre-planned actions by vehicle status. Vehicles without a plan
/// or whose plan has become infeasible pass.
pub struct PlanDispatcher {
    queues: BTreeMap<VehicleStatus, VecDeque<AtomicAction>>,
}

impl PlanDispatcher {
    pub fn new(plan: &FleetAction) -> Self {
        let mut queues: BTreeMap<VehicleStatus, VecDeque<AtomicAction>> = BTreeMap::new();
        let mut push = |s: VehicleStatus, a: AtomicAction, n: u32| {
            let q = queues.entry(s).or_default();
            q.extend(std::iter::repeat(a).take(n as usize));
        };
        for (&(s, o), &n) in &plan.fulfill {
            push(s, AtomicAction::Fulfill(o), n);
        }
        for (&(s, v), &n) in &plan.reposition {
            push(s, AtomicAction::Reposition(v), n);
        }
        for (&(s, k), &n) in &plan.charge {
            push(s, AtomicAction::Charge(k), n);
        }
        Self { queues }
    }
}

impl Dispatcher for PlanDispatcher {
    fn decide(&mut self, ctx: &AtomicContext<'_>, _rng: &mut SimRng) -> Decision {
        let planned = self.queues.get_mut(&ctx.vehicle).and_then(|q| q.pop_front());
        match planned {
            Some(a) if ctx.feasible.contains(&a) => Decision::certain(a),
            _ => Decision::certain(AtomicAction::Pass),
        }
    }
}

/// Power-of-k dispatch: each waiting order, oldest first, looks at the `k`
/// closest vehicles in its origin region and takes the one with the most
/// battery, provided it can make the trip. Idle vehicles that are not full
/// charge at the fastest free charger in their region, or head to the
/// nearest region with chargers when theirs has none.
#[derive(Debug, Clone)]
pub struct PowerOfK {
    pub k: usize,
}

impl PowerOfK {
    pub fn new(k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::InvalidArgument("power-of-k needs k >= 1".into()));
        }
        Ok(Self { k })
    }

    pub fn plan(&self, cfg: &NetworkConfig, state: &SystemState) -> FleetAction {
        let t = state.time;
        let nv = cfg.num_regions();
        let mut free = state.vehicles.clone();
        let mut action = FleetAction::default();
        let take = |free: &mut BTreeMap<VehicleStatus, u32>, s: VehicleStatus| {
            let n = free.get_mut(&s).expect("status present");
            *n -= 1;
            if *n == 0 {
                free.remove(&s);
            }
        };
        for age in (0..=cfg.connection_patience).rev() {
            for u in 0..nv {
                for v in 0..nv {
                    let trip = TripStatus::new(u, v, age);
                    for _ in 0..state.trip_count(cfg, trip) {
                        let mut near: Vec<VehicleStatus> = free
                            .iter()
                            .filter(|(s, _)| s.region() == u && u32::from(s.eta) <= cfg.pickup_patience)
                            .flat_map(|(s, &n)| std::iter::repeat(*s).take(n as usize))
                            .collect();
                        near.sort_by_key(|s| s.assignment_key());
                        near.truncate(self.k);
                        let pick = near
                            .iter()
                            .filter(|s| u32::from(s.battery) >= cfg.bcost(u, v))
                            .min_by_key(|s| (std::cmp::Reverse(s.battery), s.eta));
                        if let Some(&s) = pick {
                            take(&mut free, s);
                            action.record(s, AtomicAction::Fulfill(trip));
                        }
                    }
                }
            }
        }
        let mut chargers: Vec<u32> = (0..nv)
            .flat_map(|v| (0..cfg.num_rates()).map(move |k| (v, k)))
            .map(|(v, k)| state.available_chargers(cfg, v, k))
            .collect();
        let mut rates: Vec<usize> = (0..cfg.num_rates()).collect();
        rates.sort_by_key(|&k| (std::cmp::Reverse(cfg.charge_rates[k]), k));
        let has_chargers = |v: usize| (0..cfg.num_rates()).any(|k| cfg.chargers(v, k) > 0);
        for (&s, &n) in &free {
            for _ in 0..n {
                let u = s.region();
                if s.eta != 0 || u32::from(s.battery) >= cfg.battery_capacity {
                    continue;
                }
                if let Some(&k) = rates.iter().find(|&&k| chargers[u * cfg.num_rates() + k] > 0) {
                    chargers[u * cfg.num_rates() + k] -= 1;
                    action.record(s, AtomicAction::Charge(k as u16));
                } else if !has_chargers(u) {
                    let target = (0..nv)
                        .filter(|&w| w != u && has_chargers(w) && u32::from(s.battery) >= cfg.bcost(u, w))
                        .min_by_key(|&w| (cfg.duration(u, w, t), w));
                    if let Some(w) = target {
                        action.record(s, AtomicAction::Reposition(w as u16));
                    }
                }
            }
        }
        action
    }
}

impl Policy for PowerOfK {
    fn name(&self) -> String {
        format!("power-of-{}", self.k)
    }

    fn start_epoch<'a>(&'a self, cfg: &'a NetworkConfig, state: &SystemState, _rng: &mut SimRng) -> Box<dyn Dispatcher + 'a> {
        Box::new(PlanDispatcher::new(&self.plan(cfg, state)))
    }
}

/// Uniform over the feasible atomic actions of each vehicle.
#[derive(Debug, Clone, Copy, Default)]
pub struct RandomFeasible;

struct RandomDispatcher;

impl Dispatcher for RandomDispatcher {
    fn decide(&mut self, ctx: &AtomicContext<'_>, rng: &mut SimRng) -> Decision {
        let n = ctx.feasible.len();
        Decision {
            action: ctx.feasible[rng.gen_range(0..n)],
            prob: 1.0 / n as f64,
        }
    }
}

impl Policy for RandomFeasible {
    fn name(&self) -> String {
        "random".into()
    }

    fn start_epoch<'a>(&'a self, _: &'a NetworkConfig, _: &SystemState, _: &mut SimRng) -> Box<dyn Dispatcher + 'a> {
        Box::new(RandomDispatcher)
    }
}

/// Every vehicle passes every epoch.
#[derive(Debug, Clone, Copy, Default)]
pub struct AlwaysPass;

struct PassDispatcher;

impl Dispatcher for PassDispatcher {
    fn decide(&mut self, _: &AtomicContext<'_>, _: &mut SimRng) -> Decision {
        Decision::certain(AtomicAction::Pass)
    }
}

impl Policy for AlwaysPass {
    fn name(&self) -> String {
        "pass".into()
    }

    fn start_epoch<'a>(&'a self, _: &'a NetworkConfig, _: &SystemState, _: &mut SimRng) -> Box<dyn Dispatcher + 'a> {
        Box::new(PassDispatcher)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ViOptions {
    pub max_states: usize,
    /// Arrivals per order type and epoch are truncated at this count; the
    /// Poisson tail mass is placed on the cap.
    pub arrival_cap: u32,
    /// Stop once the span of successive value differences is below this.
    pub tol: f64,
    /// Self-loop weight `1 - κ` of the aperiodicity transform.
    pub damping: f64,
    pub max_iterations: usize,
}

impl Default for ViOptions {
    fn default() -> Self {
        Self {
            max_states: 2_000_000,
            arrival_cap: 2,
            tol: 1e-8,
            damping: 0.5,
            max_iterations: 1_000_000,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ExactSolution {
    /// Optimal long-run average reward per day of the truncated MDP.
    pub gain_per_day: f64,
    pub states: usize,
    pub iterations: usize,
    pub span: f64,
    pub converged: bool,
    /// Largest probability any order type has of more than `arrival_cap`
    /// arrivals in an epoch. Truncation only removes orders, so the
    /// truncated gain is a lower bound on the true one.
    pub truncated_mass: f64,
    #[serde(skip)]
    codec: Codec,
    #[serde(skip)]
    post_index: HashMap<Box<[u8]>, u32>,
    #[serde(skip)]
    post_value: Vec<f64>,
}

impl ExactSolution {
    /// Greedy fleet action for `state` under the converged relative values,
    /// or `None` if some reachable post-decision state was never enumerated.
    pub fn action(&self, cfg: &NetworkConfig, state: &SystemState) -> Option<FleetAction> {
        let zeros = vec![0u32; cfg.num_regions() * cfg.num_regions()];
        let mut best: Option<(f64, FleetAction)> = None;
        for (r, a) in enumerate_actions(cfg, state).ok()? {
            let (post, _) = step(cfg, state, &a, &zeros).ok()?;
            let p = *self.post_index.get(&self.codec.encode(&post).ok()?)?;
            let v = r + self.post_value[p as usize];
            if best.as_ref().map_or(true, |(bv, _)| v > *bv + 1e-12) {
                best = Some((v, a));
            }
        }
        best.map(|(_, a)| a)
    }

    pub fn into_policy(self) -> ExactPolicy {
        ExactPolicy {
            solution: self,
            fallback: PowerOfK { k: 2 },
        }
    }
}

/// Greedy policy of an exact solution; states it cannot resolve fall back
/// to power-of-2.
pub struct ExactPolicy {
    solution: ExactSolution,
    fallback: PowerOfK,
}

impl Policy for ExactPolicy {
    fn name(&self) -> String {
        "exact".into()
    }

    fn start_epoch<'a>(&'a self, cfg: &'a NetworkConfig, state: &SystemState, _: &mut SimRng) -> Box<dyn Dispatcher + 'a> {
        let plan = self
            .solution
            .action(cfg, state)
            .unwrap_or_else(|| self.fallback.plan(cfg, state));
        Box::new(PlanDispatcher::new(&plan))
    }
}

/// Byte encoding of system states: time, then dense vehicle, trip and
/// charger counts.
#[derive(Debug, Clone, Default)]
struct Codec {
    statuses: Vec<VehicleStatus>,
    index: HashMap<VehicleStatus, usize>,
}

impl Codec {
    fn new(cfg: &NetworkConfig) -> Result<Self> {
        if cfg.fleet_size > 255 || cfg.trip_cap() > 255 || cfg.horizon() > 65_535 {
            return Err(Error::Unsupported("exact solver needs counts below 256".into()));
        }
        let mut statuses = Vec::new();
        for v in 0..cfg.num_regions() {
            for eta in 0..=cfg.max_eta() {
                for b in 0..=cfg.battery_capacity {
                    statuses.push(VehicleStatus::new(v, eta, b));
                }
            }
        }
        let index = statuses.iter().enumerate().map(|(i, s)| (*s, i)).collect();
        Ok(Self { statuses, index })
    }

    fn encode(&self, s: &SystemState) -> Result<Box<[u8]>> {
        let mut out = vec![0u8; 2 + self.statuses.len() + s.trips.len() + s.chargers.len()];
        out[..2].copy_from_slice(&(s.time as u16).to_le_bytes());
        for (st, &n) in &s.vehicles {
            let i = *self
                .index
                .get(st)
                .ok_or_else(|| Error::InvalidArgument(format!("vehicle status {st:?} outside the config")))?;
            out[2 + i] = n as u8;
        }
        let base = 2 + self.statuses.len();
        for (o, &x) in out[base..].iter_mut().zip(s.trips.iter().chain(&s.chargers)) {
            *o = x as u8;
        }
        Ok(out.into_boxed_slice())
    }

    fn decode(&self, cfg: &NetworkConfig, key: &[u8]) -> SystemState {
        let mut s = SystemState::empty(cfg, usize::from(u16::from_le_bytes([key[0], key[1]])));
        for (i, &n) in key[2..2 + self.statuses.len()].iter().enumerate() {
            if n > 0 {
                s.vehicles.insert(self.statuses[i], u32::from(n));
            }
        }
        let rest = &key[2 + self.statuses.len()..];
        let nt = s.trips.len();
        for (d, &x) in s.trips.iter_mut().zip(&rest[..nt]) {
            *d = u32::from(x);
        }
        for (d, &x) in s.chargers.iter_mut().zip(&rest[nt..]) {
            *d = u32::from(x);
        }
        s
    }
}

/// Truncated joint arrival distribution for one time of day.
fn arrival_outcomes(cfg: &NetworkConfig, t: usize, cap: u32) -> (Vec<(f64, Vec<u32>)>, f64) {
    let nv = cfg.num_regions();
    let mut out = vec![(1.0, vec![0u32; nv * nv])];
    let mut worst_tail: f64 = 0.0;
    for u in 0..nv {
        for v in 0..nv {
            let lam = cfg.lambda(u, v, t);
            if lam <= 0.0 {
                continue;
            }
            let mut pmf = Vec::with_capacity(cap as usize + 1);
            let mut p = (-lam).exp();
            for k in 0..cap {
                pmf.push(p);
                p *= lam / f64::from(k + 1);
            }
            let tail = (1.0 - pmf.iter().sum::<f64>()).max(0.0);
            worst_tail = worst_tail.max(tail - p);
            pmf.push(tail);
            out = out
                .into_iter()
                .flat_map(|(q, a)| {
                    pmf.iter().enumerate().filter(|(_, &p)| p > 0.0).map(move |(k, &p)| {
                        let mut a = a.clone();
                        a[u * nv + v] = k as u32;
                        (q * p, a)
                    })
                })
                .collect();
        }
    }
    (out, worst_tail)
}

/// All fleet actions reachable by sequential assignment, paired with their
/// reward. Identical vehicles take actions in nondecreasing order so each
/// multiset is produced once.
fn enumerate_actions(cfg: &NetworkConfig, state: &SystemState) -> Result<Vec<(f64, FleetAction)>> {
    let mut order: Vec<VehicleStatus> = state
        .vehicles
        .iter()
        .flat_map(|(s, &n)| std::iter::repeat(*s).take(n as usize))
        .collect();
    order.sort_by_key(|s| s.assignment_key());
    let mut out = Vec::new();
    let mut remaining = state.clone();
    let mut action = FleetAction::default();
    recurse(cfg, &order, 0, None, &mut remaining, &mut action, 0.0, &mut out)?;
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
fn recurse(
    cfg: &NetworkConfig,
    order: &[VehicleStatus],
    n: usize,
    prev: Option<AtomicAction>,
    remaining: &mut SystemState,
    action: &mut FleetAction,
    reward: f64,
    out: &mut Vec<(f64, FleetAction)>,
) -> Result<()> {
    if n == order.len() {
        out.push((reward, action.clone()));
        return Ok(());
    }
    let s = order[n];
    let t = remaining.time;
    let same_as_prev = n > 0 && order[n - 1] == s;
    for a in feasible_atomic_actions(cfg, remaining, s)? {
        if same_as_prev && prev.is_some_and(|p| a < p) {
            continue;
        }
        let r = crate::model::atomic_reward(cfg, s, a, t)?;
        remaining.remove_vehicles(s, 1)?;
        match a {
            AtomicAction::Fulfill(o) => {
                remaining.trips[SystemState::trip_index(cfg, o.origin as usize, o.dest as usize, o.age as usize)] -= 1
            }
            AtomicAction::Charge(k) => {
                remaining.chargers[SystemState::charger_index(cfg, s.region(), k as usize, 0)] -= 1
            }
            _ => {}
        }
        action.record(s, a);
        recurse(cfg, order, n + 1, Some(a), remaining, action, reward + r, out)?;
        unrecord(action, s, a);
        match a {
            AtomicAction::Fulfill(o) => {
                remaining.trips[SystemState::trip_index(cfg, o.origin as usize, o.dest as usize, o.age as usize)] += 1
            }
            AtomicAction::Charge(k) => {
                remaining.chargers[SystemState::charger_index(cfg, s.region(), k as usize, 0)] += 1
            }
            _ => {}
        }
        remaining.add_vehicles(s, 1);
    }
    Ok(())
}

fn unrecord(action: &mut FleetAction, s: VehicleStatus, a: AtomicAction) {
    fn dec<K: Ord>(m: &mut BTreeMap<K, u32>, k: K) {
        if let Some(n) = m.get_mut(&k) {
            *n -= 1;
            if *n == 0 {
                m.remove(&k);
            }
        }
    }
    match a {
        AtomicAction::Fulfill(o) => dec(&mut action.fulfill, (s, o)),
        AtomicAction::Reposition(v) => dec(&mut action.reposition, (s, v)),
        AtomicAction::Charge(k) => dec(&mut action.charge, (s, k)),
        AtomicAction::Pass => dec(&mut action.pass, s),
    }
}

pub fn exact_value_iteration(cfg: &NetworkConfig) -> Result<ExactSolution> {
    exact_value_iteration_from(cfg, &initial_state(cfg), ViOptions::default())
}

/// Relative value iteration over the states reachable from `initial`,
/// on the aperiodic transform `(1 - κ) I + κ P` of the per-epoch chain.
pub fn exact_value_iteration_from(cfg: &NetworkConfig, initial: &SystemState, opts: ViOptions) -> Result<ExactSolution> {
    cfg.validate()?;
    if !(opts.damping > 0.0 && opts.damping < 1.0) || opts.arrival_cap == 0 {
        return Err(Error::InvalidArgument("damping must be in (0, 1) and arrival_cap >= 1".into()));
    }
    let horizon = cfg.horizon();
    let mut truncated_mass: f64 = 0.0;
    let outcomes: Vec<Vec<(f64, Vec<u32>)>> = (0..horizon)
        .map(|t| {
            let (o, tail) = arrival_outcomes(cfg, t, opts.arrival_cap);
            truncated_mass = truncated_mass.max(tail);
            o
        })
        .collect();
    let zeros = vec![0u32; cfg.num_regions() * cfg.num_regions()];
    let cap = cfg.trip_cap();
    let ages = cfg.connection_patience as usize + 1;
    let codec = Codec::new(cfg)?;

    let first = codec.encode(initial)?;
    let mut states: Vec<Box<[u8]>> = vec![first.clone()];
    let mut index: HashMap<Box<[u8]>, u32> = HashMap::from([(first, 0)]);
    let mut post_index: HashMap<Box<[u8]>, u32> = HashMap::new();
    // transition lists, flattened: post p owns entries post_start[p]..post_start[p+1]
    let mut post_start: Vec<usize> = vec![0];
    let mut post_prob: Vec<f64> = Vec::new();
    let mut post_next: Vec<u32> = Vec::new();
    // best reward per (state, post), flattened the same way
    let mut choice_start: Vec<usize> = vec![0];
    let mut choice_reward: Vec<f64> = Vec::new();
    let mut choice_post: Vec<u32> = Vec::new();
    let mut cursor = 0;
    while cursor < states.len() {
        let s = codec.decode(cfg, &states[cursor]);
        cursor += 1;
        let mut best_by_post: BTreeMap<u32, f64> = BTreeMap::new();
        for (r, a) in enumerate_actions(cfg, &s)? {
            let (post, _) = step(cfg, &s, &a, &zeros)?;
            let key = codec.encode(&post)?;
            let p = match post_index.get(&key) {
                Some(&p) => p,
                None => {
                    let mut dist: BTreeMap<u32, f64> = BTreeMap::new();
                    for (q, arr) in &outcomes[post.time] {
                        let mut next = post.clone();
                        for (uv, &k) in arr.iter().enumerate() {
                            next.trips[uv * ages] = k.min(cap);
                        }
                        let nk = codec.encode(&next)?;
                        let id = match index.get(&nk) {
                            Some(&id) => id,
                            None => {
                                if states.len() >= opts.max_states {
                                    return Err(Error::StateSpaceTooLarge {
                                        estimate: states.len() as u64 + 1,
                                        limit: opts.max_states as u64,
                                    });
                                }
                                let id = states.len() as u32;
                                index.insert(nk.clone(), id);
                                states.push(nk);
                                id
                            }
                        };
                        *dist.entry(id).or_insert(0.0) += q;
                    }
                    for (id, q) in dist {
                        post_next.push(id);
                        post_prob.push(q);
                    }
                    post_start.push(post_next.len());
                    let p = post_index.len() as u32;
                    post_index.insert(key, p);
                    p
                }
            };
            let e = best_by_post.entry(p).or_insert(f64::NEG_INFINITY);
            *e = e.max(r);
        }
        for (p, r) in best_by_post {
            choice_post.push(p);
            choice_reward.push(r);
        }
        choice_start.push(choice_post.len());
    }
    drop(index);
    drop(states);

    let kappa = 1.0 - opts.damping;
    let n = choice_start.len() - 1;
    let num_posts = post_start.len() - 1;
    let mut h = vec![0.0; n];
    let mut post_value = vec![0.0; num_posts];
    let mut next_h = vec![0.0; n];
    let expect = |h: &[f64], pv: &mut [f64]| {
        for (p, v) in pv.iter_mut().enumerate() {
            let r = post_start[p]..post_start[p + 1];
            *v = post_prob[r.clone()].iter().zip(&post_next[r]).map(|(q, &id)| q * h[id as usize]).sum();
        }
    };
    let (mut span, mut gain, mut iterations, mut converged) = (f64::INFINITY, 0.0, 0, false);
    while iterations < opts.max_iterations {
        iterations += 1;
        expect(&h, &mut post_value);
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for i in 0..n {
            let r = choice_start[i]..choice_start[i + 1];
            let best = choice_reward[r.clone()]
                .iter()
                .zip(&choice_post[r])
                .map(|(r, &p)| r + post_value[p as usize])
                .fold(f64::NEG_INFINITY, f64::max);
            let updated = opts.damping * h[i] + kappa * best;
            let diff = updated - h[i];
            lo = lo.min(diff);
            hi = hi.max(diff);
            next_h[i] = updated;
        }
        let anchor = next_h[0];
        for (x, y) in h.iter_mut().zip(&next_h) {
            *x = y - anchor;
        }
        span = hi - lo;
        gain = 0.5 * (hi + lo) / kappa;
        if span < opts.tol {
            converged = true;
            break;
        }
    }
    expect(&h, &mut post_value);
    Ok(ExactSolution {
        gain_per_day: gain * horizon as f64,
        states: n,
        iterations,
        span,
        converged,
        truncated_mass,
        codec,
        post_index,
        post_value,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::VehicleStatus;
    use crate::sim::{run_trajectory, RngStream, TraceLevel};
    use rand::SeedableRng;

    fn tiny() -> NetworkConfig {
        let mut c = NetworkConfig::blank(2, 2, 1, 2, vec![1]);
        c.charger_counts = vec![1, 0];
        c.battery_cost = vec![0, 1, 1, 0];
        for t in 0..2 {
            let i = c.uvt(0, 1, t);
            c.arrival_rate[i] = 0.7;
            c.trip_reward[i] = 4.0;
            let i = c.uvt(1, 0, t);
            c.arrival_rate[i] = 0.3;
            c.trip_reward[i] = 2.0;
        }
        c.charge_reward = vec![-0.1, -0.1];
        c.validate().unwrap();
        c
    }

    fn ctx_state(cfg: &NetworkConfig) -> SystemState {
        let mut s = SystemState::empty(cfg, 0);
        s.trips[SystemState::trip_index(cfg, 0, 1, 0)] = 1;
        s
    }

    #[test]
    fn power_of_k_prefers_battery_among_closest() {
        let mut c = NetworkConfig::blank(2, 1, 3, 6, vec![1]);
        c.pickup_patience = 1;
        c.trip_duration = vec![2; 4];
        c.charge_period = 2;
        c.battery_cost = vec![0, 2, 2, 0];
        let mut s = ctx_state(&c);
        s.add_vehicles(VehicleStatus::new(0, 0, 3), 1);
        s.add_vehicles(VehicleStatus::new(0, 1, 5), 1);
        s.add_vehicles(VehicleStatus::new(0, 1, 1), 1);
        let plan = PowerOfK::new(2).unwrap().plan(&c, &s);
        let trip = TripStatus::new(0, 1, 0);
        assert_eq!(plan.fulfill.get(&(VehicleStatus::new(0, 1, 5), trip)), Some(&1));
        // k = 1 only sees the idle vehicle with battery 3
        let plan = PowerOfK::new(1).unwrap().plan(&c, &s);
        assert_eq!(plan.fulfill.get(&(VehicleStatus::new(0, 0, 3), trip)), Some(&1));
    }

    #[test]
    fn power_of_k_skips_vehicles_without_range() {
        let mut c = NetworkConfig::blank(2, 1, 2, 6, vec![1]);
        c.battery_cost = vec![0, 4, 4, 0];
        let mut s = ctx_state(&c);
        s.add_vehicles(VehicleStatus::new(0, 0, 3), 2);
        let plan = PowerOfK::new(2).unwrap().plan(&c, &s);
        assert!(plan.fulfill.is_empty());
        assert!(PowerOfK::new(0).is_err());
    }

    #[test]
    fn power_of_k_charges_or_seeks_chargers() {
        let mut c = NetworkConfig::blank(3, 1, 2, 6, vec![1, 3]);
        c.charger_counts = vec![0, 0, 1, 1, 1, 0];
        c.trip_duration = vec![1, 3, 1, 3, 1, 2, 1, 2, 1];
        let mut s = initial_state(&c);
        s.vehicles.clear();
        s.add_vehicles(VehicleStatus::new(0, 0, 2), 1);
        s.add_vehicles(VehicleStatus::new(1, 0, 2), 1);
        let plan = PowerOfK::new(2).unwrap().plan(&c, &s);
        assert_eq!(plan.charge.get(&(VehicleStatus::new(1, 0, 2), 1)), Some(&1));
        assert_eq!(plan.reposition.get(&(VehicleStatus::new(0, 0, 2), 2)), Some(&1));
    }

    #[test]
    fn random_policy_is_uniform_over_feasible() {
        let c = tiny();
        let mut s = initial_state(&c);
        s.trips[SystemState::trip_index(&c, 0, 1, 0)] = 1;
        let v = VehicleStatus::new(0, 0, 1);
        let feasible = feasible_atomic_actions(&c, &s, v).unwrap();
        assert_eq!(feasible.len(), 4);
        let ctx = AtomicContext {
            cfg: &c,
            remaining: &s,
            vehicle: v,
            feasible: &feasible,
            observation: None,
            step: 0,
        };
        let mut rng = SimRng::seed_from_u64(3);
        let mut d = RandomFeasible.start_epoch(&c, &s, &mut rng);
        let draws = 10_000;
        let mut counts = vec![0usize; feasible.len()];
        for _ in 0..draws {
            let dec = d.decide(&ctx, &mut rng);
            assert_eq!(dec.prob, 0.25);
            counts[feasible.iter().position(|a| *a == dec.action).unwrap()] += 1;
        }
        let expect = draws as f64 / 4.0;
        let chi2: f64 = counts.iter().map(|&n| (n as f64 - expect).powi(2) / expect).sum();
        // 99.9% quantile of chi-square with 3 degrees of freedom
        assert!(chi2 < 16.27, "{counts:?}");
    }

    #[test]
    fn zero_reward_gain_is_zero() {
        let mut c = tiny();
        c.trip_reward.iter_mut().for_each(|r| *r = 0.0);
        c.charge_reward = vec![0.0, 0.0];
        let sol = exact_value_iteration(&c).unwrap();
        assert!(sol.converged);
        assert!(sol.gain_per_day.abs() < 1e-9);
    }

    #[test]
    fn single_daily_trip_earns_its_reward() {
        let mut c = NetworkConfig::blank(2, 4, 1, 1, vec![1]);
        let i = c.uvt(0, 1, 0);
        c.arrival_rate[i] = 40.0;
        c.trip_reward[i] = 10.0;
        c.validate().unwrap();
        let sol = exact_value_iteration(&c).unwrap();
        assert!(sol.converged);
        assert!((sol.gain_per_day - 10.0).abs() < 1e-6, "{}", sol.gain_per_day);
    }

    #[test]
    fn gain_does_not_depend_on_start() {
        let c = tiny();
        let a = exact_value_iteration(&c).unwrap();
        let mut other = initial_state(&c);
        other.vehicles.clear();
        other.add_vehicles(VehicleStatus::new(1, 0, 2), 1);
        let b = exact_value_iteration_from(&c, &other, ViOptions::default()).unwrap();
        assert!(a.gain_per_day > 0.0);
        assert!((a.gain_per_day - b.gain_per_day).abs() < 1e-6);
        assert!(a.truncated_mass > 0.0 && a.truncated_mass < 0.05);
    }

    #[test]
    fn refuses_large_state_spaces() {
        let c = tiny();
        let opts = ViOptions {
            max_states: 3,
            ..ViOptions::default()
        };
        assert!(matches!(
            exact_value_iteration_from(&c, &initial_state(&c), opts),
            Err(Error::StateSpaceTooLarge { limit: 3, .. })
        ));
    }

    #[test]
    fn exact_policy_beats_pass_and_runs() {
        let c = tiny();
        let sol = exact_value_iteration(&c).unwrap();
        let gain = sol.gain_per_day;
        let policy = sol.into_policy();
        let stream = RngStream::new(5, 0);
        let tr = run_trajectory(&c, &initial_state(&c), &policy, 200, stream, TraceLevel::Summary).unwrap();
        let pass = run_trajectory(&c, &initial_state(&c), &AlwaysPass, 200, stream, TraceLevel::Summary).unwrap();
        assert_eq!(pass.total_reward(), 0.0);
        assert!(tr.mean_daily_reward() > 0.5 * gain);
    }
}
