//! Fluid relaxation of the fleet MDP: a periodic LP over fleet fractions
//! whose optimum bounds the long-run average daily reward of any policy,
//! a smaller equivalent LP that only tracks assignable statuses, and a
//! randomized-rounding dispatch policy built from an LP solution.

use std::collections::{BTreeMap, HashMap};

use rand::Rng;
use serde::Serialize;

use crate::config::NetworkConfig;
use crate::error::{Error, Result};
use crate::lp::{solve, LpProblem, RowKind, SolveStats, SolverOptions};
use crate::model::{AtomicAction, SystemState, TripStatus, VehicleStatus};
use crate::sim::{post_status, AtomicContext, Decision, Dispatcher, Policy, SimRng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Formulation {
    Full,
    Reduced,
}

/// How the reduced LP counts vehicles still charging in its occupancy rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ChargeWindow {
    /// Sessions started in `t-(J-1-L_p) ..= t-1`: exactly those with more
    /// than `L_p` steps left at `t`.
    Exact,
    /// Sessions started in `t-J+L_p ..= t`, as the appendix prints it.
    AsPrinted,
}

/// What an LP column stands for.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum Column {
    /// Fraction of fleet in `status` taking `action` at time `t`. In the
    /// reduced LP fulfill columns carry age 0 and aggregate over ages.
    Flow {
        t: usize,
        status: VehicleStatus,
        action: AtomicAction,
    },
    /// Reduced LP: fulfill flow of `(u, v)` from remaining time `eta` on
    /// orders of age `age`, summed over battery levels.
    TripSplit {
        t: usize,
        origin: u16,
        dest: u16,
        eta: u16,
        age: u16,
    },
}

#[derive(Debug, Clone)]
pub struct FluidLp {
    pub problem: LpProblem,
    pub columns: Vec<Column>,
    pub formulation: Formulation,
}

fn wrap(t: i64, horizon: usize) -> usize {
    t.rem_euclid(horizon as i64) as usize
}

fn require_linear(cfg: &NetworkConfig) -> Result<()> {
    if cfg.is_nonlinear() {
        return Err(Error::Unsupported(
            "the fluid LP needs linear charging; use a linearized config".into(),
        ));
    }
    Ok(())
}

/// Fleet-fraction columns available to `status` at time `t`, in the order
/// fulfill, reposition, charge, pass. Fulfill columns are omitted for
/// order types whose arrival rate is zero; charge columns for regions
/// without chargers of that rate.
fn actions_for(cfg: &NetworkConfig, t: usize, s: VehicleStatus) -> Vec<AtomicAction> {
    let mut out = Vec::new();
    let u = s.region();
    let nv = cfg.num_regions();
    let horizon = cfg.horizon();
    let b = u32::from(s.battery);
    if u32::from(s.eta) <= cfg.pickup_patience {
        for v in (0..nv).filter(|&v| v != u && b >= cfg.bcost(u, v)) {
            for age in 0..=cfg.connection_patience {
                if cfg.lambda(u, v, wrap(t as i64 - i64::from(age), horizon)) > 0.0 {
                    out.push(AtomicAction::Fulfill(TripStatus::new(u, v, age)));
                }
            }
        }
    }
    if s.eta == 0 {
        for v in (0..nv).filter(|&v| v != u && b >= cfg.bcost(u, v)) {
            out.push(AtomicAction::Reposition(v as u16));
        }
        for k in (0..cfg.num_rates()).filter(|&k| cfg.chargers(u, k) > 0) {
            out.push(AtomicAction::Charge(k as u16));
        }
    }
    out.push(AtomicAction::Pass);
    out
}

fn reward_of(cfg: &NetworkConfig, s: VehicleStatus, a: AtomicAction, t: usize) -> f64 {
    match a {
        AtomicAction::Fulfill(o) => cfg.fulfill_reward(o.origin as usize, o.dest as usize, t),
        AtomicAction::Reposition(v) => cfg.reposition_cost(s.region(), v as usize, t),
        AtomicAction::Charge(k) => cfg.charge_cost(k as usize, t),
        AtomicAction::Pass => 0.0,
    }
}

fn col_name(t: usize, s: VehicleStatus, a: AtomicAction) -> String {
    let head = format!("t{t}_v{}_e{}_b{}", s.dest, s.eta, s.battery);
    match a {
        AtomicAction::Fulfill(o) => format!("x_{head}_to{}_a{}", o.dest, o.age),
        AtomicAction::Reposition(v) => format!("y_{head}_to{v}"),
        AtomicAction::Charge(k) => format!("z_{head}_k{k}"),
        AtomicAction::Pass => format!("w_{head}"),
    }
}

/// Rows shared by both formulations: trip caps and charger caps.
struct CapRows {
    trip: BTreeMap<(usize, usize, usize), Vec<(usize, f64)>>,
    charger: BTreeMap<(usize, usize, usize), Vec<(usize, f64)>>,
}

impl CapRows {
    fn new() -> Self {
        Self {
            trip: BTreeMap::new(),
            charger: BTreeMap::new(),
        }
    }

    /// Order type `(u, v)` arriving at `t - age` served at `t`.
    fn add_trip(&mut self, cfg: &NetworkConfig, t: usize, o: TripStatus, col: usize) {
        let arrival = wrap(t as i64 - i64::from(o.age), cfg.horizon());
        self.trip
            .entry((o.origin as usize, o.dest as usize, arrival))
            .or_default()
            .push((col, 1.0));
    }

    /// A session started at `t` holds its charger through `t + J - 1`.
    fn add_charge(&mut self, cfg: &NetworkConfig, t: usize, v: usize, k: usize, col: usize) {
        for j in 0..cfg.charge_period as usize {
            self.charger
                .entry((v, k, (t + j) % cfg.horizon()))
                .or_default()
                .push((col, 1.0));
        }
    }

    fn emit(self, cfg: &NetworkConfig, p: &mut LpProblem) {
        let n = f64::from(cfg.fleet_size);
        for ((u, v, t), coeffs) in self.trip {
            p.add_row(format!("trip_u{u}_v{v}_t{t}"), RowKind::Le, cfg.lambda(u, v, t) / n, coeffs);
        }
        for ((v, k, t), coeffs) in self.charger {
            p.add_row(
                format!("chg_v{v}_k{k}_t{t}"),
                RowKind::Le,
                f64::from(cfg.chargers(v, k)) / n,
                coeffs,
            );
        }
    }
}

/// Periodic fluid LP over every vehicle status `(v, η, b)` with
/// `η ≤ max_eta`.
pub fn build_full_lp(cfg: &NetworkConfig) -> Result<FluidLp> {
    cfg.validate()?;
    require_linear(cfg)?;
    let horizon = cfg.horizon();
    let n = f64::from(cfg.fleet_size);
    let mut p = LpProblem::new("fluid");
    let mut columns = Vec::new();
    let mut statuses = Vec::new();
    for v in 0..cfg.num_regions() {
        for eta in 0..=cfg.max_eta() {
            for b in 0..=cfg.battery_capacity {
                statuses.push(VehicleStatus::new(v, eta, b));
            }
        }
    }
    let mut outflow: HashMap<(usize, VehicleStatus), Vec<usize>> = HashMap::new();
    let mut inflow: HashMap<(usize, VehicleStatus), Vec<usize>> = HashMap::new();
    let mut by_time: Vec<Vec<usize>> = vec![Vec::new(); horizon];
    let mut caps = CapRows::new();
    for t in 0..horizon {
        for &s in &statuses {
            for a in actions_for(cfg, t, s) {
                let j = p.add_col(col_name(t, s, a), n * reward_of(cfg, s, a, t))?;
                columns.push(Column::Flow { t, status: s, action: a });
                outflow.entry((t, s)).or_default().push(j);
                inflow
                    .entry(((t + 1) % horizon, post_status(cfg, s, a, t)))
                    .or_default()
                    .push(j);
                by_time[t].push(j);
                match a {
                    AtomicAction::Fulfill(o) => caps.add_trip(cfg, t, o, j),
                    AtomicAction::Charge(k) => caps.add_charge(cfg, t, s.region(), k as usize, j),
                    _ => {}
                }
            }
        }
    }
    for t in 0..horizon {
        for &s in &statuses {
            let mut coeffs: Vec<(usize, f64)> = outflow[&(t, s)].iter().map(|&j| (j, 1.0)).collect();
            if let Some(ins) = inflow.get(&(t, s)) {
                coeffs.extend(ins.iter().map(|&j| (j, -1.0)));
            }
            p.add_row(
                format!("cons_t{t}_v{}_e{}_b{}", s.dest, s.eta, s.battery),
                RowKind::Eq,
                0.0,
                coeffs,
            );
        }
    }
    caps.emit(cfg, &mut p);
    for (t, cols) in by_time.iter().enumerate() {
        p.add_row(format!("total_t{t}"), RowKind::Eq, 1.0, cols.iter().map(|&j| (j, 1.0)).collect());
    }
    Ok(FluidLp {
        problem: p,
        columns,
        formulation: Formulation::Full,
    })
}

/// Steps from assignment until a new task is back among the tracked
/// statuses, `η ≤ L_p`.
fn landing_delay(post: VehicleStatus, lp: u32) -> u32 {
    u32::from(post.eta).saturating_sub(lp) + 1
}

/// Checks that for every origin, destination and starting remaining time,
/// assignment times map one-to-one onto landing times modulo `T`.
pub fn check_landing_bijection(cfg: &NetworkConfig) -> Result<()> {
    let horizon = cfg.horizon();
    for u in 0..cfg.num_regions() {
        for v in (0..cfg.num_regions()).filter(|&v| v != u) {
            for eta in 0..=cfg.pickup_patience {
                let mut seen = vec![false; horizon];
                for t in 0..horizon {
                    let post = (eta + cfg.duration(u, v, t)).saturating_sub(1);
                    let land = (t + landing_delay(VehicleStatus::new(v, post, 0), cfg.pickup_patience) as usize) % horizon;
                    if std::mem::replace(&mut seen[land], true) {
                        return Err(Error::Unsupported(format!(
                            "durations {u}->{v} send two assignment times to landing time {land}; \
                             the reduced LP needs a one-to-one landing map"
                        )));
                    }
                }
            }
        }
    }
    Ok(())
}

pub fn build_reduced_lp(cfg: &NetworkConfig) -> Result<FluidLp> {
    build_reduced_lp_with(cfg, ChargeWindow::Exact)
}

/// LP over statuses with `η ≤ L_p` only. Vehicles on longer tasks are
/// tracked implicitly: a new task re-enters the tracked set when it reaches
/// `η = L_p`, and the occupancy rows add the flows still in transit.
pub fn build_reduced_lp_with(cfg: &NetworkConfig, window: ChargeWindow) -> Result<FluidLp> {
    cfg.validate()?;
    require_linear(cfg)?;
    check_landing_bijection(cfg)?;
    let horizon = cfg.horizon();
    let n = f64::from(cfg.fleet_size);
    let lp = cfg.pickup_patience;
    let mut p = LpProblem::new("fluidred");
    let mut columns = Vec::new();
    let mut outflow: HashMap<(usize, VehicleStatus), Vec<usize>> = HashMap::new();
    let mut inflow: HashMap<(usize, VehicleStatus), Vec<usize>> = HashMap::new();
    let mut occupancy: Vec<Vec<(usize, f64)>> = vec![Vec::new(); horizon];
    let mut link: BTreeMap<(usize, usize, usize, u32), Vec<(usize, f64)>> = BTreeMap::new();
    let mut caps = CapRows::new();
    for t in 0..horizon {
        for u in 0..cfg.num_regions() {
            for eta in 0..=lp {
                for b in 0..=cfg.battery_capacity {
                    let s = VehicleStatus::new(u, eta, b);
                    let mut seen_pair = Vec::new();
                    for a in actions_for(cfg, t, s) {
                        let a = match a {
                            AtomicAction::Fulfill(o) if seen_pair.contains(&o.dest) => continue,
                            AtomicAction::Fulfill(o) => {
                                seen_pair.push(o.dest);
                                AtomicAction::Fulfill(TripStatus::new(u, o.dest as usize, 0))
                            }
                            other => other,
                        };
                        let obj = match a {
                            AtomicAction::Fulfill(_) => 0.0,
                            _ => n * reward_of(cfg, s, a, t),
                        };
                        let j = p.add_col(col_name(t, s, a), obj)?;
                        columns.push(Column::Flow { t, status: s, action: a });
                        outflow.entry((t, s)).or_default().push(j);
                        occupancy[t].push((j, 1.0));
                        match a {
                            AtomicAction::Pass => {
                                let next = post_status(cfg, s, a, t);
                                inflow.entry(((t + 1) % horizon, next)).or_default().push(j);
                            }
                            _ => {
                                let landed = post_status(cfg, s, a, t);
                                let delay = landing_delay(landed, lp) as usize;
                                let at = VehicleStatus::new(landed.region(), u32::from(landed.eta).min(lp), u32::from(landed.battery));
                                inflow.entry(((t + delay) % horizon, at)).or_default().push(j);
                                let span = match (a, window) {
                                    (AtomicAction::Charge(_), ChargeWindow::AsPrinted) => 0..delay + 1,
                                    _ => 1..delay,
                                };
                                for d in span {
                                    occupancy[(t + d) % horizon].push((j, 1.0));
                                }
                                match a {
                                    AtomicAction::Fulfill(o) => {
                                        link.entry((t, u, o.dest as usize, eta)).or_default().push((j, 1.0))
                                    }
                                    AtomicAction::Charge(k) => caps.add_charge(cfg, t, u, k as usize, j),
                                    _ => {}
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    // order splits by age, linked to the battery-indexed fulfill columns
    for (&(t, u, v, eta), coeffs) in link.iter_mut() {
        for age in 0..=cfg.connection_patience {
            let arrival = wrap(t as i64 - i64::from(age), horizon);
            if cfg.lambda(u, v, arrival) <= 0.0 {
                continue;
            }
            let j = p.add_col(
                format!("s_t{t}_u{u}_v{v}_e{eta}_a{age}"),
                n * cfg.fulfill_reward(u, v, t),
            )?;
            columns.push(Column::TripSplit {
                t,
                origin: u as u16,
                dest: v as u16,
                eta: eta as u16,
                age: age as u16,
            });
            coeffs.push((j, -1.0));
            caps.add_trip(cfg, t, TripStatus::new(u, v, age), j);
        }
    }
    for t in 0..horizon {
        for u in 0..cfg.num_regions() {
            for eta in 0..=lp {
                for b in 0..=cfg.battery_capacity {
                    let s = VehicleStatus::new(u, eta, b);
                    let mut coeffs: Vec<(usize, f64)> = outflow[&(t, s)].iter().map(|&j| (j, 1.0)).collect();
                    if let Some(ins) = inflow.get(&(t, s)) {
                        coeffs.extend(ins.iter().map(|&j| (j, -1.0)));
                    }
                    p.add_row(format!("cons_t{t}_v{u}_e{eta}_b{b}"), RowKind::Eq, 0.0, coeffs);
                }
            }
        }
    }
    for ((t, u, v, eta), coeffs) in link {
        p.add_row(format!("link_t{t}_u{u}_v{v}_e{eta}"), RowKind::Eq, 0.0, coeffs);
    }
    caps.emit(cfg, &mut p);
    for (t, coeffs) in occupancy.into_iter().enumerate() {
        p.add_row(format!("total_t{t}"), RowKind::Eq, 1.0, coeffs);
    }
    Ok(FluidLp {
        problem: p,
        columns,
        formulation: Formulation::Reduced,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FlowEntry {
    pub t: usize,
    pub status: VehicleStatus,
    pub action: AtomicAction,
    pub fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FluidSolution {
    /// Optimal daily reward of the fluid fleet.
    pub objective: f64,
    pub formulation: Formulation,
    pub fleet_size: u32,
    pub horizon: usize,
    pub config_hash: String,
    /// Set when the bound was computed on a linearized copy of a nonlinear
    /// charging config.
    pub indicative: bool,
    /// Positive flows; fulfill entries are split by order age.
    pub flows: Vec<FlowEntry>,
    /// Largest constraint violation of the returned point, re-evaluated
    /// from the LP rows.
    pub max_residual: f64,
    pub num_columns: usize,
    pub num_rows: usize,
    pub stats: SolveStats,
}

impl FluidSolution {
    /// Sum of flows at time `t` over statuses with `η ≤ L_p`.
    pub fn assignable_mass(&self, t: usize, pickup_patience: u32) -> f64 {
        self.flows
            .iter()
            .filter(|f| f.t == t && u32::from(f.status.eta) <= pickup_patience)
            .map(|f| f.fraction)
            .sum()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Solves a built LP and maps columns back to fleet flows.
pub fn solve_fluid(cfg: &NetworkConfig, lp: &FluidLp) -> Result<FluidSolution> {
    let sol = solve(&lp.problem, SolverOptions::default())?;
    let mut flows = Vec::new();
    let mut splits: HashMap<(usize, u16, u16, u16), Vec<(u16, f64)>> = HashMap::new();
    for (j, c) in lp.columns.iter().enumerate() {
        if let Column::TripSplit { t, origin, dest, eta, age } = *c {
            if sol.x[j] > 0.0 {
                splits.entry((t, origin, dest, eta)).or_default().push((age, sol.x[j]));
            }
        }
    }
    for (j, c) in lp.columns.iter().enumerate() {
        let v = sol.x[j];
        if v <= 0.0 {
            continue;
        }
        match *c {
            Column::Flow { t, status, action } => match (lp.formulation, action) {
                (Formulation::Reduced, AtomicAction::Fulfill(o)) => {
                    let parts = splits.get(&(t, o.origin, o.dest, status.eta)).cloned().unwrap_or_default();
                    let total: f64 = parts.iter().map(|p| p.1).sum();
                    for (age, w) in parts {
                        flows.push(FlowEntry {
                            t,
                            status,
                            action: AtomicAction::Fulfill(TripStatus { age, ..o }),
                            fraction: v * w / total,
                        });
                    }
                }
                _ => flows.push(FlowEntry {
                    t,
                    status,
                    action,
                    fraction: v,
                }),
            },
            Column::TripSplit { .. } => {}
        }
    }
    Ok(FluidSolution {
        objective: sol.objective,
        formulation: lp.formulation,
        fleet_size: cfg.fleet_size,
        horizon: cfg.horizon(),
        config_hash: cfg.hash(),
        indicative: false,
        flows,
        max_residual: lp.problem.max_violation(&sol.x),
        num_columns: lp.problem.num_cols(),
        num_rows: lp.problem.num_rows(),
        stats: sol.stats,
    })
}

/// Reduced LP when its landing map is one-to-one, otherwise the full LP.
pub fn solve_best(cfg: &NetworkConfig) -> Result<FluidSolution> {
    match build_reduced_lp(cfg) {
        Ok(lp) => solve_fluid(cfg, &lp),
        Err(Error::Unsupported(msg)) => {
            log::info!("reduced fluid LP unavailable ({msg}); solving the full LP");
            solve_fluid(cfg, &build_full_lp(cfg)?)
        }
        Err(e) => Err(e),
    }
}

/// Optimal fluid daily reward for a linear-charging config.
pub fn upper_bound(cfg: &NetworkConfig) -> Result<f64> {
    Ok(solve_best(cfg)?.objective)
}

/// Integer counts with `E[count] = n · fraction`: floor plus a Bernoulli
/// draw on the fractional part.
pub fn round_count<R: Rng + ?Sized>(n: f64, fraction: f64, rng: &mut R) -> u32 {
    let target = (n * fraction).max(0.0);
    let base = target.floor();
    let extra = if rng.gen::<f64>() < target - base { 1.0 } else { 0.0 };
    (base + extra) as u32
}

fn repair_rank(a: &AtomicAction) -> u8 {
    match a {
        AtomicAction::Fulfill(_) => 0,
        AtomicAction::Reposition(_) => 1,
        AtomicAction::Charge(_) => 2,
        AtomicAction::Pass => 3,
    }
}

/// Dispatch by randomized rounding of fluid flows.
#[derive(Debug, Clone)]
pub struct FluidPolicy {
    /// Per time of day, per status: planned actions with fleet fractions,
    /// sorted in repair order.
    plan: Vec<BTreeMap<VehicleStatus, Vec<(AtomicAction, f64)>>>,
    fleet_size: f64,
}

impl FluidPolicy {
    pub fn new(solution: &FluidSolution) -> Self {
        let mut plan: Vec<BTreeMap<VehicleStatus, Vec<(AtomicAction, f64)>>> =
            vec![BTreeMap::new(); solution.horizon];
        for f in &solution.flows {
            if f.action != AtomicAction::Pass && f.fraction > 0.0 {
                plan[f.t].entry(f.status).or_default().push((f.action, f.fraction));
            }
        }
        for per_t in &mut plan {
            for acts in per_t.values_mut() {
                acts.sort_by(|a, b| repair_rank(&a.0).cmp(&repair_rank(&b.0)).then(b.0.cmp(&a.0)));
            }
        }
        Self {
            plan,
            fleet_size: f64::from(solution.fleet_size),
        }
    }

    /// Rounded action counts for one status at time `t`, before repair.
    pub fn sample_counts<R: Rng + ?Sized>(&self, t: usize, status: &VehicleStatus, rng: &mut R) -> Vec<(AtomicAction, u32)> {
        self.plan[t % self.plan.len()]
            .get(status)
            .map(|acts| {
                acts.iter()
                    .map(|&(a, f)| (a, round_count(self.fleet_size, f, rng)))
                    .filter(|&(_, c)| c > 0)
                    .collect()
            })
            .unwrap_or_default()
    }
}

struct FluidDispatcher {
    queues: BTreeMap<VehicleStatus, std::collections::VecDeque<AtomicAction>>,
}

impl Policy for FluidPolicy {
    fn name(&self) -> String {
        "fluid".into()
    }

    fn start_epoch<'a>(&'a self, _cfg: &'a NetworkConfig, state: &SystemState, rng: &mut SimRng) -> Box<dyn Dispatcher + 'a> {
        let mut queues = BTreeMap::new();
        for (s, &count) in &state.vehicles {
            let mut q = std::collections::VecDeque::new();
            for (a, c) in self.sample_counts(state.time, s, rng) {
                for _ in 0..c {
                    if q.len() < count as usize {
                        q.push_back(a);
                    }
                }
            }
            queues.insert(*s, q);
        }
        Box::new(FluidDispatcher { queues })
    }
}

impl Dispatcher for FluidDispatcher {
    fn decide(&mut self, ctx: &AtomicContext<'_>, _rng: &mut SimRng) -> Decision {
        let Some(planned) = self.queues.get_mut(&ctx.vehicle).and_then(|q| q.pop_front()) else {
            return Decision::certain(AtomicAction::Pass);
        };
        let chosen = match planned {
            // serve the oldest waiting order of the planned type
            AtomicAction::Fulfill(o) => ctx
                .feasible
                .iter()
                .filter(|a| matches!(a, AtomicAction::Fulfill(f) if f.dest == o.dest))
                .max_by_key(|a| match a {
                    AtomicAction::Fulfill(f) => f.age,
                    _ => 0,
                })
                .copied(),
            other => ctx.feasible.contains(&other).then_some(other),
        };
        Decision::certain(chosen.unwrap_or(AtomicAction::Pass))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn two_region(lambda: f64) -> NetworkConfig {
        let mut c = NetworkConfig::blank(2, 4, 4, 4, vec![1]);
        c.charge_period = 2;
        c.pickup_patience = 0;
        c.connection_patience = 1;
        c.trip_duration = vec![1, 2, 2, 1].into_iter().flat_map(|d| std::iter::repeat(d).take(4)).collect();
        c.battery_cost = vec![0, 1, 1, 0];
        c.charger_counts = vec![2, 2];
        for t in 0..4 {
            let i = c.uvt(0, 1, t);
            c.arrival_rate[i] = lambda;
            c.trip_reward[i] = 10.0;
            let i = c.uvt(1, 0, t);
            c.arrival_rate[i] = lambda / 2.0;
            c.trip_reward[i] = 6.0;
            for (u, v) in [(0, 1), (1, 0)] {
                let i = c.uvt(u, v, t);
                c.reposition_reward[i] = -1.0;
            }
            c.charge_reward[t] = -0.5;
        }
        c.validate().unwrap();
        c
    }

    #[test]
    fn no_demand_gives_zero_bound() {
        let c = two_region(0.0);
        let full = solve_fluid(&c, &build_full_lp(&c).unwrap()).unwrap();
        let red = solve_fluid(&c, &build_reduced_lp(&c).unwrap()).unwrap();
        assert!(full.objective.abs() < 1e-12 && red.objective.abs() < 1e-12);
    }

    #[test]
    fn full_and_reduced_agree() {
        for lam in [0.5, 1.0, 3.0] {
            let c = two_region(lam);
            let full = solve_fluid(&c, &build_full_lp(&c).unwrap()).unwrap();
            let red = solve_fluid(&c, &build_reduced_lp(&c).unwrap()).unwrap();
            assert!(full.objective > 0.0);
            let rel = (full.objective - red.objective).abs() / full.objective.abs().max(1.0);
            assert!(rel < 1e-6, "lambda {lam}: full {} reduced {}", full.objective, red.objective);
            assert!(full.max_residual < 1e-8 && red.max_residual < 1e-8);
            assert!(red.num_columns < full.num_columns);
        }
    }

    #[test]
    fn full_solution_fleet_sums_to_one_each_step() {
        let c = two_region(1.0);
        let full = solve_fluid(&c, &build_full_lp(&c).unwrap()).unwrap();
        for t in 0..4 {
            let s: f64 = full.flows.iter().filter(|f| f.t == t).map(|f| f.fraction).sum();
            assert!((s - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn doubling_rewards_doubles_bound() {
        let c = two_region(1.0);
        let mut d = c.clone();
        d.trip_reward.iter_mut().for_each(|r| *r *= 2.0);
        d.reposition_reward.iter_mut().for_each(|r| *r *= 2.0);
        d.charge_reward.iter_mut().for_each(|r| *r *= 2.0);
        let a = upper_bound(&c).unwrap();
        let b = upper_bound(&d).unwrap();
        assert!((b - 2.0 * a).abs() < 1e-8 * a.abs().max(1.0));
    }

    #[test]
    fn single_region_has_no_reward() {
        let mut c = NetworkConfig::blank(1, 3, 2, 4, vec![1]);
        c.charge_period = 1;
        c.charger_counts = vec![1];
        c.validate().unwrap();
        assert!(upper_bound(&c).unwrap().abs() < 1e-12);
    }

    #[test]
    fn nonlinear_charging_is_rejected() {
        let mut c = two_region(1.0);
        c.charging_curve = Some(crate::config::ChargingCurve::dc_fast(1));
        c.battery_capacity = 100;
        assert!(matches!(build_full_lp(&c), Err(Error::Unsupported(_))));
    }

    #[test]
    fn time_varying_durations_refuse_reduction() {
        let mut c = two_region(1.0);
        let i = c.uvt(0, 1, 0);
        c.trip_duration[i] = 3;
        c.validate().unwrap();
        assert!(matches!(build_reduced_lp(&c), Err(Error::Unsupported(_))));
        assert!(upper_bound(&c).is_ok());
    }

    #[test]
    fn rounding_is_unbiased() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let draws = 10_000;
        let total: u64 = (0..draws).map(|_| u64::from(round_count(7.0, 0.3, &mut rng))).sum();
        let mean = total as f64 / draws as f64;
        // Var of the Bernoulli part is 0.1 * 0.9
        let sd = (0.09f64 / draws as f64).sqrt();
        assert!((mean - 2.1).abs() < 3.0 * sd, "{mean}");
    }

    #[test]
    fn printed_charge_window_can_disagree() {
        let c = two_region(3.0);
        let full = upper_bound(&c).unwrap();
        let exact = solve_fluid(&c, &build_reduced_lp_with(&c, ChargeWindow::Exact).unwrap()).unwrap();
        let printed = solve_fluid(&c, &build_reduced_lp_with(&c, ChargeWindow::AsPrinted).unwrap());
        assert!((exact.objective - full).abs() < 1e-6 * full.abs().max(1.0));
        if let Ok(p) = printed {
            assert!(p.objective <= full + 1e-9);
        }
    }

    #[test]
    fn random_constant_duration_instances_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..12 {
            let v = rng.gen_range(2..=3);
            let horizon = rng.gen_range(2..=4);
            let mut c = NetworkConfig::blank(v, horizon, rng.gen_range(2..=5), rng.gen_range(2..=4), vec![1, 2]);
            c.pickup_patience = rng.gen_range(0..=1);
            c.connection_patience = rng.gen_range(0..=1);
            c.charge_period = c.pickup_patience + rng.gen_range(1..=2);
            for x in c.charger_counts.iter_mut() {
                *x = rng.gen_range(0..=2);
            }
            for u in 0..v {
                for w in (0..v).filter(|&w| w != u) {
                    let d = c.pickup_patience + rng.gen_range(1..=2);
                    let i = c.uv(u, w);
                    c.battery_cost[i] = rng.gen_range(0..=1);
                    for t in 0..horizon {
                        let i = c.uvt(u, w, t);
                        c.trip_duration[i] = d;
                        c.arrival_rate[i] = rng.gen_range(0.0..2.0);
                        c.trip_reward[i] = rng.gen_range(1.0..10.0);
                        c.reposition_reward[i] = -rng.gen_range(0.0..1.0);
                    }
                }
            }
            for r in c.charge_reward.iter_mut() {
                *r = -rng.gen_range(0.0..0.5);
            }
            c.validate().unwrap();
            let full = solve_fluid(&c, &build_full_lp(&c).unwrap()).unwrap().objective;
            let red = solve_fluid(&c, &build_reduced_lp(&c).unwrap()).unwrap().objective;
            assert!((full - red).abs() <= 1e-6 * full.abs().max(1.0), "full {full} reduced {red}");
        }
    }
}
