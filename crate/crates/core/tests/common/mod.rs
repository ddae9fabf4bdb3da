#![allow(dead_code)]

use fleetlab::lp::{LpProblem, RowKind};
use fleetlab::NetworkConfig;
use num_bigint::BigInt;
use num_rational::BigRational;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Size limits for random configs.
#[derive(Debug, Clone, Copy)]
pub struct Shape {
    pub regions: usize,
    pub horizon: usize,
    pub fleet: u32,
    pub battery: u32,
    pub max_patience: u32,
    /// Trip durations that do not depend on the time of day.
    pub constant_duration: bool,
    /// Rewards on a quarter grid so that sums are exact in any order.
    pub dyadic_rewards: bool,
    pub max_lambda: f64,
}

impl Shape {
    pub fn small() -> Self {
        Self {
            regions: 4,
            horizon: 6,
            fleet: 12,
            battery: 8,
            max_patience: 2,
            constant_duration: false,
            dyadic_rewards: false,
            max_lambda: 3.0,
        }
    }

    pub fn tiny() -> Self {
        Self {
            regions: 3,
            horizon: 8,
            fleet: 4,
            battery: 6,
            max_patience: 1,
            constant_duration: true,
            dyadic_rewards: false,
            max_lambda: 1.5,
        }
    }
}

fn reward<R: Rng>(rng: &mut R, shape: &Shape, lo: f64, hi: f64) -> f64 {
    let x = rng.gen_range(lo..hi);
    if shape.dyadic_rewards {
        (x * 4.0).round() / 4.0
    } else {
        x
    }
}

/// A valid random config within `shape`.
pub fn random_config<R: Rng>(rng: &mut R, shape: &Shape) -> NetworkConfig {
    let v = rng.gen_range(2..=shape.regions.max(2));
    let horizon = rng.gen_range(1..=shape.horizon);
    let battery = rng.gen_range(2..=shape.battery.max(2));
    let nrates = rng.gen_range(1..=2);
    let rates: Vec<u32> = (0..nrates).map(|_| rng.gen_range(1..=battery.div_ceil(2))).collect();
    let mut c = NetworkConfig::blank(v, horizon, rng.gen_range(1..=shape.fleet), battery, rates);
    c.pickup_patience = rng.gen_range(0..=shape.max_patience);
    c.connection_patience = rng.gen_range(0..=shape.max_patience);
    c.charge_period = c.pickup_patience + rng.gen_range(1..=2);
    for x in c.charger_counts.iter_mut() {
        *x = rng.gen_range(0..=2);
    }
    for u in 0..v {
        for w in 0..v {
            if u == w {
                continue;
            }
            let i = c.uv(u, w);
            c.battery_cost[i] = rng.gen_range(0..=battery / 2);
            let base = c.pickup_patience + rng.gen_range(1..=3);
            for t in 0..horizon {
                let i = c.uvt(u, w, t);
                c.trip_duration[i] = if shape.constant_duration { base } else { c.pickup_patience + rng.gen_range(1..=3) };
                c.arrival_rate[i] = if rng.gen_bool(0.8) { rng.gen_range(0.0..shape.max_lambda) } else { 0.0 };
                c.trip_reward[i] = reward(rng, shape, 1.0, 10.0);
                c.reposition_reward[i] = -reward(rng, shape, 0.0, 1.0);
            }
        }
    }
    for r in c.charge_reward.iter_mut() {
        *r = -reward(rng, shape, 0.0, 0.5);
    }
    c.validate().expect("random config is valid");
    c
}

pub fn rat(x: i64) -> BigRational {
    BigRational::from_integer(BigInt::from(x))
}

/// Integer LP `max c·x` subject to rows and `x >= 0`.
#[derive(Debug, Clone)]
pub struct IntLp {
    pub c: Vec<i64>,
    pub rows: Vec<(Vec<i64>, RowKind, i64)>,
}

impl IntLp {
    pub fn random<R: Rng>(rng: &mut R, max_bases: u64) -> Self {
        loop {
            let n = rng.gen_range(1..=12usize);
            let m = rng.gen_range(1..=20usize);
            if binomial((n + m) as u64, n as u64) > max_bases {
                continue;
            }
            let c = (0..n).map(|_| rng.gen_range(-5..=9)).collect();
            let mut rows = Vec::with_capacity(m);
            rows.push((vec![1; n], RowKind::Le, rng.gen_range(1..=20)));
            for _ in 1..m {
                let a: Vec<i64> = (0..n).map(|_| if rng.gen_bool(0.6) { rng.gen_range(-4..=6) } else { 0 }).collect();
                let kind = match rng.gen_range(0..10) {
                    0 => RowKind::Eq,
                    1 | 2 => RowKind::Ge,
                    _ => RowKind::Le,
                };
                rows.push((a, kind, rng.gen_range(-3..=15)));
            }
            return Self { c, rows };
        }
    }

    pub fn to_problem(&self) -> LpProblem {
        let mut p = LpProblem::new("oracle");
        for (j, &cj) in self.c.iter().enumerate() {
            p.add_col(format!("x{j}"), cj as f64).unwrap();
        }
        for (i, (a, kind, b)) in self.rows.iter().enumerate() {
            let coeffs = a.iter().enumerate().filter(|(_, &v)| v != 0).map(|(j, &v)| (j, v as f64)).collect();
            p.add_row(format!("r{i}"), *kind, *b as f64, coeffs);
        }
        p
    }

    /// Exact optimum by enumerating every basic solution in rational
    /// arithmetic; `None` when the LP is infeasible.
    pub fn vertex_optimum(&self) -> Option<BigRational> {
        let n = self.c.len();
        // Constraints as (a, b) with a·x = b when tight: the rows, then x_j = 0.
        let mut cons: Vec<(Vec<BigRational>, BigRational)> = self
            .rows
            .iter()
            .map(|(a, _, b)| (a.iter().map(|&v| rat(v)).collect(), rat(*b)))
            .collect();
        for j in 0..n {
            let mut a = vec![rat(0); n];
            a[j] = rat(1);
            cons.push((a, rat(0)));
        }
        let mut best: Option<BigRational> = None;
        let mut pick = Vec::with_capacity(n);
        subsets(cons.len(), n, 0, &mut pick, &mut |idx| {
            let Some(x) = solve_square(&cons, idx, n) else { return };
            if !self.feasible(&x) {
                return;
            }
            let obj: BigRational = self.c.iter().zip(&x).map(|(&c, x)| rat(c) * x).sum();
            if best.as_ref().map_or(true, |b| obj > *b) {
                best = Some(obj);
            }
        });
        best
    }

    fn feasible(&self, x: &[BigRational]) -> bool {
        let zero = rat(0);
        if x.iter().any(|v| *v < zero) {
            return false;
        }
        self.rows.iter().all(|(a, kind, b)| {
            let lhs: BigRational = a.iter().zip(x).map(|(&v, x)| rat(v) * x).sum();
            let b = rat(*b);
            match kind {
                RowKind::Le => lhs <= b,
                RowKind::Ge => lhs >= b,
                RowKind::Eq => lhs == b,
            }
        })
    }
}

pub fn binomial(n: u64, k: u64) -> u64 {
    let k = k.min(n - k);
    (0..k).fold(1u64, |acc, i| acc * (n - i) / (i + 1))
}

fn subsets(total: usize, k: usize, start: usize, pick: &mut Vec<usize>, f: &mut impl FnMut(&[usize])) {
    if pick.len() == k {
        f(pick);
        return;
    }
    for i in start..=total - (k - pick.len()) {
        pick.push(i);
        subsets(total, k, i + 1, pick, f);
        pick.pop();
    }
}

/// Solves the square system picked by `idx`; `None` if singular.
fn solve_square(cons: &[(Vec<BigRational>, BigRational)], idx: &[usize], n: usize) -> Option<Vec<BigRational>> {
    let zero = rat(0);
    let mut m: Vec<Vec<BigRational>> = idx
        .iter()
        .map(|&i| {
            let mut row = cons[i].0.clone();
            row.push(cons[i].1.clone());
            row
        })
        .collect();
    for col in 0..n {
        let p = (col..n).find(|&r| m[r][col] != zero)?;
        m.swap(col, p);
        let pivot = m[col][col].clone();
        for v in m[col].iter_mut() {
            *v = &*v / &pivot;
        }
        for r in 0..n {
            if r != col && m[r][col] != zero {
                let f = m[r][col].clone();
                for c in col..=n {
                    let sub = &f * &m[col][c];
                    m[r][c] -= sub;
                }
            }
        }
    }
    Some(m.into_iter().map(|mut r| r.pop().unwrap()).collect())
}

pub fn to_f64(x: &BigRational) -> f64 {
    use num_traits::ToPrimitive;
    x.to_f64().unwrap()
}

use fleetlab::baselines::RandomFeasible;
use fleetlab::model::{check_fleet_action, epoch_reward};
use fleetlab::reduction::ObservationLayout;
use fleetlab::sim::{initial_state, run_epoch_atomic, sample_arrivals, step, EpisodeTrace, RngStream, TraceLevel};
use fleetlab::SystemState;

pub fn empty_trace(cfg: &NetworkConfig, stream: RngStream) -> EpisodeTrace {
    EpisodeTrace {
        stream,
        days: 1,
        horizon: cfg.horizon() as u32,
        fleet_size: cfg.fleet_size,
        obs_dim: 0,
        observations: Vec::new(),
        terminal_observation: Vec::new(),
        atomic: Vec::new(),
        epochs: Vec::new(),
        daily_rewards: Vec::new(),
        final_state: None,
    }
}

/// Conservation violations of one state: fleet total, charger totals,
/// trip buckets, battery and ETA ranges.
pub fn state_violations(cfg: &NetworkConfig, s: &SystemState) -> usize {
    let mut bad = usize::from(s.check_invariants(cfg).is_err());
    let nv = cfg.num_regions();
    if s.trips.len() != nv * nv * (cfg.connection_patience as usize + 1) {
        bad += 1;
    }
    bad += s.vehicles.keys().filter(|v| u32::from(v.battery) > cfg.battery_capacity).count();
    bad
}

/// Runs the random policy for `epochs` epochs and counts violations.
pub fn conservation_run(cfg: &NetworkConfig, seed: u64, epochs: usize) -> usize {
    let layout = ObservationLayout::new(cfg);
    let stream = RngStream::new(seed, 0);
    let (mut arr, mut pol) = (stream.arrivals(), stream.policy());
    let mut trace = empty_trace(cfg, stream);
    let mut state = initial_state(cfg);
    let mut bad = state_violations(cfg, &state);
    for e in 0..epochs {
        let day = (e / cfg.horizon()) as u32;
        match run_epoch_atomic(cfg, &layout, &state, &RandomFeasible, &mut arr, &mut pol, day, TraceLevel::Summary, &mut trace) {
            Ok((next, _, _)) => {
                bad += state_violations(cfg, &next);
                state = next;
            }
            Err(_) => return bad + 1,
        }
    }
    bad
}

/// Runs random atomic epochs and checks that the induced fleet action is
/// feasible, that the fleet-level transition reproduces the next state, and
/// that the atomic rewards add up to the fleet reward. Returns mismatches.
pub fn equivalence_run(cfg: &NetworkConfig, seed: u64, epochs: usize) -> usize {
    let layout = ObservationLayout::new(cfg);
    let stream = RngStream::new(seed, 0);
    let (mut arr, mut pol) = (stream.arrivals(), stream.policy());
    let mut trace = empty_trace(cfg, stream);
    let mut state = initial_state(cfg);
    let mut bad = 0;
    for e in 0..epochs {
        let t = state.time;
        let mut arr_copy = arr.clone();
        let Ok((next, rec, action)) =
            run_epoch_atomic(cfg, &layout, &state, &RandomFeasible, &mut arr, &mut pol, (e / cfg.horizon()) as u32, TraceLevel::Atomic, &mut trace)
        else {
            return bad + 1;
        };
        let arrivals = sample_arrivals(cfg, (t + 1) % cfg.horizon(), &mut arr_copy);
        let atomic_sum: f64 = trace.atomic.iter().map(|r| r.reward).sum();
        trace.atomic.clear();
        let ok = check_fleet_action(cfg, &state, &action).is_ok()
            && step(cfg, &state, &action, &arrivals).map(|(s, _)| s == next).unwrap_or(false)
            && epoch_reward(cfg, &action, t) == rec.reward
            && atomic_sum == rec.reward;
        bad += usize::from(!ok);
        state = next;
    }
    bad
}

use fleetlab::nn::NetConfig;
use fleetlab::ppo::{
    compute_advantages, estimate_g, initial_networks, surrogate_and_grad, value_loss_and_grad, NeuralPolicy, PolicyDataset,
    PpoConfig, ValueDataset,
};
use fleetlab::sim::rollout_many;

/// Worst relative error of analytic vs central-difference gradients.
#[derive(Debug, Clone, Copy, Default)]
pub struct GradCheck {
    pub value_err: f64,
    pub surrogate_err: f64,
    pub checked: usize,
    pub skipped_kinks: usize,
}

pub const FD_STEP: f64 = 1e-6;
pub const FD_ABS_FLOOR: f64 = 1e-8;

fn rel_err(fd: f64, g: f64) -> f64 {
    (fd - g).abs() / (fd.abs().max(g.abs()) + FD_ABS_FLOOR)
}

/// One seeded draw: a random small config, fresh networks, a short
/// rollout, then gradients at perturbed parameters on a random minibatch.
pub fn gradient_draw(seed: u64, coords: usize) -> GradCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = Shape { regions: 3, horizon: 3, fleet: 5, battery: 6, ..Shape::small() };
    let cfg = random_config(&mut rng, &shape);
    let ppo = PpoConfig {
        seed,
        net: NetConfig { hidden: vec![8, 6], ..NetConfig::default() },
        ..PpoConfig::default()
    };
    let (mut policy, mut value) = initial_networks(&cfg, &ppo).unwrap();
    let traces = rollout_many(&cfg, &initial_state(&cfg), &NeuralPolicy::new(policy.clone()), 2, seed, 0, 2, TraceLevel::Full).unwrap();
    let g = estimate_g(&traces).unwrap();
    let vdata = ValueDataset::from_traces(&traces, g).unwrap();
    let mut pdata = PolicyDataset::default();
    for tr in &traces {
        pdata.push_trace(tr, &compute_advantages(tr, &value, g).unwrap());
    }
    for net in value.nets.nets.iter_mut().chain(policy.nets.nets.iter_mut()) {
        for p in net.params_mut() {
            *p += rng.gen_range(-0.2..0.2);
        }
    }
    let mut out = GradCheck::default();

    let vidx: Vec<usize> = (0..vdata.len()).filter(|_| rng.gen_bool(0.5)).collect();
    if !vidx.is_empty() {
        let (_, grads) = value_loss_and_grad(&value, &vdata, &vidx);
        for _ in 0..coords {
            let k = rng.gen_range(0..grads.len());
            let i = rng.gen_range(0..grads[k].len());
            let orig = value.nets.nets[k].params()[i];
            value.nets.nets[k].params_mut()[i] = orig + FD_STEP;
            let up = value_loss_and_grad(&value, &vdata, &vidx).0;
            value.nets.nets[k].params_mut()[i] = orig - FD_STEP;
            let dn = value_loss_and_grad(&value, &vdata, &vidx).0;
            value.nets.nets[k].params_mut()[i] = orig;
            out.value_err = out.value_err.max(rel_err((up - dn) / (2.0 * FD_STEP), grads[k][i]));
            out.checked += 1;
        }
    }

    let pidx: Vec<usize> = (0..pdata.len()).collect();
    if !pidx.is_empty() {
        let clip = 0.1;
        let (_, grads) = surrogate_and_grad(&policy, &pdata, &pidx, clip).unwrap();
        for _ in 0..coords {
            let k = rng.gen_range(0..grads.len());
            let i = rng.gen_range(0..grads[k].len());
            let orig = policy.nets.nets[k].params()[i];
            policy.nets.nets[k].params_mut()[i] = orig + FD_STEP;
            let up = surrogate_and_grad(&policy, &pdata, &pidx, clip).unwrap().0;
            policy.nets.nets[k].params_mut()[i] = orig - FD_STEP;
            let dn = surrogate_and_grad(&policy, &pdata, &pidx, clip).unwrap().0;
            policy.nets.nets[k].params_mut()[i] = orig;
            if up.clip_fraction != dn.clip_fraction {
                out.skipped_kinks += 1;
                continue;
            }
            out.surrogate_err = out.surrogate_err.max(rel_err((up.surrogate - dn.surrogate) / (2.0 * FD_STEP), grads[k][i]));
            out.checked += 1;
        }
    }
    out
}

use fleetlab::lp::{solve, SolverOptions};
use fleetlab::Error;

pub const LP_ORACLE_TOL: f64 = 1e-9;

/// Solves one random LP both ways; `Err` describes a mismatch.
pub fn lp_oracle_case(seed: u64, max_bases: u64) -> std::result::Result<(), String> {
    let lp = IntLp::random(&mut ChaCha8Rng::seed_from_u64(seed), max_bases);
    let exact = lp.vertex_optimum();
    match (solve(&lp.to_problem(), SolverOptions::default()), exact) {
        (Ok(sol), Some(opt)) => {
            let want = to_f64(&opt);
            if (sol.objective - want).abs() <= LP_ORACLE_TOL * want.abs().max(1.0) {
                Ok(())
            } else {
                Err(format!("seed {seed}: simplex {} vs exact {want}", sol.objective))
            }
        }
        (Err(Error::Infeasible { .. }), None) => Ok(()),
        (got, want) => Err(format!("seed {seed}: simplex {got:?} vs exact {want:?}")),
    }
}

/// Instance for exact value iteration: V ≤ 3, N ≤ 4, B ≤ 6, T ≤ 8, short
/// trips, no patience, a charger in every region so no vehicle gets stranded.
pub fn tiny_instance(seed: u64) -> NetworkConfig {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = Shape {
        regions: rng.gen_range(2..=3),
        horizon: rng.gen_range(1..=8),
        fleet: rng.gen_range(1..=4),
        battery: rng.gen_range(2..=6),
        max_patience: 0,
        constant_duration: true,
        dyadic_rewards: false,
        max_lambda: 1.5,
    };
    let mut c = random_config(&mut rng, &shape);
    for d in c.trip_duration.iter_mut() {
        *d = (*d).min(2);
    }
    c.charge_period = 1;
    for x in c.charger_counts.iter_mut() {
        *x = (*x).max(1);
    }
    c.validate().expect("tiny instance is valid");
    c
}
