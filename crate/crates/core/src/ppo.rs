//! Atomic-PPO: rollouts under a frozen policy, average-reward estimate,
//! Monte-Carlo relative-value targets, value regression, one-step
//! advantages and clipped-surrogate ascent.

use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::NetworkConfig;
use crate::error::{Error, Result};
use crate::model::SystemState;
use crate::nn::{save_netset, Adam, Cache, NetConfig, PolicyNetwork, PolicyScratch, ValueNetwork};
use crate::reduction::{ActionSlots, ObservationLayout};
use crate::sim::{
    initial_state, rollout_many, AtomicContext, Decision, Dispatcher, EpisodeTrace, Policy, SimRng, TraceLevel,
};

/// Stream ids at or above this offset are reserved for evaluation runs.
pub const EVAL_STREAM_OFFSET: u64 = 1 << 40;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PpoConfig {
    pub policy_iterations: usize,
    pub trajectories_per_iter: usize,
    pub days_per_trajectory: u32,
    pub initial_clip: f64,
    pub clip_decay: f64,
    pub clip_floor: f64,
    pub lr_policy: f64,
    pub lr_value: f64,
    pub batch_policy: usize,
    pub batch_value: usize,
    pub policy_update_steps: usize,
    pub value_update_steps: usize,
    pub seed: u64,
    pub net: NetConfig,
    pub normalize_advantages: bool,
    /// Stop after this many iterations without a better evaluation reward.
    pub early_stop_patience: Option<usize>,
    pub eval_trajectories: usize,
    pub eval_days: u32,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            policy_iterations: 30,
            trajectories_per_iter: 30,
            days_per_trajectory: 8,
            initial_clip: 0.1,
            clip_decay: 0.97,
            clip_floor: 0.01,
            lr_policy: 5e-4,
            lr_value: 3e-4,
            batch_policy: 1024,
            batch_value: 1024,
            policy_update_steps: 20,
            value_update_steps: 100,
            seed: 0,
            net: NetConfig::default(),
            normalize_advantages: true,
            early_stop_patience: Some(3),
            eval_trajectories: 5,
            eval_days: 8,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.trajectories_per_iter == 0 || self.days_per_trajectory == 0 {
            return bad("trajectories and days per iteration must be positive");
        }
        if self.batch_policy == 0 || self.batch_value == 0 {
            return bad("batch sizes must be positive");
        }
        if !(self.initial_clip > 0.0 && self.clip_decay > 0.0 && self.clip_floor >= 0.0) {
            return bad("clip parameters must be positive");
        }
        if !(self.lr_policy >= 0.0 && self.lr_value >= 0.0) {
            return bad("learning rates must be non-negative");
        }
        if self.net.hidden.len() != crate::nn::POLICY_ACTIVATIONS.len() - 1 || self.net.hidden.contains(&0) {
            return bad("exactly two non-empty hidden layers are required");
        }
        Ok(())
    }

    pub fn clip_at(&self, m: usize) -> f64 {
        (self.initial_clip * self.clip_decay.powi(m as i32)).max(self.clip_floor)
    }
}

/// `max(ε·γ^m, 0.01)`.
pub fn clip_schedule(m: usize, eps: f64, gamma: f64) -> f64 {
    (eps * gamma.powi(m as i32)).max(0.01)
}

/// Average daily reward over all trajectories.
pub fn estimate_g(traces: &[EpisodeTrace]) -> Result<f64> {
    let first = traces
        .first()
        .ok_or_else(|| Error::InvalidArgument("no traces".into()))?;
    if traces
        .iter()
        .any(|t| t.days != first.days || t.horizon != first.horizon || t.fleet_size != first.fleet_size)
    {
        return Err(Error::InvalidArgument("traces differ in length".into()));
    }
    let total: f64 = traces.iter().map(EpisodeTrace::total_reward).sum();
    Ok(total / (traces.len() as f64 * f64::from(first.days)))
}

/// Per-atomic-step reward offset `ĝ / (T·N)`.
fn step_offset(trace: &EpisodeTrace, g: f64) -> f64 {
    g / (f64::from(trace.horizon) * f64::from(trace.fleet_size))
}

/// Tail sums of `r − ĝ/(T·N)` from each atomic step to the end of the
/// trajectory, by one reverse pass.
pub fn value_targets(trace: &EpisodeTrace, g: f64) -> Vec<f64> {
    let off = step_offset(trace, g);
    let mut out = vec![0.0; trace.atomic.len()];
    let mut acc = 0.0;
    for (i, r) in trace.atomic.iter().enumerate().rev() {
        acc += r.reward - off;
        out[i] = acc;
    }
    out
}

/// Rows for value regression.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValueDataset {
    pub obs_dim: usize,
    pub obs: Vec<f64>,
    pub time: Vec<u16>,
    pub target: Vec<f64>,
}

impl ValueDataset {
    pub fn len(&self) -> usize {
        self.target.len()
    }

    pub fn is_empty(&self) -> bool {
        self.target.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.obs[i * self.obs_dim..(i + 1) * self.obs_dim]
    }

    pub fn from_traces(traces: &[EpisodeTrace], g: f64) -> Result<Self> {
        let mut d = ValueDataset {
            obs_dim: traces.first().map_or(0, |t| t.obs_dim),
            ..Default::default()
        };
        for tr in traces {
            require_full(tr)?;
            d.obs.extend_from_slice(&tr.observations);
            d.time.extend(tr.atomic.iter().map(|r| r.time));
            d.target.extend(value_targets(tr, g));
        }
        Ok(d)
    }
}

fn require_full(tr: &EpisodeTrace) -> Result<()> {
    if tr.observations.len() != tr.atomic.len() * tr.obs_dim || tr.terminal_observation.len() != tr.obs_dim {
        return Err(Error::InvalidArgument("trace was not recorded with observations".into()));
    }
    Ok(())
}

/// Mean squared error over `idx` and its gradient, one buffer per network.
pub fn value_loss_and_grad(net: &ValueNetwork, data: &ValueDataset, idx: &[usize]) -> (f64, Vec<Vec<f64>>) {
    let mut grads: Vec<Vec<f64>> = net.nets.nets.iter().map(|n| vec![0.0; n.num_params()]).collect();
    let mut cache = Cache::default();
    let mut input = Vec::new();
    let mut loss = 0.0;
    let inv = 1.0 / idx.len() as f64;
    for &i in idx {
        let t = usize::from(data.time[i]);
        let h = net.value(t, data.row(i), &mut input, &mut cache);
        let e = h - data.target[i];
        loss += e * e * inv;
        let k = net.nets.net_index(t);
        net.nets.nets[k].backward(&mut cache, &[2.0 * e * inv], &mut grads[k]);
    }
    (loss, grads)
}

/// Minibatch Adam regression of the value network. Returns the loss of
/// each step's minibatch.
pub fn fit_value<R: Rng>(
    net: &mut ValueNetwork,
    data: &ValueDataset,
    steps: usize,
    batch: usize,
    lr: f64,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if data.is_empty() {
        return Err(Error::InvalidArgument("empty value dataset".into()));
    }
    let mut opts: Vec<Adam> = net.nets.nets.iter().map(|n| Adam::new(n.num_params(), lr)).collect();
    let mut curve = Vec::with_capacity(steps);
    for _ in 0..steps {
        let idx = minibatch(data.len(), batch, rng);
        let (loss, grads) = value_loss_and_grad(net, data, &idx);
        if !loss.is_finite() {
            return Err(Error::Numeric(format!("value loss became {loss}")));
        }
        for ((n, opt), g) in net.nets.nets.iter_mut().zip(&mut opts).zip(&grads) {
            opt.step(n.params_mut(), g);
        }
        curve.push(loss);
    }
    Ok(curve)
}

fn minibatch<R: Rng>(len: usize, batch: usize, rng: &mut R) -> Vec<usize> {
    if batch >= len {
        (0..len).collect()
    } else {
        let mut v = sample(rng, len, batch).into_vec();
        v.sort_unstable();
        v
    }
}

/// `Â = r − ĝ/(T·N) + h(next) − h(current)`; the last step bootstraps from
/// the trajectory's terminal observation.
pub fn compute_advantages(trace: &EpisodeTrace, net: &ValueNetwork, g: f64) -> Result<Vec<f64>> {
    require_full(trace)?;
    let off = step_offset(trace, g);
    let mut cache = Cache::default();
    let mut input = Vec::new();
    let len = trace.atomic.len();
    let mut h = Vec::with_capacity(len + 1);
    for i in 0..len {
        h.push(net.value(usize::from(trace.atomic[i].time), trace.observation(i), &mut input, &mut cache));
    }
    h.push(net.value(0, &trace.terminal_observation, &mut input, &mut cache));
    Ok((0..len).map(|i| trace.atomic[i].reward - off + h[i + 1] - h[i]).collect())
}

/// Rows for the surrogate objective. Steps where only one slot was
/// feasible are skipped: their ratio is identically 1.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PolicyDataset {
    pub obs_dim: usize,
    pub obs: Vec<f64>,
    pub time: Vec<u16>,
    pub vehicle: Vec<crate::model::VehicleStatus>,
    pub mask: Vec<u64>,
    pub slot: Vec<u16>,
    pub old_prob: Vec<f64>,
    pub advantage: Vec<f64>,
    /// Rows rejected because the stored probability underflowed.
    pub dropped: usize,
}

impl PolicyDataset {
    pub fn len(&self) -> usize {
        self.slot.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slot.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.obs[i * self.obs_dim..(i + 1) * self.obs_dim]
    }

    pub fn push_trace(&mut self, trace: &EpisodeTrace, advantages: &[f64]) {
        self.obs_dim = trace.obs_dim;
        for (i, r) in trace.atomic.iter().enumerate() {
            if r.mask.count_ones() <= 1 {
                continue;
            }
            if !(r.prob > 1e-12) {
                self.dropped += 1;
                continue;
            }
            self.obs.extend_from_slice(trace.observation(i));
            self.time.push(r.time);
            self.vehicle.push(r.vehicle);
            self.mask.push(r.mask);
            self.slot.push(r.slot);
            self.old_prob.push(r.prob);
            self.advantage.push(advantages[i]);
        }
    }

    /// Shifts and scales advantages to zero mean and unit variance.
    pub fn normalize_advantages(&mut self) {
        let n = self.advantage.len();
        if n < 2 {
            return;
        }
        let mean = self.advantage.iter().sum::<f64>() / n as f64;
        let var = self.advantage.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n as f64;
        let sd = var.sqrt().max(1e-8);
        for a in &mut self.advantage {
            *a = (*a - mean) / sd;
        }
    }
}

fn unpack_mask(bits: u64, len: usize, out: &mut Vec<bool>) {
    out.clear();
    out.extend((0..len).map(|s| bits >> s & 1 == 1));
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct SurrogateStats {
    pub surrogate: f64,
    pub clip_fraction: f64,
    pub dropped: usize,
}

/// Mean clipped surrogate over `idx` and its gradient (for ascent).
pub fn surrogate_and_grad(
    net: &PolicyNetwork,
    data: &PolicyDataset,
    idx: &[usize],
    clip: f64,
) -> Result<(SurrogateStats, Vec<Vec<f64>>)> {
    let mut grads: Vec<Vec<f64>> = net.nets.nets.iter().map(|n| vec![0.0; n.num_params()]).collect();
    let mut scratch = PolicyScratch::default();
    let mut mask = Vec::new();
    let mut d_logits = Vec::new();
    let mut stats = SurrogateStats::default();
    let mut used = 0usize;
    let mut clipped = 0usize;
    let mut total = 0.0;
    let slots = net.slots.len();
    for &i in idx {
        let t = usize::from(data.time[i]);
        unpack_mask(data.mask[i], slots, &mut mask);
        net.probabilities(t, data.row(i), &data.vehicle[i], &mask, &mut scratch)?;
        let a = usize::from(data.slot[i]);
        let ratio = scratch.probs[a] / data.old_prob[i];
        if !ratio.is_finite() {
            stats.dropped += 1;
            continue;
        }
        used += 1;
        let adv = data.advantage[i];
        let (lo, hi) = (1.0 - clip, 1.0 + clip);
        total += (ratio * adv).min(ratio.clamp(lo, hi) * adv);
        if (adv > 0.0 && ratio > hi) || (adv < 0.0 && ratio < lo) {
            clipped += 1;
            continue;
        }
        // d(ρ·Â)/dlogit_s = ρ·Â·(1[s=a] − p_s)
        let coeff = ratio * adv;
        d_logits.clear();
        d_logits.extend(
            scratch
                .probs
                .iter()
                .enumerate()
                .map(|(s, p)| coeff * (f64::from(u8::from(s == a)) - p)),
        );
        let k = net.nets.net_index(t);
        net.nets.nets[k].backward(&mut scratch.cache, &d_logits, &mut grads[k]);
    }
    if used == 0 {
        return Ok((stats, grads));
    }
    let inv = 1.0 / used as f64;
    for g in grads.iter_mut().flat_map(|g| g.iter_mut()) {
        *g *= inv;
    }
    stats.surrogate = total * inv;
    stats.clip_fraction = clipped as f64 * inv;
    Ok((stats, grads))
}

/// Minibatch Adam ascent on the clipped surrogate. Returns stats of the
/// first minibatch (at the frozen parameters) with the clip fraction
/// averaged over all steps.
pub fn ppo_update<R: Rng>(
    net: &mut PolicyNetwork,
    data: &PolicyDataset,
    clip: f64,
    steps: usize,
    batch: usize,
    lr: f64,
    rng: &mut R,
) -> Result<SurrogateStats> {
    let mut first = SurrogateStats::default();
    if data.is_empty() || steps == 0 {
        return Ok(first);
    }
    let mut opts: Vec<Adam> = net.nets.nets.iter().map(|n| Adam::new(n.num_params(), lr)).collect();
    let mut clip_sum = 0.0;
    let mut dropped = 0;
    for s in 0..steps {
        let idx = minibatch(data.len(), batch, rng);
        let (stats, mut grads) = surrogate_and_grad(net, data, &idx, clip)?;
        if s == 0 {
            first = stats;
        }
        clip_sum += stats.clip_fraction;
        dropped += stats.dropped;
        for g in &mut grads {
            for x in g.iter_mut() {
                *x = -*x;
            }
        }
        for ((n, opt), g) in net.nets.nets.iter_mut().zip(&mut opts).zip(&grads) {
            opt.step(n.params_mut(), g);
        }
    }
    if !net.nets.all_finite() {
        return Err(Error::Numeric("policy parameters became non-finite".into()));
    }
    first.clip_fraction = clip_sum / steps as f64;
    first.dropped = dropped;
    Ok(first)
}

/// A trained (or initial) policy network acting as a dispatch policy.
#[derive(Debug, Clone)]
pub struct NeuralPolicy {
    pub net: PolicyNetwork,
    /// Pick the most likely slot instead of sampling.
    pub greedy: bool,
}

impl NeuralPolicy {
    pub fn new(net: PolicyNetwork) -> Self {
        Self { net, greedy: false }
    }
}

struct NeuralDispatcher<'a> {
    policy: &'a NeuralPolicy,
    t: usize,
    scratch: PolicyScratch,
}

impl Policy for NeuralPolicy {
    fn name(&self) -> String {
        "atomic-ppo".into()
    }

    fn uses_observation(&self) -> bool {
        true
    }

    fn start_epoch<'a>(&'a self, _cfg: &'a NetworkConfig, state: &SystemState, _rng: &mut SimRng) -> Box<dyn Dispatcher + 'a> {
        Box::new(NeuralDispatcher {
            policy: self,
            t: state.time,
            scratch: PolicyScratch::default(),
        })
    }
}

impl Dispatcher for NeuralDispatcher<'_> {
    fn decide(&mut self, ctx: &AtomicContext<'_>, rng: &mut SimRng) -> Decision {
        let net = &self.policy.net;
        let (mask, resolved) = net.slots.mask(ctx.feasible);
        let obs = ctx.observation.expect("neural policy needs observations");
        if net
            .probabilities(self.t, obs, &ctx.vehicle, &mask, &mut self.scratch)
            .is_err()
        {
            return Decision::certain(crate::model::AtomicAction::Pass);
        }
        let probs = &self.scratch.probs;
        let slot = if self.policy.greedy {
            (0..probs.len())
                .filter(|&s| mask[s])
                .fold(net.slots.pass(), |best, s| if probs[s] > probs[best] { s } else { best })
        } else {
            let u: f64 = rng.gen();
            let mut acc = 0.0;
            let mut pick = None;
            let mut last = net.slots.pass();
            for s in 0..probs.len() {
                if !mask[s] {
                    continue;
                }
                last = s;
                acc += probs[s];
                if u < acc {
                    pick = Some(s);
                    break;
                }
            }
            pick.unwrap_or(last)
        };
        Decision {
            action: resolved[slot].expect("masked slot resolves to an action"),
            prob: probs[slot],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IterationReport {
    pub iteration: usize,
    pub g_hat: f64,
    pub clip: f64,
    pub value_loss: Vec<f64>,
    pub surrogate: f64,
    pub clip_fraction: f64,
    pub policy_samples: usize,
    pub dropped_samples: usize,
    pub eval_reward: f64,
}

impl IterationReport {
    pub fn all_finite(&self) -> bool {
        self.g_hat.is_finite()
            && self.surrogate.is_finite()
            && self.clip_fraction.is_finite()
            && self.eval_reward.is_finite()
            && self.value_loss.iter().all(|l| l.is_finite())
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters with the best evaluation reward seen (the initial policy
    /// when no iteration ran).
    pub policy: PolicyNetwork,
    pub value: ValueNetwork,
    pub best_iteration: usize,
    pub initial_eval_reward: f64,
    pub reports: Vec<IterationReport>,
}

/// Mean daily reward of `policy` on the fixed evaluation streams.
pub fn evaluate_policy(
    cfg: &NetworkConfig,
    policy: &dyn Policy,
    seed: u64,
    trajectories: usize,
    days: u32,
) -> Result<Vec<f64>> {
    let init = initial_state(cfg);
    let traces = rollout_many(cfg, &init, policy, days, seed, EVAL_STREAM_OFFSET, trajectories, TraceLevel::Summary)?;
    Ok(traces.iter().map(EpisodeTrace::mean_daily_reward).collect())
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// Builds the initial networks for `cfg` under `ppo`.
pub fn initial_networks(cfg: &NetworkConfig, ppo: &PpoConfig) -> Result<(PolicyNetwork, ValueNetwork)> {
    let layout = ObservationLayout::new(cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(ppo.seed ^ 0x5eed_0f_9011c7);
    let policy = PolicyNetwork::new(layout.clone(), ActionSlots::for_config(cfg), &ppo.net, &mut rng)?;
    let value = ValueNetwork::new(&layout, &ppo.net, 1.0, &mut rng)?;
    Ok((policy, value))
}

/// Runs Atomic-PPO. With `checkpoint_dir`, every iteration writes
/// `iter_<m>/{policy.bin,value.bin,manifest.json}` and appends one line to
/// `train_log.jsonl`.
pub fn train(cfg: &NetworkConfig, ppo: &PpoConfig, checkpoint_dir: Option<&Path>) -> Result<TrainOutcome> {
    cfg.validate()?;
    ppo.validate()?;
    if ActionSlots::for_config(cfg).len() > 64 {
        return Err(Error::Unsupported("more than 64 action slots".into()));
    }
    let (mut policy, mut value) = initial_networks(cfg, ppo)?;
    let mut rng = ChaCha8Rng::seed_from_u64(ppo.seed ^ 0x0a7_0111c);
    let init = initial_state(cfg);
    let eval = |p: &PolicyNetwork| -> Result<f64> {
        if ppo.eval_trajectories == 0 {
            return Ok(f64::NAN);
        }
        Ok(mean(&evaluate_policy(
            cfg,
            &NeuralPolicy::new(p.clone()),
            ppo.seed,
            ppo.eval_trajectories,
            ppo.eval_days,
        )?))
    };
    let initial_eval = if ppo.policy_iterations == 0 { f64::NAN } else { eval(&policy)? };
    let mut best = (policy.clone(), value.clone(), 0usize, initial_eval);
    let mut since_best = 0usize;
    let mut reports = Vec::new();
    let mut log = match checkpoint_dir {
        Some(d) => {
            std::fs::create_dir_all(d)?;
            Some(std::io::BufWriter::new(std::fs::File::create(d.join("train_log.jsonl"))?))
        }
        None => None,
    };
    let mut value_scaled = false;
    for m in 1..=ppo.policy_iterations {
        let actor = NeuralPolicy::new(policy.clone());
        let first_stream = ((m - 1) * ppo.trajectories_per_iter) as u64;
        let traces = rollout_many(
            cfg,
            &init,
            &actor,
            ppo.days_per_trajectory,
            ppo.seed,
            first_stream,
            ppo.trajectories_per_iter,
            TraceLevel::Full,
        )?;
        let g = estimate_g(&traces)?;
        let vdata = ValueDataset::from_traces(&traces, g)?;
        if !value_scaled {
            let peak = vdata.target.iter().fold(0.0f64, |a, t| a.max(t.abs()));
            value.set_output_scale((2.0 * peak).max(1.0));
            value_scaled = true;
        }
        let value_loss = fit_value(&mut value, &vdata, ppo.value_update_steps, ppo.batch_value, ppo.lr_value, &mut rng)?;
        let mut pdata = PolicyDataset::default();
        for tr in &traces {
            let adv = compute_advantages(tr, &value, g)?;
            pdata.push_trace(tr, &adv);
        }
        if ppo.normalize_advantages {
            pdata.normalize_advantages();
        }
        let clip = ppo.clip_at(m);
        let stats = ppo_update(&mut policy, &pdata, clip, ppo.policy_update_steps, ppo.batch_policy, ppo.lr_policy, &mut rng)?;
        let eval_reward = eval(&policy)?;
        let report = IterationReport {
            iteration: m,
            g_hat: g,
            clip,
            value_loss,
            surrogate: stats.surrogate,
            clip_fraction: stats.clip_fraction,
            policy_samples: pdata.len(),
            dropped_samples: pdata.dropped + stats.dropped,
            eval_reward,
        };
        log::info!(
            "iteration {m}: g={g:.3} eval={eval_reward:.3} clip_frac={:.3}",
            report.clip_fraction
        );
        if let Some(dir) = checkpoint_dir {
            write_checkpoint(&dir.join(format!("iter_{m}")), cfg, ppo, &policy, &value, &report)?;
        }
        if let Some(w) = log.as_mut() {
            let line = serde_json::json!({
                "iteration": m,
                "g_hat": report.g_hat,
                "eval_reward": report.eval_reward,
                "clip_fraction": report.clip_fraction,
            });
            writeln!(w, "{line}")?;
            w.flush()?;
        }
        reports.push(report);
        if eval_reward > best.3 || best.3.is_nan() {
            best = (policy.clone(), value.clone(), m, eval_reward);
            since_best = 0;
        } else {
            since_best += 1;
            if ppo.early_stop_patience.is_some_and(|p| since_best >= p) {
                log::info!("no improvement for {since_best} iterations, stopping");
                break;
            }
        }
    }
    Ok(TrainOutcome {
        policy: best.0,
        value: best.1,
        best_iteration: best.2,
        initial_eval_reward: initial_eval,
        reports,
    })
}

/// Writes one checkpoint directory.
pub fn write_checkpoint(
    dir: &Path,
    cfg: &NetworkConfig,
    ppo: &PpoConfig,
    policy: &PolicyNetwork,
    value: &ValueNetwork,
    report: &IterationReport,
) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let policy_sha = save_netset(&policy.nets, dir, "policy")?;
    let value_sha = save_netset(&value.nets, dir, "value")?;
    let manifest = serde_json::json!({
        "format": "fleetlab-checkpoint-v1",
        "config_hash": cfg.hash(),
        "iteration": report.iteration,
        "eval_reward": report.eval_reward,
        "ppo": ppo,
        "observation": policy.layout.manifest(),
        "action_slots": policy.slots.len(),
        "policy": {"file": "policy.bin", "sha256": policy_sha, "params": policy.nets.num_params()},
        "value": {"file": "value.bin", "sha256": value_sha, "params": value.nets.num_params()},
    });
    std::fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)? + "\n")?;
    Ok(())
}

/// Loads `policy.bin` from a checkpoint directory for `cfg`.
pub fn load_policy(dir: &Path, cfg: &NetworkConfig) -> Result<PolicyNetwork> {
    let path: PathBuf = dir.join("policy.bin");
    let nets = crate::nn::load_netset(&path)?;
    let layout = ObservationLayout::new(cfg);
    let slots = ActionSlots::for_config(cfg);
    let extra = match nets.sharing {
        crate::nn::Sharing::Shared => layout.horizon,
        crate::nn::Sharing::PerTime => 0,
    };
    let want_in = layout.dim() + layout.vehicle_dim() + extra;
    if nets.horizon != cfg.horizon()
        || nets.nets.iter().any(|n| n.input_dim() != want_in || n.output_dim() != slots.len())
    {
        return Err(Error::InvalidArgument(format!(
            "checkpoint {} does not match the network config",
            path.display()
        )));
    }
    Ok(PolicyNetwork { layout, slots, nets })
}
