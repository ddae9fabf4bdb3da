//! Small dense networks with hand-written backpropagation and Adam.
//!
//! Parameters live in one flat `f64` buffer but are kept on the `f32` grid
//! (initialization and every optimizer step round through `f32`), so the
//! 32-bit checkpoint format reproduces a trained network exactly.

use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::VehicleStatus;
use crate::reduction::{encode_vehicle_into, ActionSlots, ObservationLayout};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
    Identity,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Relu => z.max(0.0),
            Activation::Identity => z,
        }
    }

    /// Derivative expressed through the activation's output.
    #[inline]
    fn slope_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }

    fn code(self) -> u8 {
        match self {
            Activation::Tanh => 0,
            Activation::Relu => 1,
            Activation::Identity => 2,
        }
    }

    fn from_code(c: u8) -> Result<Self> {
        match c {
            0 => Ok(Activation::Tanh),
            1 => Ok(Activation::Relu),
            2 => Ok(Activation::Identity),
            _ => Err(Error::Parse {
                line: 0,
                msg: format!("unknown activation code {c}"),
            }),
        }
    }
}

pub const POLICY_ACTIVATIONS: [Activation; 3] = [Activation::Tanh, Activation::Tanh, Activation::Tanh];
pub const VALUE_ACTIVATIONS: [Activation; 3] = [Activation::Tanh, Activation::Relu, Activation::Tanh];

/// Shape of one network. The last activation is applied to the output and
/// then multiplied by `output_scale`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub input: usize,
    pub hidden: Vec<usize>,
    pub output: usize,
    pub activations: Vec<Activation>,
    pub output_scale: f64,
}

impl MlpSpec {
    pub fn sizes(&self) -> Vec<usize> {
        let mut s = Vec::with_capacity(self.hidden.len() + 2);
        s.push(self.input);
        s.extend_from_slice(&self.hidden);
        s.push(self.output);
        s
    }

    pub fn num_params(&self) -> usize {
        self.sizes().windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    pub fn validate(&self) -> Result<()> {
        let sizes = self.sizes();
        if sizes.iter().any(|&n| n == 0) {
            return Err(Error::InvalidArgument("layer widths must be positive".into()));
        }
        if self.activations.len() != sizes.len() - 1 {
            return Err(Error::InvalidArgument(format!(
                "{} activations for {} layers",
                self.activations.len(),
                sizes.len() - 1
            )));
        }
        if !(self.output_scale.is_finite() && self.output_scale > 0.0) {
            return Err(Error::InvalidArgument("output scale must be positive".into()));
        }
        Ok(())
    }
}

/// Per-layer activations from one forward pass, reused across calls.
#[derive(Debug, Clone, Default)]
pub struct Cache {
    acts: Vec<Vec<f64>>,
    scaled: Vec<f64>,
    delta: Vec<f64>,
    delta_prev: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    spec: MlpSpec,
    sizes: Vec<usize>,
    /// Start of each layer's weights; biases follow the weights.
    offsets: Vec<usize>,
    params: Vec<f64>,
}

impl Mlp {
    pub fn zeros(spec: MlpSpec) -> Result<Self> {
        spec.validate()?;
        let sizes = spec.sizes();
        let mut offsets = Vec::with_capacity(sizes.len() - 1);
        let mut at = 0;
        for w in sizes.windows(2) {
            offsets.push(at);
            at += w[0] * w[1] + w[1];
        }
        Ok(Self {
            spec,
            sizes,
            offsets,
            params: vec![0.0; at],
        })
    }

    /// Glorot-uniform weights, zero biases.
    pub fn glorot<R: Rng + ?Sized>(spec: MlpSpec, rng: &mut R) -> Result<Self> {
        let mut net = Self::zeros(spec)?;
        for l in 0..net.num_layers() {
            let (n_in, n_out) = (net.sizes[l], net.sizes[l + 1]);
            let limit = (6.0 / (n_in + n_out) as f64).sqrt();
            let off = net.offsets[l];
            for p in &mut net.params[off..off + n_in * n_out] {
                *p = f64::from(rng.gen_range(-limit..limit) as f32);
            }
        }
        Ok(net)
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn num_layers(&self) -> usize {
        self.sizes.len() - 1
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        self.sizes[self.sizes.len() - 1]
    }

    /// Forward pass storing activations in `cache`; returns the output.
    pub fn forward_cached<'c>(&self, x: &[f64], cache: &'c mut Cache) -> &'c [f64] {
        assert_eq!(x.len(), self.sizes[0], "input width");
        let layers = self.num_layers();
        cache.acts.resize_with(layers + 1, Vec::new);
        cache.acts[0].clear();
        cache.acts[0].extend_from_slice(x);
        for l in 0..layers {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let off = self.offsets[l];
            let w = &self.params[off..off + n_in * n_out];
            let b = &self.params[off + n_in * n_out..off + n_in * n_out + n_out];
            let act = self.spec.activations[l];
            let (head, tail) = cache.acts.split_at_mut(l + 1);
            let input = &head[l];
            let out = &mut tail[0];
            out.clear();
            for o in 0..n_out {
                let row = &w[o * n_in..(o + 1) * n_in];
                let z = b[o] + row.iter().zip(input).map(|(a, b)| a * b).sum::<f64>();
                out.push(act.apply(z));
            }
        }
        let scale = self.spec.output_scale;
        if scale != 1.0 {
            cache.scaled.clear();
            cache.scaled.extend(cache.acts[layers].iter().map(|y| y * scale));
            return &cache.scaled;
        }
        &cache.acts[layers]
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let mut cache = Cache::default();
        self.forward_cached(x, &mut cache).to_vec()
    }

    /// Accumulates `d loss / d params` into `grad` given `d loss / d output`
    /// for the input last passed through `forward_cached`.
    pub fn backward(&self, cache: &mut Cache, d_out: &[f64], grad: &mut [f64]) {
        let layers = self.num_layers();
        assert_eq!(d_out.len(), self.output_dim());
        assert_eq!(grad.len(), self.params.len());
        let scale = self.spec.output_scale;
        let mut delta = std::mem::take(&mut cache.delta);
        let mut delta_prev = std::mem::take(&mut cache.delta_prev);
        delta.clear();
        let act = self.spec.activations[layers - 1];
        delta.extend(
            d_out
                .iter()
                .zip(&cache.acts[layers])
                .map(|(g, y)| g * scale * act.slope_from_output(*y)),
        );
        for l in (0..layers).rev() {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let off = self.offsets[l];
            let input = &cache.acts[l];
            {
                let (gw, gb) = grad[off..off + n_in * n_out + n_out].split_at_mut(n_in * n_out);
                for o in 0..n_out {
                    let d = delta[o];
                    if d == 0.0 {
                        continue;
                    }
                    gb[o] += d;
                    for (g, x) in gw[o * n_in..(o + 1) * n_in].iter_mut().zip(input) {
                        *g += d * x;
                    }
                }
            }
            if l == 0 {
                break;
            }
            let w = &self.params[off..off + n_in * n_out];
            delta_prev.clear();
            delta_prev.resize(n_in, 0.0);
            for o in 0..n_out {
                let d = delta[o];
                if d == 0.0 {
                    continue;
                }
                for (dp, wi) in delta_prev.iter_mut().zip(&w[o * n_in..(o + 1) * n_in]) {
                    *dp += d * wi;
                }
            }
            let act = self.spec.activations[l - 1];
            for (dp, y) in delta_prev.iter_mut().zip(input) {
                *dp *= act.slope_from_output(*y);
            }
            std::mem::swap(&mut delta, &mut delta_prev);
        }
        cache.delta = delta;
        cache.delta_prev = delta_prev;
    }

    pub fn all_finite(&self) -> bool {
        self.params.iter().all(|p| p.is_finite())
    }
}

/// Adam with bias correction. Updated parameters are rounded to the `f32`
/// grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl Adam {
    pub fn new(num_params: usize, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; num_params],
            v: vec![0.0; num_params],
            t: 0,
        }
    }

    /// One descent step on `params` along `grad`.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grad.len(), self.m.len());
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let upd = self.lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + self.eps);
            params[i] = f64::from((params[i] - upd) as f32);
        }
    }
}

/// Softmax restricted to `mask`; masked entries get exactly zero.
pub fn masked_softmax(logits: &[f64], mask: &[bool]) -> Result<Vec<f64>> {
    let mut out = vec![0.0; logits.len()];
    masked_softmax_into(logits, mask, &mut out)?;
    Ok(out)
}

pub fn masked_softmax_into(logits: &[f64], mask: &[bool], out: &mut [f64]) -> Result<()> {
    assert_eq!(logits.len(), mask.len());
    let max = logits
        .iter()
        .zip(mask)
        .filter(|(_, &m)| m)
        .map(|(l, _)| *l)
        .fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(Error::ContractViolation("all actions masked".into()));
    }
    if !max.is_finite() {
        return Err(Error::Numeric("non-finite logit".into()));
    }
    let mut sum = 0.0;
    for i in 0..logits.len() {
        out[i] = if mask[i] { (logits[i] - max).exp() } else { 0.0 };
        sum += out[i];
    }
    for p in out.iter_mut() {
        *p /= sum;
    }
    Ok(())
}

/// One network per time of day, or one network shared across the day with a
/// one-hot time encoding appended to its input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Sharing {
    PerTime,
    Shared,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetSet {
    pub sharing: Sharing,
    pub horizon: usize,
    pub nets: Vec<Mlp>,
}

impl NetSet {
    /// `base_input` excludes the time one-hot.
    pub fn glorot<R: Rng + ?Sized>(
        sharing: Sharing,
        horizon: usize,
        base_input: usize,
        hidden: &[usize],
        output: usize,
        activations: &[Activation],
        output_scale: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let (count, input) = match sharing {
            Sharing::PerTime => (horizon, base_input),
            Sharing::Shared => (1, base_input + horizon),
        };
        let spec = MlpSpec {
            input,
            hidden: hidden.to_vec(),
            output,
            activations: activations.to_vec(),
            output_scale,
        };
        let nets = (0..count)
            .map(|_| Mlp::glorot(spec.clone(), rng))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { sharing, horizon, nets })
    }

    pub fn net_index(&self, t: usize) -> usize {
        match self.sharing {
            Sharing::PerTime => t % self.horizon,
            Sharing::Shared => 0,
        }
    }

    pub fn net(&self, t: usize) -> &Mlp {
        &self.nets[self.net_index(t)]
    }

    /// Writes the network input for time `t` given its base features.
    pub fn input_into(&self, t: usize, parts: &[&[f64]], out: &mut Vec<f64>) {
        out.clear();
        for p in parts {
            out.extend_from_slice(p);
        }
        if self.sharing == Sharing::Shared {
            let at = out.len();
            out.resize(at + self.horizon, 0.0);
            out[at + t % self.horizon] = 1.0;
        }
    }

    pub fn num_params(&self) -> usize {
        self.nets.iter().map(Mlp::num_params).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.nets.iter().all(Mlp::all_finite)
    }

    /// Self-describing binary checkpoint: magic `FLNN`, version, sharing,
    /// horizon, net count, then per net its sizes, activation codes, output
    /// scale and little-endian `f32` parameters.
    pub fn write_to<W: Write>(&self, mut out: W) -> Result<()> {
        out.write_all(b"FLNN")?;
        out.write_all(&1u32.to_le_bytes())?;
        out.write_all(&[u8::from(self.sharing == Sharing::Shared), 0, 0, 0])?;
        out.write_all(&(self.horizon as u32).to_le_bytes())?;
        out.write_all(&(self.nets.len() as u32).to_le_bytes())?;
        for net in &self.nets {
            out.write_all(&(net.sizes.len() as u32).to_le_bytes())?;
            for &s in &net.sizes {
                out.write_all(&(s as u32).to_le_bytes())?;
            }
            for a in &net.spec.activations {
                out.write_all(&[a.code()])?;
            }
            out.write_all(&net.spec.output_scale.to_le_bytes())?;
            for &p in &net.params {
                out.write_all(&(p as f32).to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut input: R) -> Result<Self> {
        fn u32_of<R: Read>(r: &mut R) -> Result<u32> {
            let mut b = [0u8; 4];
            r.read_exact(&mut b)?;
            Ok(u32::from_le_bytes(b))
        }
        let bad = |msg: &str| Error::Parse {
            line: 0,
            msg: msg.to_string(),
        };
        let mut magic = [0u8; 4];
        input.read_exact(&mut magic)?;
        if &magic != b"FLNN" {
            return Err(bad("not a network checkpoint"));
        }
        if u32_of(&mut input)? != 1 {
            return Err(bad("unsupported checkpoint version"));
        }
        let mut flags = [0u8; 4];
        input.read_exact(&mut flags)?;
        let sharing = if flags[0] == 1 { Sharing::Shared } else { Sharing::PerTime };
        let horizon = u32_of(&mut input)? as usize;
        let count = u32_of(&mut input)? as usize;
        let mut nets = Vec::with_capacity(count);
        for _ in 0..count {
            let n = u32_of(&mut input)? as usize;
            if !(2..=64).contains(&n) {
                return Err(bad("implausible layer count"));
            }
            let sizes = (0..n).map(|_| u32_of(&mut input).map(|s| s as usize)).collect::<Result<Vec<_>>>()?;
            let mut codes = vec![0u8; n - 1];
            input.read_exact(&mut codes)?;
            let activations = codes.into_iter().map(Activation::from_code).collect::<Result<Vec<_>>>()?;
            let mut sb = [0u8; 8];
            input.read_exact(&mut sb)?;
            let spec = MlpSpec {
                input: sizes[0],
                hidden: sizes[1..n - 1].to_vec(),
                output: sizes[n - 1],
                activations,
                output_scale: f64::from_le_bytes(sb),
            };
            let mut net = Mlp::zeros(spec)?;
            let mut buf = vec![0u8; 4 * net.params.len()];
            input.read_exact(&mut buf)?;
            for (p, c) in net.params.iter_mut().zip(buf.chunks_exact(4)) {
                *p = f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]]));
            }
            nets.push(net);
        }
        Ok(Self { sharing, horizon, nets })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut v = Vec::new();
        self.write_to(&mut v).expect("writing to a Vec cannot fail");
        v
    }
}

/// Network defaults independent of the training loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetConfig {
    pub hidden: Vec<usize>,
    pub sharing: Sharing,
    /// Bound on policy logits (the last tanh is scaled by this).
    pub logit_scale: f64,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            hidden: vec![128, 128],
            sharing: Sharing::PerTime,
            logit_scale: 4.0,
        }
    }
}

/// Policy network: reduced observation plus vehicle encoding in, one logit
/// per action slot out.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyNetwork {
    pub layout: ObservationLayout,
    pub slots: ActionSlots,
    pub nets: NetSet,
}

/// Scratch buffers for repeated policy evaluation.
#[derive(Debug, Clone, Default)]
pub struct PolicyScratch {
    pub vehicle: Vec<f64>,
    pub input: Vec<f64>,
    pub cache: Cache,
    pub probs: Vec<f64>,
}

impl PolicyNetwork {
    pub fn new<R: Rng + ?Sized>(layout: ObservationLayout, slots: ActionSlots, net: &NetConfig, rng: &mut R) -> Result<Self> {
        let base = layout.dim() + layout.vehicle_dim();
        let nets = NetSet::glorot(
            net.sharing,
            layout.horizon,
            base,
            &net.hidden,
            slots.len(),
            &POLICY_ACTIVATIONS,
            net.logit_scale,
            rng,
        )?;
        Ok(Self { layout, slots, nets })
    }

    /// Writes the network input for `(t, observation, vehicle)` into
    /// `scratch.input`.
    pub fn prepare(&self, t: usize, observation: &[f64], vehicle: &VehicleStatus, scratch: &mut PolicyScratch) {
        scratch.vehicle.resize(self.layout.vehicle_dim(), 0.0);
        encode_vehicle_into(&self.layout, vehicle, &mut scratch.vehicle);
        self.nets
            .input_into(t, &[observation, &scratch.vehicle], &mut scratch.input);
    }

    /// Action-slot probabilities; infeasible slots are exactly zero.
    pub fn probabilities(
        &self,
        t: usize,
        observation: &[f64],
        vehicle: &VehicleStatus,
        mask: &[bool],
        scratch: &mut PolicyScratch,
    ) -> Result<()> {
        self.prepare(t, observation, vehicle, scratch);
        let net = self.nets.net(t);
        let logits = net.forward_cached(&scratch.input, &mut scratch.cache);
        scratch.probs.resize(logits.len(), 0.0);
        masked_softmax_into(logits, mask, &mut scratch.probs)
    }
}

/// Value network: reduced observation in, scalar out.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueNetwork {
    pub nets: NetSet,
}

impl ValueNetwork {
    pub fn new<R: Rng + ?Sized>(layout: &ObservationLayout, net: &NetConfig, output_scale: f64, rng: &mut R) -> Result<Self> {
        Ok(Self {
            nets: NetSet::glorot(
                net.sharing,
                layout.horizon,
                layout.dim(),
                &net.hidden,
                1,
                &VALUE_ACTIVATIONS,
                output_scale,
                rng,
            )?,
        })
    }

    pub fn value(&self, t: usize, observation: &[f64], input: &mut Vec<f64>, cache: &mut Cache) -> f64 {
        self.nets.input_into(t, &[observation], input);
        self.nets.net(t).forward_cached(input, cache)[0]
    }

    /// Rescales the output range; the network is reinitialized only in the
    /// sense that its scale changes, weights are kept.
    pub fn set_output_scale(&mut self, scale: f64) {
        for n in &mut self.nets.nets {
            n.spec.output_scale = scale;
        }
    }

    pub fn output_scale(&self) -> f64 {
        self.nets.nets[0].spec.output_scale
    }
}

/// Writes `<dir>/<stem>.bin`; returns the SHA-256 hex of its contents.
pub fn save_netset(nets: &NetSet, dir: &Path, stem: &str) -> Result<String> {
    let bytes = nets.to_bytes();
    std::fs::write(dir.join(format!("{stem}.bin")), &bytes)?;
    Ok(hex_digest(&bytes))
}

pub fn load_netset(path: &Path) -> Result<NetSet> {
    if !path.exists() {
        return Err(Error::MissingArtifact(path.display().to_string()));
    }
    NetSet::read_from(std::io::BufReader::new(std::fs::File::open(path)?))
}

pub fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}
