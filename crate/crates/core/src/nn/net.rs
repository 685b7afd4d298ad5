use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::params::ParamStore;
use crate::error::{input, Error, Result};

/// What the network output stands for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PredictionKind {
    /// Predicts the injected Gaussian noise.
    Epsilon,
    /// Predicts the interpolant velocity (noise minus data for rectified flow).
    Velocity,
}

impl PredictionKind {
    pub fn as_str(self) -> &'static str {
        match self {
            PredictionKind::Epsilon => "epsilon",
            PredictionKind::Velocity => "velocity",
        }
    }
}

impl fmt::Display for PredictionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PredictionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "epsilon" => Ok(PredictionKind::Epsilon),
            "velocity" => Ok(PredictionKind::Velocity),
            other => input(format!("unknown prediction kind '{other}'")),
        }
    }
}

/// Discrete conditioning id, or the null (unconditional) condition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Condition(Option<usize>);

impl Condition {
    pub const NULL: Condition = Condition(None);

    pub fn new(id: usize) -> Self {
        Condition(Some(id))
    }

    pub fn id(self) -> Option<usize> {
        self.0
    }

    pub fn is_null(self) -> bool {
        self.0.is_none()
    }
}

impl From<usize> for Condition {
    fn from(id: usize) -> Self {
        Condition(Some(id))
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.0 {
            Some(id) => write!(f, "{id}"),
            None => f.write_str("null"),
        }
    }
}

/// Architecture of a [`DenoiserNet`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetSpec {
    pub kind: PredictionKind,
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    /// Width of the sinusoidal time features; the condition embedding uses
    /// the same width.
    pub time_embed_dim: usize,
    pub condition_count: usize,
}

impl NetSpec {
    pub fn new(kind: PredictionKind, input_dim: usize, hidden_dims: Vec<usize>, condition_count: usize) -> Self {
        Self { kind, input_dim, hidden_dims, time_embed_dim: 16, condition_count }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return input("input_dim must be positive");
        }
        if self.hidden_dims.contains(&0) {
            return input("hidden layer widths must be positive");
        }
        if self.time_embed_dim == 0 || !self.time_embed_dim.is_multiple_of(2) {
            return input("time_embed_dim must be a positive even number");
        }
        Ok(())
    }

    fn features(&self) -> usize {
        self.input_dim + 2 * self.time_embed_dim
    }
}

#[derive(Debug, Clone)]
struct Dense {
    weight: std::ops::Range<usize>,
    bias: std::ops::Range<usize>,
    fan_in: usize,
    fan_out: usize,
}

/// Cached activations of one forward pass, consumed by the backward pass.
#[derive(Debug, Clone)]
pub struct Tape {
    cond_row: usize,
    param_count: usize,
    /// Layer inputs: `acts[0]` is the concatenated feature vector, `acts[l]`
    /// the post-tanh output of hidden layer `l - 1`.
    acts: Vec<Vec<f64>>,
}

/// MLP over `[z, sin/cos time features, condition embedding]` with tanh
/// hidden layers and a linear head.
///
/// The head is zero-initialised, so a fresh network predicts zero.
#[derive(Debug, Clone)]
pub struct DenoiserNet {
    spec: NetSpec,
    params: ParamStore,
    cond_embed: std::ops::Range<usize>,
    layers: Vec<Dense>,
    freqs: Vec<f64>,
}

impl DenoiserNet {
    /// Builds a network with hidden layers drawn uniformly in
    /// `±1/sqrt(fan_in)` and a zero head.
    pub fn new(spec: NetSpec, seed: u64) -> Result<Self> {
        let mut net = Self::zeroed(spec)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (values, _) = net.params.split_mut();
        for v in &mut values[net.cond_embed.clone()] {
            *v = rng.gen_range(-1.0..1.0);
        }
        let hidden = net.layers.len() - 1;
        for layer in &net.layers[..hidden] {
            let bound = 1.0 / (layer.fan_in as f64).sqrt();
            for v in &mut values[layer.weight.clone()] {
                *v = rng.gen_range(-bound..bound);
            }
            for v in &mut values[layer.bias.clone()] {
                *v = rng.gen_range(-bound..bound);
            }
        }
        Ok(net)
    }

    /// Builds a network with every parameter set to zero.
    pub fn zeroed(spec: NetSpec) -> Result<Self> {
        spec.validate()?;
        let mut params = ParamStore::new();
        let cond_embed = params.push("cond_embed", (spec.condition_count + 1) * spec.time_embed_dim);
        let mut layers = Vec::new();
        let mut fan_in = spec.features();
        let widths: Vec<usize> = spec.hidden_dims.iter().copied().chain([spec.input_dim]).collect();
        let last = widths.len() - 1;
        for (i, &fan_out) in widths.iter().enumerate() {
            let name = if i == last { "out".to_string() } else { format!("hidden{i}") };
            let weight = params.push(format!("{name}.weight"), fan_out * fan_in);
            let bias = params.push(format!("{name}.bias"), fan_out);
            layers.push(Dense { weight, bias, fan_in, fan_out });
            fan_in = fan_out;
        }
        let half = spec.time_embed_dim / 2;
        let freqs = (0..half)
            .map(|i| if half == 1 { 1.0 } else { (100f64.ln() * i as f64 / (half - 1) as f64).exp() })
            .collect();
        Ok(Self { spec, params, cond_embed, layers, freqs })
    }

    pub fn spec(&self) -> &NetSpec {
        &self.spec
    }

    pub fn kind(&self) -> PredictionKind {
        self.spec.kind
    }

    pub fn input_dim(&self) -> usize {
        self.spec.input_dim
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    fn cond_row(&self, cond: Condition) -> Result<usize> {
        match cond.id() {
            None => Ok(self.spec.condition_count),
            Some(id) if id < self.spec.condition_count => Ok(id),
            Some(id) => input(format!("condition {id} out of range (count {})", self.spec.condition_count)),
        }
    }

    fn features(&self, z: &[f64], t: f64, cond: Condition) -> Result<(Vec<f64>, usize)> {
        if z.len() != self.spec.input_dim {
            return input(format!("expected input of dimension {}, got {}", self.spec.input_dim, z.len()));
        }
        if !(0.0..=1.0).contains(&t) {
            return input(format!("time {t} outside [0, 1]"));
        }
        let row = self.cond_row(cond)?;
        let e = self.spec.time_embed_dim;
        let mut h = Vec::with_capacity(self.spec.features());
        h.extend_from_slice(z);
        h.extend(self.freqs.iter().map(|w| (w * t).sin()));
        h.extend(self.freqs.iter().map(|w| (w * t).cos()));
        let start = self.cond_embed.start + row * e;
        h.extend_from_slice(&self.params.values()[start..start + e]);
        Ok((h, row))
    }

    fn run(&self, h0: Vec<f64>, keep: bool) -> (Vec<f64>, Vec<Vec<f64>>) {
        let values = self.params.values();
        let last = self.layers.len() - 1;
        let mut acts = Vec::with_capacity(if keep { self.layers.len() } else { 0 });
        let mut h = h0;
        for (l, layer) in self.layers.iter().enumerate() {
            let w = &values[layer.weight.clone()];
            let b = &values[layer.bias.clone()];
            let mut out = Vec::with_capacity(layer.fan_out);
            for o in 0..layer.fan_out {
                let row = &w[o * layer.fan_in..(o + 1) * layer.fan_in];
                let pre = b[o] + row.iter().zip(&h).map(|(a, x)| a * x).sum::<f64>();
                out.push(if l == last { pre } else { pre.tanh() });
            }
            let prev = std::mem::replace(&mut h, out);
            if keep {
                acts.push(prev);
            }
        }
        (h, acts)
    }

    /// Predicts ε̂ or û for state `z` at time `t` under `cond`.
    pub fn forward(&self, z: &[f64], t: f64, cond: Condition) -> Result<Vec<f64>> {
        let (h0, _) = self.features(z, t, cond)?;
        Ok(self.run(h0, false).0)
    }

    /// Same as [`forward`](Self::forward) but also returns the tape needed by
    /// [`backward`](Self::backward).
    pub fn forward_with_tape(&self, z: &[f64], t: f64, cond: Condition) -> Result<(Vec<f64>, Tape)> {
        let (h0, cond_row) = self.features(z, t, cond)?;
        let (out, acts) = self.run(h0, true);
        Ok((out, Tape { cond_row, param_count: self.params.len(), acts }))
    }

    /// Accumulates the vector-Jacobian product `upstreamᵀ ∂out/∂θ` into the
    /// parameter gradients.
    pub fn backward(&mut self, tape: &Tape, upstream: &[f64]) -> Result<()> {
        let mut grads = Vec::new();
        self.params.swap_grads(&mut grads);
        let res = self.backward_into(tape, upstream, &mut grads);
        self.params.swap_grads(&mut grads);
        res
    }

    /// Like [`backward`](Self::backward) but accumulates into an external
    /// buffer, leaving the network untouched.
    pub fn backward_into(&self, tape: &Tape, upstream: &[f64], grads: &mut [f64]) -> Result<()> {
        if tape.param_count != self.params.len() || tape.acts.len() != self.layers.len() {
            return Err(Error::State("tape was recorded on a different network".into()));
        }
        if upstream.len() != self.spec.input_dim {
            return input(format!("upstream has dimension {}, expected {}", upstream.len(), self.spec.input_dim));
        }
        if grads.len() != self.params.len() {
            return input("gradient buffer length does not match parameter count");
        }
        let values = self.params.values();
        let mut delta = upstream.to_vec();
        for (l, layer) in self.layers.iter().enumerate().rev() {
            let x = &tape.acts[l];
            let w = &values[layer.weight.clone()];
            let mut dx = vec![0.0; layer.fan_in];
            for (o, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                grads[layer.bias.start + o] += d;
                let base = layer.weight.start + o * layer.fan_in;
                let row = &w[o * layer.fan_in..(o + 1) * layer.fan_in];
                for i in 0..layer.fan_in {
                    grads[base + i] += d * x[i];
                    dx[i] += d * row[i];
                }
            }
            if l > 0 {
                // x is the tanh output of the previous layer
                delta = dx.iter().zip(x).map(|(g, h)| g * (1.0 - h * h)).collect();
            } else {
                let e = self.spec.time_embed_dim;
                let offset = self.spec.input_dim + e;
                let start = self.cond_embed.start + tape.cond_row * e;
                for j in 0..e {
                    grads[start + j] += dx[offset + j];
                }
            }
        }
        Ok(())
    }
}
