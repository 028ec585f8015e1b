//! Feed-forward Gaussian policy.
//!
//! Hidden layers are dense with (normally) `tanh` activations. Two heads read
//! the last hidden layer: a ReLU6 mean head whose `[0, 6]` output is mapped
//! affinely onto the actuator range, and a LeakyReLU std head whose output is
//! scaled the same way, passed through `|.|` and floored at `std_floor`.
//!
//! All parameters live in one flat vector so optimizers and gradient
//! accumulators can treat them as a plain slice. Gradients returned by
//! [`PolicyNetwork::grad_log_prob`] share that layout.

use std::f64::consts::PI;
use std::ops::Range;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::env::ObsNormalizer;
use crate::error::{Error, Result};

/// Negative-side slope of the LeakyReLU activation.
pub const LEAKY_SLOPE: f64 = 0.01;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    #[serde(rename = "relu6")]
    Relu6,
    LeakyRelu,
    Linear,
}

impl Activation {
    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Relu6 => z.clamp(0.0, 6.0),
            Activation::LeakyRelu => {
                if z > 0.0 {
                    z
                } else {
                    LEAKY_SLOPE * z
                }
            }
            Activation::Linear => z,
        }
    }

    /// Derivative given the pre-activation `z` and output `a`. Kinks resolve
    /// to 0 for ReLU6 (at 0 and 6) and to the leak slope for LeakyReLU.
    #[inline]
    pub fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - a * a,
            Activation::Relu6 => {
                if z > 0.0 && z < 6.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::LeakyRelu => {
                if z > 0.0 {
                    1.0
                } else {
                    LEAKY_SLOPE
                }
            }
            Activation::Linear => 1.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerSpec {
    pub width: usize,
    pub activation: Activation,
}

impl LayerSpec {
    pub fn new(width: usize, activation: Activation) -> Self {
        Self { width, activation }
    }
}

/// Gaussian over the controls, in physical units.
#[derive(Clone, Debug, PartialEq)]
pub struct ControlDistribution {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub low: Vec<f64>,
    pub high: Vec<f64>,
}

/// One draw from a [`ControlDistribution`]: the raw Gaussian sample (used for
/// the log-density) and the value clipped to the actuator range (sent to the
/// plant).
#[derive(Clone, Debug, PartialEq)]
pub struct ControlSample {
    pub raw: Vec<f64>,
    pub clipped: Vec<f64>,
}

impl ControlDistribution {
    pub fn n_controls(&self) -> usize {
        self.mean.len()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> ControlSample {
        let raw: Vec<f64> = self
            .mean
            .iter()
            .zip(&self.std)
            .map(|(&m, &s)| {
                let xi: f64 = rng.sample(StandardNormal);
                m + s * xi
            })
            .collect();
        let clipped = self.clip(&raw);
        ControlSample { raw, clipped }
    }

    pub fn clip(&self, u: &[f64]) -> Vec<f64> {
        u.iter()
            .zip(self.low.iter().zip(&self.high))
            .map(|(&x, (&lo, &hi))| x.clamp(lo, hi))
            .collect()
    }

    /// Sum over controls of the Gaussian log-density at `u`.
    pub fn log_prob(&self, u: &[f64]) -> f64 {
        let half_log_2pi = 0.5 * (2.0 * PI).ln();
        self.mean
            .iter()
            .zip(&self.std)
            .zip(u)
            .map(|((&m, &s), &x)| {
                let z = (x - m) / s;
                -0.5 * z * z - s.ln() - half_log_2pi
            })
            .sum()
    }
}

#[derive(Clone, Debug)]
struct Dense {
    n_in: usize,
    n_out: usize,
    activation: Activation,
    w_off: usize,
    b_off: usize,
}

impl Dense {
    fn weights(&self) -> Range<usize> {
        self.w_off..self.w_off + self.n_in * self.n_out
    }

    fn biases(&self) -> Range<usize> {
        self.b_off..self.b_off + self.n_out
    }

    fn eval(&self, params: &[f64], input: &[f64], z: &mut Vec<f64>, a: &mut Vec<f64>) {
        z.clear();
        a.clear();
        let w = &params[self.weights()];
        let b = &params[self.biases()];
        for o in 0..self.n_out {
            let row = &w[o * self.n_in..(o + 1) * self.n_in];
            let s: f64 = row.iter().zip(input).map(|(wi, xi)| wi * xi).sum::<f64>() + b[o];
            z.push(s);
            a.push(self.activation.apply(s));
        }
    }
}

/// Intermediate values kept from a forward pass for backpropagation.
#[derive(Clone, Debug, Default)]
struct ForwardCache {
    inputs: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
    post: Vec<Vec<f64>>,
}

#[derive(Clone, Debug)]
pub struct PolicyNetwork {
    input_dim: usize,
    specs: Vec<LayerSpec>,
    layers: Vec<Dense>,
    params: Vec<f64>,
    action_low: Vec<f64>,
    action_high: Vec<f64>,
    std_floor: Vec<f64>,
    normalizer: Option<ObsNormalizer>,
}

impl PartialEq for PolicyNetwork {
    fn eq(&self, other: &Self) -> bool {
        self.input_dim == other.input_dim
            && self.specs == other.specs
            && self.params == other.params
            && self.action_low == other.action_low
            && self.action_high == other.action_high
            && self.std_floor == other.std_floor
            && self.normalizer == other.normalizer
    }
}

/// Builder-style description used to create a fresh network.
#[derive(Clone, Debug)]
pub struct NetworkShape {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub action_low: Vec<f64>,
    pub action_high: Vec<f64>,
    /// Std floor as a fraction of each control's range.
    pub std_floor_frac: f64,
}

impl NetworkShape {
    pub fn new(input_dim: usize, hidden: Vec<usize>, action_low: Vec<f64>, action_high: Vec<f64>) -> Self {
        Self {
            input_dim,
            hidden,
            action_low,
            action_high,
            std_floor_frac: 0.01,
        }
    }

    fn layer_specs(&self) -> Vec<LayerSpec> {
        let n = self.action_low.len();
        let mut specs: Vec<LayerSpec> = self
            .hidden
            .iter()
            .map(|&w| LayerSpec::new(w, Activation::Tanh))
            .collect();
        specs.push(LayerSpec::new(n, Activation::Relu6));
        specs.push(LayerSpec::new(n, Activation::LeakyRelu));
        specs
    }
}

impl PolicyNetwork {
    /// Network with every weight and bias set to zero.
    pub fn zeros(shape: &NetworkShape) -> Result<Self> {
        let floor = shape
            .action_low
            .iter()
            .zip(&shape.action_high)
            .map(|(lo, hi)| shape.std_floor_frac * (hi - lo))
            .collect();
        Self::from_parts(
            shape.input_dim,
            shape.layer_specs(),
            None,
            shape.action_low.clone(),
            shape.action_high.clone(),
            floor,
        )
    }

    /// Uniform `[-1/sqrt(fan_in), 1/sqrt(fan_in)]` initialization. The mean
    /// head bias starts at 3 (mid-range of ReLU6) and the std head bias at 0.6
    /// (a tenth of the actuator range), so neither head begins in a flat
    /// region.
    pub fn init<R: Rng + ?Sized>(shape: &NetworkShape, rng: &mut R) -> Result<Self> {
        let mut net = Self::zeros(shape)?;
        let n_layers = net.layers.len();
        for (li, layer) in net.layers.iter().enumerate() {
            let bound = 1.0 / (layer.n_in as f64).sqrt();
            for p in &mut net.params[layer.weights()] {
                *p = rng.gen_range(-bound..=bound);
            }
            for p in &mut net.params[layer.biases()] {
                *p = if li == n_layers - 2 {
                    3.0
                } else if li == n_layers - 1 {
                    0.6
                } else {
                    rng.gen_range(-bound..=bound)
                };
            }
        }
        Ok(net)
    }

    fn from_parts(
        input_dim: usize,
        specs: Vec<LayerSpec>,
        params: Option<Vec<f64>>,
        action_low: Vec<f64>,
        action_high: Vec<f64>,
        std_floor: Vec<f64>,
    ) -> Result<Self> {
        if input_dim == 0 {
            return Err(Error::Input("input_dim must be at least 1".into()));
        }
        if specs.len() < 2 {
            return Err(Error::Input("need at least a mean head and a std head".into()));
        }
        if specs.iter().any(|s| s.width == 0) {
            return Err(Error::Input("layer width must be at least 1".into()));
        }
        let n_heads_in = specs.len() - 2;
        let mean_head = specs[specs.len() - 2];
        let std_head = specs[specs.len() - 1];
        if mean_head.activation != Activation::Relu6 || std_head.activation != Activation::LeakyRelu {
            return Err(Error::Input("heads must be relu6 (mean) then leaky_relu (std)".into()));
        }
        let n_controls = mean_head.width;
        if std_head.width != n_controls {
            return Err(Error::Dimension {
                context: "std head width",
                expected: n_controls,
                got: std_head.width,
            });
        }
        for (name, v) in [
            ("action_low", &action_low),
            ("action_high", &action_high),
            ("std_floor", &std_floor),
        ] {
            if v.len() != n_controls {
                return Err(Error::Parse {
                    what: name.into(),
                    msg: format!("expected {n_controls} entries, got {}", v.len()),
                });
            }
        }
        if action_low
            .iter()
            .zip(&action_high)
            .any(|(lo, hi)| !(lo < hi) || !lo.is_finite() || !hi.is_finite())
        {
            return Err(Error::Input("action_low must be strictly below action_high".into()));
        }
        if std_floor.iter().any(|f| !(*f > 0.0) || !f.is_finite()) {
            return Err(Error::Input("std_floor must be positive".into()));
        }

        let mut layers = Vec::with_capacity(specs.len());
        let mut off = 0;
        let mut n_in = input_dim;
        for (i, spec) in specs.iter().enumerate() {
            // both heads read the last hidden layer
            let layer_in = n_in;
            let w_off = off;
            off += layer_in * spec.width;
            let b_off = off;
            off += spec.width;
            layers.push(Dense {
                n_in: layer_in,
                n_out: spec.width,
                activation: spec.activation,
                w_off,
                b_off,
            });
            if i < n_heads_in {
                n_in = spec.width;
            }
        }
        let params = match params {
            Some(p) => {
                if p.len() != off {
                    return Err(Error::Dimension {
                        context: "parameter vector",
                        expected: off,
                        got: p.len(),
                    });
                }
                p
            }
            None => vec![0.0; off],
        };
        Ok(Self {
            input_dim,
            specs,
            layers,
            params,
            action_low,
            action_high,
            std_floor,
            normalizer: None,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn n_controls(&self) -> usize {
        self.action_low.len()
    }

    pub fn layer_specs(&self) -> &[LayerSpec] {
        &self.specs
    }

    pub fn action_low(&self) -> &[f64] {
        &self.action_low
    }

    pub fn action_high(&self) -> &[f64] {
        &self.action_high
    }

    pub fn std_floor(&self) -> &[f64] {
        &self.std_floor
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    /// Index range of layer `l`'s weights (row-major, `out x in`) in the flat
    /// parameter vector. Heads are the last two layers.
    pub fn weight_range(&self, l: usize) -> Range<usize> {
        self.layers[l].weights()
    }

    pub fn bias_range(&self, l: usize) -> Range<usize> {
        self.layers[l].biases()
    }

    pub fn n_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn normalizer(&self) -> Option<&ObsNormalizer> {
        self.normalizer.as_ref()
    }

    pub fn set_normalizer(&mut self, norm: ObsNormalizer) -> Result<()> {
        if norm.dim() != self.input_dim {
            return Err(Error::Dimension {
                context: "normalizer",
                expected: self.input_dim,
                got: norm.dim(),
            });
        }
        self.normalizer = Some(norm);
        Ok(())
    }

    /// Normalizes a raw observation with the stored statistics (identity when
    /// none are attached).
    pub fn prepare(&self, raw_obs: &[f64]) -> Vec<f64> {
        match &self.normalizer {
            Some(n) => n.normalize(raw_obs),
            None => raw_obs.to_vec(),
        }
    }

    fn check_obs(&self, obs: &[f64]) -> Result<()> {
        if obs.len() != self.input_dim {
            return Err(Error::Dimension {
                context: "observation",
                expected: self.input_dim,
                got: obs.len(),
            });
        }
        if obs.iter().any(|x| !x.is_finite()) {
            return Err(Error::Input(format!("non-finite observation {obs:?}")));
        }
        Ok(())
    }

    fn run(&self, obs: &[f64], cache: &mut ForwardCache) -> ControlDistribution {
        let n_hidden = self.layers.len() - 2;
        cache.inputs.clear();
        cache.pre.clear();
        cache.post.clear();
        let mut x = obs.to_vec();
        for layer in &self.layers[..n_hidden] {
            let (mut z, mut a) = (Vec::new(), Vec::new());
            layer.eval(&self.params, &x, &mut z, &mut a);
            cache.inputs.push(std::mem::replace(&mut x, a.clone()));
            cache.pre.push(z);
            cache.post.push(a);
        }
        let mut mean = Vec::new();
        let mut std = Vec::new();
        for layer in &self.layers[n_hidden..] {
            let (mut z, mut a) = (Vec::new(), Vec::new());
            layer.eval(&self.params, &x, &mut z, &mut a);
            cache.inputs.push(x.clone());
            cache.pre.push(z);
            cache.post.push(a);
        }
        let head_mean = &cache.post[n_hidden];
        let head_std = &cache.post[n_hidden + 1];
        for c in 0..self.n_controls() {
            let scale = (self.action_high[c] - self.action_low[c]) / 6.0;
            mean.push(self.action_low[c] + scale * head_mean[c]);
            std.push((scale * head_std[c].abs()).max(self.std_floor[c]));
        }
        ControlDistribution {
            mean,
            std,
            low: self.action_low.clone(),
            high: self.action_high.clone(),
        }
    }

    /// Control distribution for an already-normalized observation.
    pub fn forward(&self, obs: &[f64]) -> Result<ControlDistribution> {
        self.check_obs(obs)?;
        Ok(self.run(obs, &mut ForwardCache::default()))
    }

    /// Backpropagates `d_mean` / `d_std` (sensitivities of a scalar loss to
    /// the emitted mean and std, physical units) to every parameter.
    fn backward(&self, cache: &ForwardCache, d_mean: &[f64], d_std: &[f64]) -> Vec<f64> {
        let mut grad = vec![0.0; self.params.len()];
        self.backward_into(cache, d_mean, d_std, &mut grad);
        grad
    }

    /// As [`Self::backward`] but adds into `grad`.
    fn backward_into(&self, cache: &ForwardCache, d_mean: &[f64], d_std: &[f64], grad: &mut [f64]) {
        let n_hidden = self.layers.len() - 2;
        let last_width = if n_hidden == 0 {
            self.input_dim
        } else {
            self.layers[n_hidden - 1].n_out
        };
        let mut d_x = vec![0.0; last_width];

        for (h, d_out) in [(n_hidden, d_mean), (n_hidden + 1, d_std)] {
            if d_out.iter().all(|&d| d == 0.0) {
                continue;
            }
            let layer = &self.layers[h];
            let z = &cache.pre[h];
            let a = &cache.post[h];
            let d_z: Vec<f64> = (0..layer.n_out)
                .map(|c| {
                    let scale = (self.action_high[c] - self.action_low[c]) / 6.0;
                    let local = if h == n_hidden {
                        scale * layer.activation.derivative(z[c], a[c])
                    } else if scale * a[c].abs() > self.std_floor[c] {
                        scale * a[c].signum() * layer.activation.derivative(z[c], a[c])
                    } else {
                        0.0
                    };
                    d_out[c] * local
                })
                .collect();
            accumulate(layer, &self.params, &cache.inputs[h], &d_z, grad, Some(&mut d_x));
        }

        for h in (0..n_hidden).rev() {
            let layer = &self.layers[h];
            let d_z: Vec<f64> = d_x
                .iter()
                .zip(cache.pre[h].iter().zip(&cache.post[h]))
                .map(|(d, (&z, &a))| d * layer.activation.derivative(z, a))
                .collect();
            let mut d_in = vec![0.0; layer.n_in];
            accumulate(
                layer,
                &self.params,
                &cache.inputs[h],
                &d_z,
                grad,
                (h > 0).then_some(&mut d_in),
            );
            d_x = d_in;
        }
    }

    /// Gradient of `log_prob(forward(obs), u)` with respect to every parameter.
    pub fn grad_log_prob(&self, obs: &[f64], u: &[f64]) -> Result<Vec<f64>> {
        self.check_obs(obs)?;
        if u.len() != self.n_controls() {
            return Err(Error::Dimension {
                context: "control",
                expected: self.n_controls(),
                got: u.len(),
            });
        }
        let mut cache = ForwardCache::default();
        let dist = self.run(obs, &mut cache);
        let (d_mean, d_std): (Vec<f64>, Vec<f64>) = (0..self.n_controls())
            .map(|c| {
                let s = dist.std[c];
                let r = u[c] - dist.mean[c];
                (r / (s * s), r * r / (s * s * s) - 1.0 / s)
            })
            .unzip();
        Ok(self.backward(&cache, &d_mean, &d_std))
    }

    /// Emitted mean together with the gradient of `sum_c w_c * mean_c`.
    pub fn mean_and_grad(&self, obs: &[f64], weights: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        self.check_obs(obs)?;
        let mut cache = ForwardCache::default();
        let dist = self.run(obs, &mut cache);
        let zeros = vec![0.0; self.n_controls()];
        let grad = self.backward(&cache, weights, &zeros);
        Ok((dist.mean, grad))
    }

    /// Adds to `grad` the gradient of `sum_c w_c * mean_c`, where `weights`
    /// computes `w` from the emitted mean. Returns the mean.
    pub fn accumulate_mean_grad<F>(&self, obs: &[f64], weights: F, grad: &mut [f64]) -> Result<Vec<f64>>
    where
        F: FnOnce(&[f64]) -> Result<Vec<f64>>,
    {
        self.check_obs(obs)?;
        let mut cache = ForwardCache::default();
        let dist = self.run(obs, &mut cache);
        let w = weights(&dist.mean)?;
        let zeros = vec![0.0; self.n_controls()];
        self.backward_into(&cache, &w, &zeros, grad);
        Ok(dist.mean)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&NetworkFile::from(self)).expect("network serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let file: NetworkFile = serde_path_to_error::deserialize(de).map_err(|e| Error::Parse {
            what: if e.path().to_string() == "." {
                "network".to_string()
            } else {
                e.path().to_string()
            },
            msg: e.inner().to_string(),
        })?;
        file.into_network()
    }
}

fn accumulate(
    layer: &Dense,
    params: &[f64],
    input: &[f64],
    d_z: &[f64],
    grad: &mut [f64],
    d_input: Option<&mut Vec<f64>>,
) {
    let w_off = layer.w_off;
    for (o, &dz) in d_z.iter().enumerate() {
        if dz == 0.0 {
            continue;
        }
        let row = w_off + o * layer.n_in;
        for (i, &xi) in input.iter().enumerate() {
            grad[row + i] += dz * xi;
        }
        grad[layer.b_off + o] += dz;
    }
    if let Some(d_in) = d_input {
        for (o, &dz) in d_z.iter().enumerate() {
            if dz == 0.0 {
                continue;
            }
            let row = &params[w_off + o * layer.n_in..w_off + (o + 1) * layer.n_in];
            for (d, w) in d_in.iter_mut().zip(row) {
                *d += dz * w;
            }
        }
    }
}

/// On-disk form of a [`PolicyNetwork`]. `obs_mean` / `obs_std` carry the
/// frozen observation normalization when one is attached.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NetworkFile {
    input_dim: usize,
    layers: Vec<LayerSpec>,
    weights: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
    action_low: Vec<f64>,
    action_high: Vec<f64>,
    std_floor: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    obs_mean: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    obs_std: Option<Vec<f64>>,
}

impl From<&PolicyNetwork> for NetworkFile {
    fn from(net: &PolicyNetwork) -> Self {
        Self {
            input_dim: net.input_dim,
            layers: net.specs.clone(),
            weights: net.layers.iter().map(|l| net.params[l.weights()].to_vec()).collect(),
            biases: net.layers.iter().map(|l| net.params[l.biases()].to_vec()).collect(),
            action_low: net.action_low.clone(),
            action_high: net.action_high.clone(),
            std_floor: net.std_floor.clone(),
            obs_mean: net.normalizer.as_ref().map(|n| n.mean().to_vec()),
            obs_std: net.normalizer.as_ref().map(|n| n.std().to_vec()),
        }
    }
}

impl NetworkFile {
    fn into_network(self) -> Result<PolicyNetwork> {
        let bad = |what: &str, msg: String| Error::Parse { what: what.into(), msg };
        if self.weights.len() != self.layers.len() {
            return Err(bad(
                "weights",
                format!("expected {} layers, got {}", self.layers.len(), self.weights.len()),
            ));
        }
        if self.biases.len() != self.layers.len() {
            return Err(bad(
                "biases",
                format!("expected {} layers, got {}", self.layers.len(), self.biases.len()),
            ));
        }
        let mut net = PolicyNetwork::from_parts(
            self.input_dim,
            self.layers,
            None,
            self.action_low,
            self.action_high,
            self.std_floor,
        )
        .map_err(|e| match e {
            e @ Error::Parse { .. } => e,
            other => bad("layers", other.to_string()),
        })?;
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let wr = net.layers[l].weights();
            let br = net.layers[l].biases();
            if w.len() != wr.len() {
                return Err(bad(
                    &format!("weights[{l}]"),
                    format!("expected {} values, got {}", wr.len(), w.len()),
                ));
            }
            if b.len() != br.len() {
                return Err(bad(
                    &format!("biases[{l}]"),
                    format!("expected {} values, got {}", br.len(), b.len()),
                ));
            }
            net.params[wr].copy_from_slice(w);
            net.params[br].copy_from_slice(b);
        }
        match (self.obs_mean, self.obs_std) {
            (Some(mean), Some(std)) => {
                let norm = ObsNormalizer::new(mean, std).map_err(|e| bad("obs_std", e.to_string()))?;
                net.set_normalizer(norm).map_err(|e| bad("obs_mean", e.to_string()))?;
            }
            (None, None) => {}
            (Some(_), None) => return Err(bad("obs_std", "missing while obs_mean is present".into())),
            (None, Some(_)) => return Err(bad("obs_mean", "missing while obs_std is present".into())),
        }
        Ok(net)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tank_shape() -> NetworkShape {
        NetworkShape::new(4, vec![3, 2], vec![0.0], vec![1.0])
    }

    #[test]
    fn zero_network_emits_low_and_floor() {
        let net = PolicyNetwork::zeros(&tank_shape()).unwrap();
        let d = net.forward(&[0.3, -1.0, 2.0, 0.0]).unwrap();
        assert_eq!(d.mean, vec![0.0]);
        assert_eq!(d.std, vec![0.01]);
    }

    #[test]
    fn relu6_saturates_to_action_high() {
        let shape = NetworkShape::new(1, vec![], vec![200.0], vec![500.0]);
        let mut net = PolicyNetwork::zeros(&shape).unwrap();
        let b = net.bias_range(0);
        net.params_mut()[b][0] = 7.0;
        let d = net.forward(&[0.0]).unwrap();
        assert_eq!(d.mean, vec![500.0]);
        let b = net.bias_range(0);
        net.params_mut()[b][0] = 3.0;
        assert_eq!(net.forward(&[0.0]).unwrap().mean, vec![350.0]);
    }

    #[test]
    fn tanh_of_zero_propagates_zero() {
        let shape = NetworkShape::new(1, vec![1], vec![0.0], vec![1.0]);
        let mut net = PolicyNetwork::zeros(&shape).unwrap();
        let w = net.weight_range(0);
        net.params_mut()[w][0] = 1.0;
        let d = net.forward(&[0.0]).unwrap();
        assert_eq!(d.mean, vec![0.0]);
        assert_eq!(d.std, vec![0.01]);
    }

    #[test]
    fn forward_rejects_bad_input() {
        let net = PolicyNetwork::zeros(&tank_shape()).unwrap();
        assert!(matches!(net.forward(&[0.0; 3]), Err(Error::Dimension { .. })));
        assert!(matches!(net.forward(&[0.0, f64::NAN, 0.0, 0.0]), Err(Error::Input(_))));
    }

    #[test]
    fn gaussian_log_prob_constants() {
        let d = ControlDistribution {
            mean: vec![0.4],
            std: vec![1.0],
            low: vec![-10.0],
            high: vec![10.0],
        };
        assert!((d.log_prob(&[0.4]) + 0.918_938_533_204_672_7).abs() < 1e-12);
        let d2 = ControlDistribution {
            std: vec![2.5],
            ..d.clone()
        };
        let expect = -0.5 * (2.0 * PI).ln() - 2.5f64.ln() - 0.5;
        assert!((d2.log_prob(&[2.9]) - expect).abs() < 1e-12);
        let d3 = ControlDistribution {
            std: vec![2.0],
            ..d.clone()
        };
        assert!((d.log_prob(&[0.4]) - d3.log_prob(&[0.4]) - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn sample_is_seeded_and_clipped() {
        let d = ControlDistribution {
            mean: vec![1.0],
            std: vec![0.01],
            low: vec![0.0],
            high: vec![1.0],
        };
        let a = d.sample(&mut ChaCha8Rng::seed_from_u64(9));
        let b = d.sample(&mut ChaCha8Rng::seed_from_u64(9));
        assert_eq!(a, b);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            assert!(d.sample(&mut rng).clipped[0] <= 1.0);
        }
    }

    #[test]
    fn sample_mean_converges() {
        let (mu, sigma) = (0.3, 0.05);
        let d = ControlDistribution {
            mean: vec![mu],
            std: vec![sigma],
            low: vec![-100.0],
            high: vec![100.0],
        };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 100_000;
        let s: f64 = (0..n).map(|_| d.sample(&mut rng).raw[0]).sum();
        assert!((s / n as f64 - mu).abs() < 5.0 * sigma / (n as f64).sqrt());
    }

    #[test]
    fn zero_network_mean_path_gradient_vanishes() {
        let net = PolicyNetwork::zeros(&tank_shape()).unwrap();
        let obs = [0.1, 0.2, 0.3, 0.4];
        let g = net.grad_log_prob(&obs, &[0.0]).unwrap();
        // mean head sits on the ReLU6 kink at 0 and the std head on its floor
        assert!(g.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn single_layer_bias_gradient_matches_gaussian_score() {
        // no hidden layer: mean = lo + scale * relu6(w.x + b)
        let shape = NetworkShape::new(2, vec![], vec![0.0], vec![3.0]);
        let mut net = PolicyNetwork::zeros(&shape).unwrap();
        let (wm, bm) = (net.weight_range(0), net.bias_range(0));
        let bs = net.bias_range(1);
        net.params_mut()[wm].copy_from_slice(&[0.5, -0.25]);
        net.params_mut()[bm][0] = 2.0;
        net.params_mut()[bs][0] = 1.0;
        let obs = [1.0, 2.0];
        let u = [1.7];
        // hand computation
        let scale = 0.5;
        let z = 0.5 - 0.5 + 2.0;
        let mean = scale * z;
        let std = scale * 1.0;
        let score_mu = (u[0] - mean) / (std * std);
        let g = net.grad_log_prob(&obs, &u).unwrap();
        assert!((g[net.bias_range(0)][0] - score_mu * scale).abs() < 1e-12);
        let score_sigma = (u[0] - mean).powi(2) / std.powi(3) - 1.0 / std;
        assert!((g[net.bias_range(1)][0] - score_sigma * scale).abs() < 1e-12);
        assert!((g[net.weight_range(0)][1] - score_mu * scale * obs[1]).abs() < 1e-12);
    }

    #[test]
    fn json_round_trip_and_errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut net = PolicyNetwork::init(&tank_shape(), &mut rng).unwrap();
        net.set_normalizer(ObsNormalizer::new(vec![1.0, 2.0, 3.0, 4.0], vec![0.5, 1.0, 2.0, 0.25]).unwrap())
            .unwrap();
        let back = PolicyNetwork::from_json(&net.to_json()).unwrap();
        assert_eq!(back, net);

        let text = net.to_json();
        let err = PolicyNetwork::from_json(&text[..text.len() / 2]).unwrap_err();
        assert!(matches!(err, Error::Parse { .. }));

        let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
        v["biases"][1] = serde_json::json!([1.0]);
        let err = PolicyNetwork::from_json(&v.to_string()).unwrap_err();
        assert!(err.to_string().contains("biases[1]"), "{err}");

        let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
        v["input_dim"] = serde_json::json!("four");
        let err = PolicyNetwork::from_json(&v.to_string()).unwrap_err();
        assert!(err.to_string().contains("input_dim"), "{err}");
    }
}
