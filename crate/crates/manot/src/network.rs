//! A small fully-connected network with scalar output and hand-written
//! backward passes.
//!
//! The network computes `f(x) = W_L a_{L-1} + b_L` with
//! `a_l = act(W_l a_{l-1} + b_l)` on the hidden layers; there is no
//! activation on the output. Two separate backward passes are provided:
//! `grad_params` (gradient of the scalar output in every weight and bias)
//! and `grad_input` (gradient in the input vector). Both use exact reverse
//! accumulation; at non-differentiable points the conventions are fixed and
//! deterministic: `relu'(0) = 0` and `leaky_relu'(0) = slope`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Hidden-layer activation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Activation {
    Relu,
    LeakyRelu { slope: f64 },
    Softplus { beta: f64 },
}

impl Default for Activation {
    fn default() -> Self {
        Activation::LeakyRelu { slope: 0.01 }
    }
}

impl Activation {
    fn apply(&self, z: f64) -> f64 {
        match *self {
            Activation::Relu => z.max(0.0),
            Activation::LeakyRelu { slope } => {
                if z > 0.0 {
                    z
                } else {
                    slope * z
                }
            }
            Activation::Softplus { beta } => {
                let t = beta * z;
                if t > 30.0 {
                    z
                } else {
                    (1.0 + t.exp()).ln() / beta
                }
            }
        }
    }

    fn derivative(&self, z: f64) -> f64 {
        match *self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::LeakyRelu { slope } => {
                if z > 0.0 {
                    1.0
                } else {
                    slope
                }
            }
            Activation::Softplus { beta } => {
                let t = beta * z;
                if t > 30.0 {
                    1.0
                } else if t < -30.0 {
                    t.exp()
                } else {
                    1.0 / (1.0 + (-t).exp())
                }
            }
        }
    }
}

/// Architecture description: input width, hidden widths, activation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpConfig {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    #[serde(default)]
    pub activation: Activation,
}

impl MlpConfig {
    pub fn new(input_dim: usize, hidden: Vec<usize>) -> Self {
        MlpConfig { input_dim, hidden, activation: Activation::default() }
    }

    /// Layer widths including input and the scalar output.
    fn widths(&self) -> Vec<usize> {
        let mut w = Vec::with_capacity(self.hidden.len() + 2);
        w.push(self.input_dim);
        w.extend_from_slice(&self.hidden);
        w.push(1);
        w
    }

    /// Total number of scalar parameters.
    pub fn param_count(&self) -> usize {
        self.widths().windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }
}

/// One affine layer: `out_dim x in_dim` row-major weights plus biases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerParams {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Network parameters; carries the activation so evaluation is
/// self-contained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    pub activation: Activation,
    pub layers: Vec<LayerParams>,
}

/// Gradient of the scalar output in every parameter; same shapes as
/// [`MlpParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct MlpGradient {
    pub layers: Vec<LayerParams>,
}

/// Glorot-uniform initialization: weights from
/// `U(-sqrt(6 / (fan_in + fan_out)), +sqrt(6 / (fan_in + fan_out)))`,
/// biases zero.
pub fn init<R: Rng + ?Sized>(config: &MlpConfig, rng: &mut R) -> MlpParams {
    let widths = config.widths();
    let layers = widths
        .windows(2)
        .map(|w| {
            let (fan_in, fan_out) = (w[0], w[1]);
            let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
            LayerParams {
                in_dim: fan_in,
                out_dim: fan_out,
                weight: (0..fan_in * fan_out).map(|_| rng.gen_range(-a..a)).collect(),
                bias: vec![0.0; fan_out],
            }
        })
        .collect();
    MlpParams { activation: config.activation, layers }
}

impl MlpParams {
    pub fn input_dim(&self) -> usize {
        self.layers.first().map_or(0, |l| l.in_dim)
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    /// The architecture these parameters realize.
    pub fn config(&self) -> MlpConfig {
        MlpConfig {
            input_dim: self.input_dim(),
            hidden: self.layers[..self.layers.len().saturating_sub(1)].iter().map(|l| l.out_dim).collect(),
            activation: self.activation,
        }
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::DimensionMismatch { expected: self.input_dim(), got: x.len() });
        }
        Ok(())
    }

    /// Pre-activations `z_l` and post-activations `a_l` for every layer.
    pub(crate) fn forward_cache(&self, x: &[f64]) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let n_layers = self.layers.len();
        let mut pre = Vec::with_capacity(n_layers);
        let mut post = Vec::with_capacity(n_layers + 1);
        post.push(x.to_vec());
        for (l, layer) in self.layers.iter().enumerate() {
            let a = post.last().unwrap();
            let z: Vec<f64> = (0..layer.out_dim)
                .map(|i| {
                    let row = &layer.weight[i * layer.in_dim..(i + 1) * layer.in_dim];
                    row.iter().zip(a).map(|(w, v)| w * v).sum::<f64>() + layer.bias[i]
                })
                .collect();
            let activated = if l + 1 < n_layers { z.iter().map(|&v| self.activation.apply(v)).collect() } else { z.clone() };
            pre.push(z);
            post.push(activated);
        }
        (pre, post)
    }

    /// Scalar output `f(x)`.
    pub fn forward(&self, x: &[f64]) -> Result<f64> {
        self.check_input(x)?;
        let (_, post) = self.forward_cache(x);
        Ok(post.last().unwrap()[0])
    }

    /// `(f(x), df/dx)`; the backward pass touches only the activation chain,
    /// no per-parameter buffers.
    pub fn value_and_grad_input(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        self.check_input(x)?;
        let (pre, post) = self.forward_cache(x);
        let value = post.last().unwrap()[0];
        let mut upstream = vec![1.0];
        for (l, layer) in self.layers.iter().enumerate().rev() {
            let dz: Vec<f64> = if l + 1 < self.layers.len() {
                upstream.iter().zip(&pre[l]).map(|(u, &z)| u * self.activation.derivative(z)).collect()
            } else {
                upstream.clone()
            };
            let mut da = vec![0.0; layer.in_dim];
            for (i, &g) in dz.iter().enumerate() {
                let row = &layer.weight[i * layer.in_dim..(i + 1) * layer.in_dim];
                for (d, w) in da.iter_mut().zip(row) {
                    *d += g * w;
                }
            }
            upstream = da;
        }
        Ok((value, upstream))
    }

    /// `df/dx` alone.
    pub fn grad_input(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.value_and_grad_input(x)?.1)
    }

    /// `(f(x), df/dtheta)` over all weights and biases.
    pub fn value_and_grad_params(&self, x: &[f64]) -> Result<(f64, MlpGradient)> {
        self.check_input(x)?;
        let (pre, post) = self.forward_cache(x);
        let value = post.last().unwrap()[0];
        let mut grads: Vec<LayerParams> = self
            .layers
            .iter()
            .map(|l| LayerParams {
                in_dim: l.in_dim,
                out_dim: l.out_dim,
                weight: vec![0.0; l.weight.len()],
                bias: vec![0.0; l.bias.len()],
            })
            .collect();
        let mut upstream = vec![1.0];
        for (l, layer) in self.layers.iter().enumerate().rev() {
            let dz: Vec<f64> = if l + 1 < self.layers.len() {
                upstream.iter().zip(&pre[l]).map(|(u, &z)| u * self.activation.derivative(z)).collect()
            } else {
                upstream.clone()
            };
            let a = &post[l];
            let g = &mut grads[l];
            for (i, &gz) in dz.iter().enumerate() {
                g.bias[i] = gz;
                let row = &mut g.weight[i * layer.in_dim..(i + 1) * layer.in_dim];
                for (w, &av) in row.iter_mut().zip(a) {
                    *w = gz * av;
                }
            }
            let mut da = vec![0.0; layer.in_dim];
            for (i, &gz) in dz.iter().enumerate() {
                let row = &layer.weight[i * layer.in_dim..(i + 1) * layer.in_dim];
                for (d, w) in da.iter_mut().zip(row) {
                    *d += gz * w;
                }
            }
            upstream = da;
        }
        Ok((value, MlpGradient { layers: grads }))
    }

    /// `df/dtheta` alone.
    pub fn grad_params(&self, x: &[f64]) -> Result<MlpGradient> {
        Ok(self.value_and_grad_params(x)?.1)
    }

    /// Parameters in a fixed flat order: per layer, row-major weights then
    /// biases.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            out.extend_from_slice(&l.weight);
            out.extend_from_slice(&l.bias);
        }
        out
    }

    /// Inverse of [`flatten`](Self::flatten) for the architecture in
    /// `config`; exact round trip.
    pub fn unflatten(config: &MlpConfig, flat: &[f64]) -> Result<MlpParams> {
        if flat.len() != config.param_count() {
            return Err(Error::DimensionMismatch { expected: config.param_count(), got: flat.len() });
        }
        let widths = config.widths();
        let mut layers = Vec::with_capacity(widths.len() - 1);
        let mut offset = 0;
        for w in widths.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let weight = flat[offset..offset + fan_in * fan_out].to_vec();
            offset += fan_in * fan_out;
            let bias = flat[offset..offset + fan_out].to_vec();
            offset += fan_out;
            layers.push(LayerParams { in_dim: fan_in, out_dim: fan_out, weight, bias });
        }
        Ok(MlpParams { activation: config.activation, layers })
    }

    /// In-place `theta += scale * grad`.
    pub fn add_scaled(&mut self, grad: &MlpGradient, scale: f64) {
        for (l, g) in self.layers.iter_mut().zip(&grad.layers) {
            for (w, gw) in l.weight.iter_mut().zip(&g.weight) {
                *w += scale * gw;
            }
            for (b, gb) in l.bias.iter_mut().zip(&g.bias) {
                *b += scale * gb;
            }
        }
    }
}

impl MlpGradient {
    pub fn zeros_like(params: &MlpParams) -> MlpGradient {
        MlpGradient {
            layers: params
                .layers
                .iter()
                .map(|l| LayerParams {
                    in_dim: l.in_dim,
                    out_dim: l.out_dim,
                    weight: vec![0.0; l.weight.len()],
                    bias: vec![0.0; l.bias.len()],
                })
                .collect(),
        }
    }

    /// In-place `self += scale * other`.
    pub fn accumulate(&mut self, other: &MlpGradient, scale: f64) {
        for (l, o) in self.layers.iter_mut().zip(&other.layers) {
            for (w, ow) in l.weight.iter_mut().zip(&o.weight) {
                *w += scale * ow;
            }
            for (b, ob) in l.bias.iter_mut().zip(&o.bias) {
                *b += scale * ob;
            }
        }
    }

    /// Same flat order as [`MlpParams::flatten`].
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.extend_from_slice(&l.weight);
            out.extend_from_slice(&l.bias);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn assert_close(analytic: f64, numeric: f64, abs_tol: f64, rel_tol: f64) {
        let diff = (analytic - numeric).abs();
        let scale = analytic.abs().max(numeric.abs());
        assert!(
            diff <= abs_tol + rel_tol * scale,
            "analytic {analytic:.12e} vs numeric {numeric:.12e} (diff {diff:.3e})"
        );
    }

    fn random_input<R: Rng>(dim: usize, rng: &mut R) -> Vec<f64> {
        (0..dim).map(|_| rng.gen_range(-1.5..1.5)).collect()
    }

    /// Re-draws inputs whose pre-activations come within 1e-7 of a kink, so
    /// central differences see a smooth function.
    fn away_from_kinks<R: Rng>(params: &MlpParams, dim: usize, rng: &mut R) -> Vec<f64> {
        'outer: for _ in 0..100 {
            let x = random_input(dim, rng);
            let (pre, _) = params.forward_cache(&x);
            for layer in &pre[..pre.len() - 1] {
                if layer.iter().any(|z| z.abs() < 1e-7) {
                    continue 'outer;
                }
            }
            return x;
        }
        panic!("could not find an input away from activation kinks");
    }

    #[test]
    fn param_count_example() {
        let config = MlpConfig::new(128, vec![128, 128]);
        assert_eq!(config.param_count(), 33_153);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let params = init(&config, &mut rng);
        assert_eq!(params.param_count(), 33_153);
    }

    #[test]
    fn init_is_glorot_uniform_with_zero_biases() {
        let config = MlpConfig::new(64, vec![32]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let params = init(&config, &mut rng);
        let bound0 = (6.0_f64 / (64.0 + 32.0)).sqrt();
        assert!(params.layers[0].weight.iter().all(|w| w.abs() < bound0));
        assert!(params.layers[0].weight.iter().any(|w| w.abs() > 0.5 * bound0));
        assert!(params.layers.iter().all(|l| l.bias.iter().all(|&b| b == 0.0)));
        // Deterministic per seed.
        let mut rng2 = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(params, init(&config, &mut rng2));
    }

    #[test]
    fn flatten_round_trip_is_exact() {
        let config = MlpConfig::new(5, vec![7, 3]);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let params = init(&config, &mut rng);
        let flat = params.flatten();
        assert_eq!(flat.len(), config.param_count());
        let back = MlpParams::unflatten(&config, &flat).unwrap();
        assert_eq!(params, back);
        assert!(MlpParams::unflatten(&config, &flat[1..]).is_err());
    }

    #[test]
    fn param_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let h = 1e-6;
        for activation in [
            Activation::Relu,
            Activation::LeakyRelu { slope: 0.01 },
            Activation::Softplus { beta: 1.0 },
        ] {
            let config = MlpConfig { input_dim: 6, hidden: vec![9, 5], activation };
            let params = init(&config, &mut rng);
            let x = away_from_kinks(&params, 6, &mut rng);
            let (_, grad) = params.value_and_grad_params(&x).unwrap();
            let analytic = grad.flatten();
            let flat = params.flatten();
            for idx in 0..flat.len() {
                let mut plus = flat.clone();
                plus[idx] += h;
                let mut minus = flat.clone();
                minus[idx] -= h;
                let fp = MlpParams::unflatten(&config, &plus).unwrap().forward(&x).unwrap();
                let fm = MlpParams::unflatten(&config, &minus).unwrap().forward(&x).unwrap();
                assert_close(analytic[idx], (fp - fm) / (2.0 * h), 1e-8, 1e-5);
            }
        }
    }

    #[test]
    fn input_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let h = 1e-6;
        for activation in [
            Activation::Relu,
            Activation::LeakyRelu { slope: 0.01 },
            Activation::Softplus { beta: 2.0 },
        ] {
            let config = MlpConfig { input_dim: 8, hidden: vec![12, 12], activation };
            let params = init(&config, &mut rng);
            let x = away_from_kinks(&params, 8, &mut rng);
            let (value, grad) = params.value_and_grad_input(&x).unwrap();
            assert_close(value, params.forward(&x).unwrap(), 0.0, 1e-15);
            for idx in 0..x.len() {
                let mut plus = x.clone();
                plus[idx] += h;
                let mut minus = x.clone();
                minus[idx] -= h;
                let fd = (params.forward(&plus).unwrap() - params.forward(&minus).unwrap()) / (2.0 * h);
                assert_close(grad[idx], fd, 1e-8, 1e-5);
            }
        }
    }

    /// A single unit with zero bias pinned at a zero pre-activation:
    /// relu uses subgradient 0, leaky relu its negative-side slope.
    #[test]
    fn kink_conventions_are_deterministic() {
        for (activation, expected) in [(Activation::Relu, 0.0), (Activation::LeakyRelu { slope: 0.01 }, 0.01)] {
            let params = MlpParams {
                activation,
                layers: vec![
                    LayerParams { in_dim: 1, out_dim: 1, weight: vec![2.0], bias: vec![0.0] },
                    LayerParams { in_dim: 1, out_dim: 1, weight: vec![3.0], bias: vec![0.0] },
                ],
            };
            let grad = params.grad_input(&[0.0]).unwrap();
            assert_eq!(grad[0], 3.0 * expected * 2.0);
        }
    }

    #[test]
    fn accumulate_and_add_scaled() {
        let config = MlpConfig::new(3, vec![4]);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut params = init(&config, &mut rng);
        let x = [0.3, -0.2, 0.9];
        let (_, g) = params.value_and_grad_params(&x).unwrap();
        let mut acc = MlpGradient::zeros_like(&params);
        acc.accumulate(&g, 2.0);
        acc.accumulate(&g, -1.0);
        for (a, b) in acc.flatten().iter().zip(g.flatten()) {
            assert_close(*a, b, 1e-15, 1e-12);
        }
        let before = params.forward(&x).unwrap();
        params.add_scaled(&g, 1e-3);
        // Ascent along the gradient increases the output.
        assert!(params.forward(&x).unwrap() > before);
    }

    #[test]
    fn softplus_is_smooth_and_bounded_below() {
        let act = Activation::Softplus { beta: 3.0 };
        assert!(act.apply(-100.0) >= 0.0);
        assert_close(act.apply(100.0), 100.0, 1e-9, 0.0);
        assert_close(act.derivative(0.0), 0.5, 1e-12, 0.0);
    }
}
