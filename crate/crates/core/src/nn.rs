//! Fully connected networks with explicit reverse-mode gradients, and the
//! first-order optimizers that train them.
//!
//! Parameters live in one flat vector. Layer `i` maps `sizes[i]` inputs to
//! `sizes[i + 1]` outputs and stores its weight matrix row-major (one row
//! per output) followed by its bias vector.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use num_traits::Float;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::config::OptimizerKind;
use crate::error::{Error, Result};

/// Output activation. Hidden layers always use the rectifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Head {
    Tanh,
    Identity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    sizes: Vec<usize>,
    head: Head,
    params: Vec<f64>,
}

/// Activations recorded by [`Mlp::forward_cached`].
#[derive(Debug, Clone, PartialEq)]
pub struct Cache {
    /// Input of every layer; the last entry is the network output.
    pub acts: Vec<Vec<f64>>,
    /// Pre-activation of every layer.
    pub pre: Vec<Vec<f64>>,
}

impl Cache {
    pub fn output(&self) -> &[f64] {
        self.acts.last().map(Vec::as_slice).unwrap_or(&[])
    }
}

/// Parameter and input gradients of one backward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub params: Vec<f64>,
    pub input: Vec<f64>,
}

/// Number of parameters of a layer chain: `sum(G_i G_{i+1} + G_{i+1})`.
pub fn param_count(sizes: &[usize]) -> usize {
    sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

impl Mlp {
    /// All-zero network.
    pub fn zeros(sizes: &[usize], head: Head) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::Config(format!("invalid layer sizes {sizes:?}")));
        }
        Ok(Self { sizes: sizes.to_vec(), head, params: vec![0.0; param_count(sizes)] })
    }

    /// Weights uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`, biases zero.
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], head: Head, rng: &mut R) -> Result<Self> {
        let mut net = Self::zeros(sizes, head)?;
        let mut off = 0;
        for w in sizes.windows(2) {
            let bound = 1.0 / Float::sqrt(w[0] as f64);
            for p in &mut net.params[off..off + w[0] * w[1]] {
                *p = rng.random_range(-bound..=bound);
            }
            off += w[0] * w[1] + w[1];
        }
        Ok(net)
    }

    pub fn from_params(sizes: &[usize], head: Head, params: Vec<f64>) -> Result<Self> {
        let mut net = Self::zeros(sizes, head)?;
        if params.len() != net.params.len() {
            return Err(Error::Length {
                what: "network parameters",
                expected: net.params.len(),
                got: params.len(),
            });
        }
        net.params = params;
        net.validate()?;
        Ok(net)
    }

    /// Checks the layer chain and that every parameter is finite.
    pub fn validate(&self) -> Result<()> {
        if self.sizes.len() < 2 || self.sizes.contains(&0) {
            return Err(Error::Config(format!("invalid layer sizes {:?}", self.sizes)));
        }
        if self.params.len() != param_count(&self.sizes) {
            return Err(Error::Consistency("parameter count does not match layer sizes".into()));
        }
        if self.params.iter().any(|p| !p.is_finite()) {
            return Err(Error::Consistency("non-finite network parameter".into()));
        }
        Ok(())
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn head(&self) -> Head {
        self.head
    }

    pub fn input_len(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_len(&self) -> usize {
        self.sizes[self.sizes.len() - 1]
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn same_shape(&self, other: &Mlp) -> bool {
        self.sizes == other.sizes && self.head == other.head
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward_cached(input)?.acts.pop().unwrap_or_default())
    }

    pub fn forward_cached(&self, input: &[f64]) -> Result<Cache> {
        if input.len() != self.input_len() {
            return Err(Error::Length {
                what: "network input",
                expected: self.input_len(),
                got: input.len(),
            });
        }
        let layers = self.sizes.len() - 1;
        let mut acts = Vec::with_capacity(layers + 1);
        let mut pre = Vec::with_capacity(layers);
        acts.push(input.to_vec());
        let mut off = 0;
        for l in 0..layers {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let w = &self.params[off..off + n_in * n_out];
            let b = &self.params[off + n_in * n_out..off + n_in * n_out + n_out];
            let x = &acts[l];
            let z: Vec<f64> = (0..n_out)
                .map(|o| {
                    let row = &w[o * n_in..(o + 1) * n_in];
                    b[o] + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>()
                })
                .collect();
            let a: Vec<f64> = if l + 1 < layers {
                z.iter().map(|v| v.max(0.0)).collect()
            } else {
                match self.head {
                    Head::Tanh => z.iter().map(|v| Float::tanh(*v)).collect(),
                    Head::Identity => z.clone(),
                }
            };
            pre.push(z);
            acts.push(a);
            off += n_in * n_out + n_out;
        }
        Ok(Cache { acts, pre })
    }

    /// Reverse pass for `upstream = dL/d(output)`.
    pub fn backward(&self, cache: &Cache, upstream: &[f64]) -> Result<Gradients> {
        let mut grads = vec![0.0; self.params.len()];
        let input = self.backward_into(cache, upstream, &mut grads)?;
        Ok(Gradients { params: grads, input })
    }

    /// Like [`Mlp::backward`] but adds the parameter gradients into `acc`;
    /// returns the input gradient.
    pub fn backward_into(&self, cache: &Cache, upstream: &[f64], acc: &mut [f64]) -> Result<Vec<f64>> {
        if acc.len() != self.params.len() {
            return Err(Error::Precondition("gradient buffer does not match network".into()));
        }
        self.reverse(cache, upstream, Some(acc))
    }

    /// Gradient with respect to the input only.
    pub fn input_gradient(&self, cache: &Cache, upstream: &[f64]) -> Result<Vec<f64>> {
        self.reverse(cache, upstream, None)
    }

    fn reverse(&self, cache: &Cache, upstream: &[f64], mut acc: Option<&mut [f64]>) -> Result<Vec<f64>> {
        if upstream.len() != self.output_len() {
            return Err(Error::Length {
                what: "upstream gradient",
                expected: self.output_len(),
                got: upstream.len(),
            });
        }
        if cache.pre.len() != self.sizes.len() - 1 {
            return Err(Error::Precondition("cache does not match network".into()));
        }
        let layers = self.sizes.len() - 1;
        let mut offsets = Vec::with_capacity(layers);
        let mut off = 0;
        for w in self.sizes.windows(2) {
            offsets.push(off);
            off += w[0] * w[1] + w[1];
        }
        let mut delta: Vec<f64> = match self.head {
            Head::Tanh => upstream
                .iter()
                .zip(&cache.acts[layers])
                .map(|(g, y)| g * (1.0 - y * y))
                .collect(),
            Head::Identity => upstream.to_vec(),
        };
        for l in (0..layers).rev() {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let off = offsets[l];
            let x = &cache.acts[l];
            if let Some(acc) = acc.as_deref_mut() {
                for o in 0..n_out {
                    let d = delta[o];
                    if d != 0.0 {
                        let row = &mut acc[off + o * n_in..off + (o + 1) * n_in];
                        for (g, xi) in row.iter_mut().zip(x) {
                            *g += d * xi;
                        }
                    }
                    acc[off + n_in * n_out + o] += d;
                }
            }
            let w = &self.params[off..off + n_in * n_out];
            let mut dx = vec![0.0; n_in];
            for o in 0..n_out {
                let d = delta[o];
                if d != 0.0 {
                    for (g, wi) in dx.iter_mut().zip(&w[o * n_in..(o + 1) * n_in]) {
                        *g += d * wi;
                    }
                }
            }
            if l > 0 {
                for (g, z) in dx.iter_mut().zip(&cache.pre[l - 1]) {
                    if *z <= 0.0 {
                        *g = 0.0;
                    }
                }
            }
            delta = dx;
        }
        Ok(delta)
    }
}

/// First-order optimizer state for one parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Optimizer {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    steps: u64,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64, len: usize) -> Self {
        let moments = if kind == OptimizerKind::Adam { len } else { 0 };
        Self {
            kind,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; moments],
            v: vec![0.0; moments],
            steps: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Descends along `grads`. Plain mode is `p -= lr * g`; Adam uses
    /// bias-corrected moment estimates.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::Length { what: "gradient", expected: params.len(), got: grads.len() });
        }
        self.steps += 1;
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.iter_mut().zip(grads) {
                    *p -= self.lr * g;
                }
            }
            OptimizerKind::Adam => {
                if self.m.len() != params.len() {
                    return Err(Error::Length {
                        what: "optimizer state",
                        expected: params.len(),
                        got: self.m.len(),
                    });
                }
                let t = self.steps as i32;
                let c1 = 1.0 - Float::powi(self.beta1, t);
                let c2 = 1.0 - Float::powi(self.beta2, t);
                for i in 0..params.len() {
                    let g = grads[i];
                    self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
                    self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
                    let mh = self.m[i] / c1;
                    let vh = self.v[i] / c2;
                    params[i] -= self.lr * mh / (Float::sqrt(vh) + self.eps);
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Stream};

    #[test]
    fn zero_net_outputs_zero() {
        let net = Mlp::zeros(&[3, 4, 2], Head::Identity).unwrap();
        assert_eq!(net.forward(&[1.0, -2.0, 3.0]).unwrap(), [0.0, 0.0]);
    }

    #[test]
    fn linear_unit() {
        let net = Mlp::from_params(&[1, 1], Head::Identity, alloc::vec![2.0, 1.0]).unwrap();
        assert_eq!(net.forward(&[3.0]).unwrap(), [7.0]);
    }

    #[test]
    fn tanh_head_in_open_interval() {
        let mut rng = stream(1, Stream::Init);
        let net = Mlp::new(&[4, 8, 3], Head::Tanh, &mut rng).unwrap();
        for k in 0..50 {
            // tanh rounds to exactly +-1 beyond |z| of about 19
            let x: Vec<f64> = (0..4).map(|i| ((k * 7 + i) % 13) as f64 / 4.0 - 1.5).collect();
            assert!(net.forward(&x).unwrap().iter().all(|y| y.abs() < 1.0));
        }
    }

    #[test]
    fn size_mismatch() {
        let net = Mlp::zeros(&[3, 2], Head::Identity).unwrap();
        assert!(matches!(net.forward(&[1.0]), Err(Error::Length { .. })));
        assert!(Mlp::zeros(&[3], Head::Identity).is_err());
        assert!(Mlp::from_params(&[1, 1], Head::Identity, alloc::vec![1.0]).is_err());
    }

    #[test]
    fn param_count_formula() {
        assert_eq!(param_count(&[3, 4, 2]), 3 * 4 + 4 + 4 * 2 + 2);
        let net = Mlp::zeros(&[5, 7, 1], Head::Tanh).unwrap();
        assert_eq!(net.params().len(), 5 * 7 + 7 + 7 + 1);
    }

    #[test]
    fn zero_upstream_zero_grads() {
        let mut rng = stream(2, Stream::Init);
        let net = Mlp::new(&[3, 5, 2], Head::Tanh, &mut rng).unwrap();
        let c = net.forward_cached(&[0.1, 0.2, 0.3]).unwrap();
        let g = net.backward(&c, &[0.0, 0.0]).unwrap();
        assert!(g.params.iter().chain(&g.input).all(|x| *x == 0.0));
    }

    #[test]
    fn squared_loss_hand_gradient() {
        // L = (w x + b)^2 at w = 1, b = 0, x = 1: dL/dw = 2 (w x) x = 2
        let net = Mlp::from_params(&[1, 1], Head::Identity, alloc::vec![1.0, 0.0]).unwrap();
        let c = net.forward_cached(&[1.0]).unwrap();
        let y = c.output()[0];
        let g = net.backward(&c, &[2.0 * y]).unwrap();
        assert_eq!(g.params[0], 2.0);
        assert_eq!(g.params[1], 2.0);
        assert_eq!(g.input[0], 2.0);
    }

    #[test]
    fn forward_is_pure() {
        let mut rng = stream(3, Stream::Init);
        let net = Mlp::new(&[6, 16, 8, 4], Head::Tanh, &mut rng).unwrap();
        let x = [0.5, -0.1, 0.3, 0.9, -0.7, 0.2];
        let a = net.forward(&x).unwrap();
        let b = net.forward(&x).unwrap();
        assert_eq!(a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    }

    #[test]
    fn optimizer_examples() {
        let mut p = [0.0];
        let mut sgd = Optimizer::new(OptimizerKind::Sgd, 0.1, 1);
        sgd.step(&mut p, &[1.0]).unwrap();
        assert_eq!(p, [-0.1]);

        let mut q = [0.3, -0.2];
        let mut adam = Optimizer::new(OptimizerKind::Adam, 1e-3, 2);
        adam.step(&mut q, &[0.0, 0.0]).unwrap();
        assert_eq!(q, [0.3, -0.2]);
        // a first step moves each parameter by lr against the gradient sign
        let mut adam = Optimizer::new(OptimizerKind::Adam, 1e-3, 2);
        adam.step(&mut q, &[5.0, -0.01]).unwrap();
        assert!((q[0] - (0.3 - 1e-3)).abs() < 1e-9);
        assert!((q[1] - (-0.2 + 1e-3)).abs() < 1e-6);
    }
}
