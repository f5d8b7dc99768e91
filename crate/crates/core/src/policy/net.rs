//! One-hidden-layer networks with hand-written reverse-mode gradients.
//!
//! Parameters live in one flat vector laid out as
//! `[W1 (hidden x inputs, row-major) | b1 | W2 (outputs x hidden) | b2]`,
//! and the hidden nonlinearity is `tanh`.

use crate::rng::SeededRng;
use crate::vocab::TokenSeq;

use super::{softmax, Context, Policy, Reference, SoftQ};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NetShape {
    pub inputs: usize,
    pub hidden: usize,
    pub outputs: usize,
}

impl NetShape {
    pub fn n_params(&self) -> usize {
        self.hidden * self.inputs + self.hidden + self.outputs * self.hidden + self.outputs
    }

    fn b1(&self) -> usize {
        self.hidden * self.inputs
    }

    fn w2(&self) -> usize {
        self.b1() + self.hidden
    }

    fn b2(&self) -> usize {
        self.w2() + self.outputs * self.hidden
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParametricNet {
    shape: NetShape,
    params: Vec<f64>,
}

/// Activations kept from a forward pass for the matching backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub input: Vec<f64>,
    pub hidden: Vec<f64>,
    pub output: Vec<f64>,
}

impl ParametricNet {
    pub fn zeros(shape: NetShape) -> Self {
        Self {
            shape,
            params: vec![0.0; shape.n_params()],
        }
    }

    /// Glorot-uniform hidden layer and a zero output layer, so a fresh net
    /// outputs exactly zero.
    pub fn init(shape: NetShape, rng: &mut SeededRng) -> Self {
        let mut net = Self::zeros(shape);
        let bound = (6.0 / (shape.inputs + shape.hidden) as f64).sqrt();
        for w in &mut net.params[..shape.b1()] {
            *w = rng.uniform_range(-bound, bound);
        }
        net
    }

    /// Every parameter uniform in `[-scale, scale]`.
    pub fn random(shape: NetShape, scale: f64, rng: &mut SeededRng) -> Self {
        let params = (0..shape.n_params())
            .map(|_| rng.uniform_range(-scale, scale))
            .collect();
        Self { shape, params }
    }

    pub fn from_params(shape: NetShape, params: Vec<f64>) -> Option<Self> {
        (params.len() == shape.n_params()).then_some(Self { shape, params })
    }

    pub fn shape(&self) -> NetShape {
        self.shape
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn forward(&self, input: &[f64]) -> ForwardCache {
        let NetShape {
            inputs,
            hidden,
            outputs,
        } = self.shape;
        assert_eq!(input.len(), inputs, "input width");
        let p = &self.params;
        let mut h = p[self.shape.b1()..self.shape.w2()].to_vec();
        for (i, &x) in input.iter().enumerate() {
            if x == 0.0 {
                continue;
            }
            for (k, hk) in h.iter_mut().enumerate() {
                *hk += p[k * inputs + i] * x;
            }
        }
        h.iter_mut().for_each(|v| *v = v.tanh());
        let w2 = &p[self.shape.w2()..self.shape.b2()];
        let b2 = &p[self.shape.b2()..];
        let output = (0..outputs)
            .map(|o| {
                let row = &w2[o * hidden..(o + 1) * hidden];
                b2[o] + row.iter().zip(&h).map(|(w, x)| w * x).sum::<f64>()
            })
            .collect();
        ForwardCache {
            input: input.to_vec(),
            hidden: h,
            output,
        }
    }

    /// Adds `d(dout . output)/d(params)` into `grad`.
    pub fn backward(&self, cache: &ForwardCache, dout: &[f64], grad: &mut [f64]) {
        let NetShape {
            inputs,
            hidden,
            outputs,
        } = self.shape;
        assert_eq!(dout.len(), outputs, "output gradient width");
        assert_eq!(grad.len(), self.params.len(), "gradient length");
        let (w2_at, b2_at, b1_at) = (self.shape.w2(), self.shape.b2(), self.shape.b1());
        let mut dh = vec![0.0; hidden];
        for (o, &g) in dout.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            grad[b2_at + o] += g;
            for k in 0..hidden {
                grad[w2_at + o * hidden + k] += g * cache.hidden[k];
                dh[k] += g * self.params[w2_at + o * hidden + k];
            }
        }
        for k in 0..hidden {
            // tanh' = 1 - tanh^2
            let dpre = dh[k] * (1.0 - cache.hidden[k] * cache.hidden[k]);
            if dpre == 0.0 {
                continue;
            }
            grad[b1_at + k] += dpre;
            for (i, &x) in cache.input.iter().enumerate() {
                if x != 0.0 {
                    grad[k * inputs + i] += dpre * x;
                }
            }
        }
    }

    pub fn descend(&mut self, grad: &[f64], lr: f64) {
        for (p, g) in self.params.iter_mut().zip(grad) {
            *p -= lr * g;
        }
    }

    /// `self <- lambda * self + (1 - lambda) * online`, elementwise.
    pub fn polyak_update(&mut self, online: &ParametricNet, lambda: f64) {
        assert_eq!(self.shape, online.shape, "polyak shape mismatch");
        for (t, o) in self.params.iter_mut().zip(&online.params) {
            *t = lambda * *t + (1.0 - lambda) * o;
        }
    }
}

/// Parameter gradient of `dout . net(input)` for a cached forward pass.
pub fn net_backward(net: &ParametricNet, cache: &ForwardCache, dout: &[f64]) -> Vec<f64> {
    let mut grad = vec![0.0; net.params.len()];
    net.backward(cache, dout, &mut grad);
    grad
}

/// Fixed-width one-hot encoding of a context: one slot per state position and
/// per prefix position, each slot one-hot over the vocabulary plus a padding
/// symbol. State tokens beyond `max_state_len` are dropped.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FeatureMap {
    pub vocab_size: usize,
    pub max_state_len: usize,
    pub max_prefix_len: usize,
}

impl FeatureMap {
    pub fn dim(&self) -> usize {
        (self.max_state_len + self.max_prefix_len) * (self.vocab_size + 1)
    }

    pub fn encode(&self, ctx: &Context) -> Vec<f64> {
        let width = self.vocab_size + 1;
        let mut x = vec![0.0; self.dim()];
        let slots = ctx
            .state
            .iter()
            .copied()
            .map(Some)
            .chain(std::iter::repeat(None))
            .take(self.max_state_len)
            .chain(
                ctx.prefix
                    .iter()
                    .copied()
                    .map(Some)
                    .chain(std::iter::repeat(None))
                    .take(self.max_prefix_len),
            );
        for (slot, tok) in slots.enumerate() {
            x[slot * width + tok.unwrap_or(self.vocab_size).min(self.vocab_size)] = 1.0;
        }
        x
    }
}

/// Q-network over action tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct QNet {
    pub features: FeatureMap,
    pub net: ParametricNet,
}

impl QNet {
    pub fn new(features: FeatureMap, hidden: usize, n_tokens: usize, rng: &mut SeededRng) -> Self {
        let shape = NetShape {
            inputs: features.dim(),
            hidden,
            outputs: n_tokens,
        };
        Self {
            features,
            net: ParametricNet::init(shape, rng),
        }
    }

    pub fn forward(&self, ctx: &Context) -> ForwardCache {
        self.net.forward(&self.features.encode(ctx))
    }
}

impl SoftQ for QNet {
    fn n_tokens(&self) -> usize {
        self.net.shape().outputs
    }

    fn q_values(&self, ctx: &Context) -> Vec<f64> {
        self.forward(ctx).output
    }
}

/// Policy with logits `log reference + net(ctx)`; a zero output layer makes
/// it equal to the reference.
#[derive(Debug, Clone, PartialEq)]
pub struct NetPolicy {
    pub features: FeatureMap,
    pub net: ParametricNet,
    pub reference: Reference,
}

impl NetPolicy {
    pub fn new(
        features: FeatureMap,
        hidden: usize,
        reference: Reference,
        rng: &mut SeededRng,
    ) -> Self {
        let shape = NetShape {
            inputs: features.dim(),
            hidden,
            outputs: reference.n_tokens(),
        };
        Self {
            features,
            net: ParametricNet::init(shape, rng),
            reference,
        }
    }

    /// Forward pass and the resulting distribution.
    pub fn forward(&self, ctx: &Context) -> (ForwardCache, Vec<f64>) {
        let cache = self.net.forward(&self.features.encode(ctx));
        let logits: Vec<f64> = self
            .reference
            .probs(ctx)
            .iter()
            .zip(&cache.output)
            .map(|(p, z)| p.ln() + z)
            .collect();
        let probs = softmax(&logits);
        (cache, probs)
    }
}

impl Policy for NetPolicy {
    fn n_tokens(&self) -> usize {
        self.reference.n_tokens()
    }

    fn probs(&self, ctx: &Context) -> Vec<f64> {
        self.forward(ctx).1
    }
}

/// Scalar state-value network.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueNet {
    pub features: FeatureMap,
    pub net: ParametricNet,
}

impl ValueNet {
    pub fn new(
        max_state_len: usize,
        vocab_size: usize,
        hidden: usize,
        rng: &mut SeededRng,
    ) -> Self {
        let features = FeatureMap {
            vocab_size,
            max_state_len,
            max_prefix_len: 0,
        };
        let shape = NetShape {
            inputs: features.dim(),
            hidden,
            outputs: 1,
        };
        Self {
            features,
            net: ParametricNet::init(shape, rng),
        }
    }

    pub fn forward(&self, state: &TokenSeq) -> ForwardCache {
        self.net
            .forward(&self.features.encode(&Context::root(state)))
    }

    pub fn value(&self, state: &TokenSeq) -> f64 {
        self.forward(state).output[0]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded_rng;

    fn shape() -> NetShape {
        NetShape {
            inputs: 5,
            hidden: 4,
            outputs: 3,
        }
    }

    /// Central-difference gradient of `dout . net(x)`.
    fn finite_difference(net: &ParametricNet, x: &[f64], dout: &[f64], h: f64) -> Vec<f64> {
        let objective = |n: &ParametricNet| -> f64 {
            n.forward(x)
                .output
                .iter()
                .zip(dout)
                .map(|(o, d)| o * d)
                .sum()
        };
        (0..net.params.len())
            .map(|i| {
                let mut plus = net.clone();
                plus.params[i] += h;
                let mut minus = net.clone();
                minus.params[i] -= h;
                (objective(&plus) - objective(&minus)) / (2.0 * h)
            })
            .collect()
    }

    #[test]
    fn zero_net_outputs_zero() {
        let net = ParametricNet::zeros(shape());
        assert_eq!(net.forward(&[1.0, 0.0, 2.0, 0.0, 1.0]).output, vec![0.0; 3]);
    }

    #[test]
    fn output_bias_gradient_of_sum_is_ones() {
        let mut rng = seeded_rng(1);
        let net = ParametricNet::random(shape(), 0.5, &mut rng);
        let cache = net.forward(&[0.3, -0.2, 0.0, 1.0, 0.5]);
        let grad = net_backward(&net, &cache, &[1.0; 3]);
        let s = net.shape();
        assert_eq!(&grad[s.b2()..], &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn zero_output_gradient_gives_zero() {
        let mut rng = seeded_rng(2);
        let net = ParametricNet::random(shape(), 0.5, &mut rng);
        let cache = net.forward(&[0.3, -0.2, 0.1, 1.0, 0.5]);
        assert!(net_backward(&net, &cache, &[0.0; 3])
            .iter()
            .all(|&g| g == 0.0));
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = seeded_rng(3);
        for _ in 0..10 {
            let net = ParametricNet::random(shape(), 1.0, &mut rng);
            let x: Vec<f64> = (0..5).map(|_| rng.uniform_range(-1.0, 1.0)).collect();
            let dout: Vec<f64> = (0..3).map(|_| rng.uniform_range(-1.0, 1.0)).collect();
            let analytic = net_backward(&net, &net.forward(&x), &dout);
            let numeric = finite_difference(&net, &x, &dout, 1e-5);
            for (a, n) in analytic.iter().zip(&numeric) {
                let rel = (a - n).abs() / a.abs().max(n.abs()).max(1e-8);
                assert!(rel < 1e-4 || (a - n).abs() < 1e-9, "{a} vs {n}");
            }
        }
    }

    #[test]
    fn forward_is_deterministic() {
        let mut rng = seeded_rng(4);
        let q = QNet::new(
            FeatureMap {
                vocab_size: 6,
                max_state_len: 3,
                max_prefix_len: 2,
            },
            8,
            4,
            &mut rng,
        );
        let ctx = Context::new(TokenSeq::from(vec![5, 1]), TokenSeq::from(vec![2]));
        let a = q.q_values(&ctx);
        let b = q.q_values(&ctx);
        assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
        // output layer starts at zero
        assert_eq!(a, vec![0.0; 4]);
    }

    #[test]
    fn zero_net_policy_is_reference() {
        let features = FeatureMap {
            vocab_size: 4,
            max_state_len: 1,
            max_prefix_len: 1,
        };
        let pi = NetPolicy {
            features,
            net: ParametricNet::zeros(NetShape {
                inputs: features.dim(),
                hidden: 3,
                outputs: 4,
            }),
            reference: Reference::uniform(4),
        };
        let p = pi.probs(&Context::root(&TokenSeq::from(vec![0])));
        assert!(p.iter().all(|&x| (x - 0.25).abs() < 1e-15));
    }

    #[test]
    fn feature_encoding_is_one_hot_per_slot() {
        let f = FeatureMap {
            vocab_size: 3,
            max_state_len: 2,
            max_prefix_len: 2,
        };
        let x = f.encode(&Context::new(
            TokenSeq::from(vec![2]),
            TokenSeq::from(vec![0]),
        ));
        assert_eq!(x.len(), 16);
        assert_eq!(x.iter().sum::<f64>(), 4.0);
        // slot 0: token 2; slot 1: pad; slot 2: token 0; slot 3: pad
        for i in [2, 7, 8, 15] {
            assert_eq!(x[i], 1.0);
        }
    }

    #[test]
    fn polyak_on_nets() {
        let mut rng = seeded_rng(5);
        let online = ParametricNet::random(shape(), 1.0, &mut rng);
        let mut target = ParametricNet::zeros(shape());
        target.polyak_update(&online, 0.0);
        assert_eq!(target, online);
        let before = target.clone();
        target.polyak_update(&ParametricNet::zeros(shape()), 1.0);
        assert_eq!(target, before);
    }
}
