//! Minimal dense networks with hand-written backpropagation and the
//! optimisers used by the learner. Batches are rows of an `Array2`.

use ndarray::{s, Array1, Array2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Negative-side slope of the leaky rectifier used throughout the learner.
pub const DEFAULT_LEAK: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Activation {
    Identity,
    LeakyRelu(f64),
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::LeakyRelu(leak) => {
                if x > 0.0 {
                    x
                } else {
                    leak * x
                }
            }
        }
    }

    /// Derivative with respect to the pre-activation.
    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::LeakyRelu(leak) => {
                if x > 0.0 {
                    1.0
                } else {
                    leak
                }
            }
        }
    }

    pub fn apply_array(self, x: &Array2<f64>) -> Array2<f64> {
        match self {
            Activation::Identity => x.clone(),
            _ => x.mapv(|v| self.apply(v)),
        }
    }
}

/// Anything holding trainable tensors in a fixed order.
pub trait Params {
    fn tensors(&self) -> Vec<&Array2<f64>>;
    fn tensors_mut(&mut self) -> Vec<&mut Array2<f64>>;

    fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    fn zeros_like(&self) -> Vec<Array2<f64>> {
        self.tensors().iter().map(|t| Array2::zeros(t.raw_dim())).collect()
    }

    fn all_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }

    /// `self <- tau * online + (1 - tau) * self`.
    fn soft_update_from(&mut self, online: &Self, tau: f64)
    where
        Self: Sized,
    {
        for (t, o) in self.tensors_mut().into_iter().zip(online.tensors()) {
            t.zip_mut_with(o, |t, &o| *t = tau * o + (1.0 - tau) * *t);
        }
    }

    fn hard_update_from(&mut self, online: &Self)
    where
        Self: Sized,
    {
        for (t, o) in self.tensors_mut().into_iter().zip(online.tensors()) {
            t.assign(o);
        }
    }

    /// Flattened copy of every parameter, in tensor order.
    fn flat(&self) -> Vec<f64> {
        self.tensors().iter().flat_map(|t| t.iter().copied()).collect()
    }
}

pub fn grad_norm(grads: &[Array2<f64>]) -> f64 {
    grads
        .iter()
        .map(|g| g.iter().map(|v| v * v).sum::<f64>())
        .sum::<f64>()
        .sqrt()
}

/// Scales gradients in place so their joint L2 norm is at most `max_norm`;
/// returns the norm before clipping.
pub fn clip_grad_norm(grads: &mut [Array2<f64>], max_norm: f64) -> f64 {
    let norm = grad_norm(grads);
    if norm > max_norm && norm > 0.0 {
        let scale = max_norm / norm;
        for g in grads.iter_mut() {
            g.mapv_inplace(|v| v * scale);
        }
    }
    norm
}

/// Affine layer `y = x W + b` with `W` stored `in x out` and `b` as `1 x out`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    pub weight: Array2<f64>,
    pub bias: Array2<f64>,
}

impl Linear {
    /// Uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
    pub fn init<R: Rng + ?Sized>(rng: &mut R, inputs: usize, outputs: usize) -> Self {
        let bound = 1.0 / (inputs as f64).sqrt();
        Linear {
            weight: Array2::from_shape_fn((inputs, outputs), |_| rng.random_range(-bound..bound)),
            bias: Array2::from_shape_fn((1, outputs), |_| rng.random_range(-bound..bound)),
        }
    }

    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Linear {
            weight: Array2::zeros((inputs, outputs)),
            bias: Array2::zeros((1, outputs)),
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.nrows()
    }

    pub fn outputs(&self) -> usize {
        self.weight.ncols()
    }

    pub fn forward(&self, x: &Array2<f64>) -> Array2<f64> {
        x.dot(&self.weight) + &self.bias
    }

    /// Accumulates parameter gradients and returns the input gradient.
    pub fn backward(
        &self,
        x: &Array2<f64>,
        grad_out: &Array2<f64>,
        grad_weight: &mut Array2<f64>,
        grad_bias: &mut Array2<f64>,
    ) -> Array2<f64> {
        ndarray::linalg::general_mat_mul(1.0, &x.t(), grad_out, 1.0, grad_weight);
        *grad_bias += &grad_out.sum_axis(Axis(0)).insert_axis(Axis(0));
        grad_out.dot(&self.weight.t())
    }
}

/// Stack of affine layers; hidden layers use `hidden`, the last one `output`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Linear>,
    pub hidden: Activation,
    pub output: Activation,
}

/// Forward intermediates needed by [`Mlp::backward`].
#[derive(Debug, Clone)]
pub struct MlpCache {
    /// Input to each layer.
    inputs: Vec<Array2<f64>>,
    /// Pre-activation of each layer.
    pre: Vec<Array2<f64>>,
}

impl Mlp {
    /// `widths = [in, h1, ..., out]`.
    pub fn new<R: Rng + ?Sized>(rng: &mut R, widths: &[usize], hidden: Activation, output: Activation) -> Self {
        assert!(widths.len() >= 2, "an MLP needs input and output widths");
        let layers = widths.windows(2).map(|w| Linear::init(rng, w[0], w[1])).collect();
        Mlp { layers, hidden, output }
    }

    pub fn inputs(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn outputs(&self) -> usize {
        self.layers.last().expect("non-empty").outputs()
    }

    /// Zeroes the last layer so the output starts at exactly `output(0)`.
    pub fn zero_output_layer(&mut self) {
        let last = self.layers.last_mut().expect("non-empty");
        last.weight.fill(0.0);
        last.bias.fill(0.0);
    }

    fn activation(&self, layer: usize) -> Activation {
        if layer + 1 == self.layers.len() {
            self.output
        } else {
            self.hidden
        }
    }

    pub fn forward(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        self.forward_cached(x).map(|(y, _)| y)
    }

    pub fn forward_cached(&self, x: &Array2<f64>) -> Result<(Array2<f64>, MlpCache)> {
        if x.ncols() != self.inputs() {
            return Err(Error::Shape(format!(
                "MLP expects {} inputs, got {}",
                self.inputs(),
                x.ncols()
            )));
        }
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut h = x.clone();
        for (l, layer) in self.layers.iter().enumerate() {
            let z = layer.forward(&h);
            let next = self.activation(l).apply_array(&z);
            inputs.push(h);
            pre.push(z);
            h = next;
        }
        Ok((h, MlpCache { inputs, pre }))
    }

    /// Gradients of a scalar loss given `d loss / d output`. Returns the
    /// parameter gradients (in [`Params::tensors`] order) and the input
    /// gradient.
    pub fn backward(&self, cache: &MlpCache, grad_out: &Array2<f64>) -> Result<(Vec<Array2<f64>>, Array2<f64>)> {
        let mut grads = self.zeros_like();
        let grad_in = self.backward_into(cache, grad_out, &mut grads)?;
        Ok((grads, grad_in))
    }

    /// Like [`Mlp::backward`] but accumulates into `grads`.
    pub fn backward_into(
        &self,
        cache: &MlpCache,
        grad_out: &Array2<f64>,
        grads: &mut [Array2<f64>],
    ) -> Result<Array2<f64>> {
        let last = cache.pre.last().ok_or_else(|| Error::Shape("empty cache".into()))?;
        if grad_out.dim() != last.dim() {
            return Err(Error::Shape(format!(
                "output gradient {:?} does not match output {:?}",
                grad_out.dim(),
                last.dim()
            )));
        }
        let mut g = grad_out.clone();
        for l in (0..self.layers.len()).rev() {
            let act = self.activation(l);
            if act != Activation::Identity {
                g.zip_mut_with(&cache.pre[l], |g, &z| *g *= act.derivative(z));
            }
            let (gw, rest) = grads[2 * l..].split_at_mut(1);
            g = self.layers[l].backward(&cache.inputs[l], &g, &mut gw[0], &mut rest[0]);
        }
        Ok(g)
    }
}

impl Params for Mlp {
    fn tensors(&self) -> Vec<&Array2<f64>> {
        self.layers.iter().flat_map(|l| [&l.weight, &l.bias]).collect()
    }

    fn tensors_mut(&mut self) -> Vec<&mut Array2<f64>> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .collect()
    }
}

/// Row-wise softmax.
pub fn softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    out
}

/// Row-wise log-softmax.
pub fn log_softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        row.mapv_inplace(|v| v - lse);
    }
    out
}

/// `[a | b]` column-wise.
pub fn concat_cols(a: &Array2<f64>, b: &Array2<f64>) -> Array2<f64> {
    ndarray::concatenate(Axis(1), &[a.view(), b.view()]).expect("matching row counts")
}

/// Splits the columns at `at`.
pub fn split_cols(x: &Array2<f64>, at: usize) -> (Array2<f64>, Array2<f64>) {
    (x.slice(s![.., ..at]).to_owned(), x.slice(s![.., at..]).to_owned())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OptimizerKind {
    Adam { beta1: f64, beta2: f64, eps: f64 },
    Sgd,
}

impl Default for OptimizerKind {
    fn default() -> Self {
        OptimizerKind::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First-order optimiser state for one parameter set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Optimizer {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    pub step: u64,
    first_moment: Vec<Array2<f64>>,
    second_moment: Vec<Array2<f64>>,
}

impl Optimizer {
    pub fn new<P: Params>(params: &P, kind: OptimizerKind, learning_rate: f64) -> Self {
        let (first_moment, second_moment) = match kind {
            OptimizerKind::Adam { .. } => (params.zeros_like(), params.zeros_like()),
            OptimizerKind::Sgd => (Vec::new(), Vec::new()),
        };
        Optimizer {
            kind,
            learning_rate,
            step: 0,
            first_moment,
            second_moment,
        }
    }

    /// Gradient descent step.
    pub fn apply<P: Params>(&mut self, params: &mut P, grads: &[Array2<f64>]) {
        self.step += 1;
        let lr = self.learning_rate;
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.tensors_mut().into_iter().zip(grads) {
                    p.scaled_add(-lr, g);
                }
            }
            OptimizerKind::Adam { beta1, beta2, eps } => {
                let t = self.step as i32;
                let c1 = 1.0 - beta1.powi(t);
                let c2 = 1.0 - beta2.powi(t);
                for (((p, g), m), v) in params
                    .tensors_mut()
                    .into_iter()
                    .zip(grads)
                    .zip(self.first_moment.iter_mut())
                    .zip(self.second_moment.iter_mut())
                {
                    ndarray::Zip::from(p).and(g).and(m).and(v).for_each(|p, &g, m, v| {
                        *m = beta1 * *m + (1.0 - beta1) * g;
                        *v = beta2 * *v + (1.0 - beta2) * g * g;
                        *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
                    });
                }
            }
        }
    }
}

/// One-hot rows for `indices` over `width` classes.
pub fn one_hot(indices: &[usize], width: usize) -> Array2<f64> {
    let mut out = Array2::zeros((indices.len(), width));
    for (r, &i) in indices.iter().enumerate() {
        out[[r, i]] = 1.0;
    }
    out
}

pub fn row(values: &[f64]) -> Array2<f64> {
    Array1::from(values.to_vec()).insert_axis(Axis(0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_layer_passes_input_through() {
        let mlp = Mlp {
            layers: vec![Linear {
                weight: Array2::eye(3),
                bias: Array2::zeros((1, 3)),
            }],
            hidden: Activation::Identity,
            output: Activation::Identity,
        };
        let x = ndarray::array![[1.0, -2.0, 3.5], [0.0, 4.0, -1.0]];
        assert_eq!(mlp.forward(&x).unwrap(), x);
    }

    #[test]
    fn leaky_slope() {
        let a = Activation::LeakyRelu(0.2);
        assert_eq!(a.apply(-5.0), -1.0);
        assert_eq!(a.derivative(-5.0), 0.2);
        assert_eq!(a.apply(3.0), 3.0);
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let mlp = Mlp::new(&mut ChaCha8Rng::seed_from_u64(0), &[3, 4, 2], Activation::LeakyRelu(0.01), Activation::Identity);
        assert!(mlp.forward(&Array2::zeros((1, 4))).is_err());
        let (_, cache) = mlp.forward_cached(&Array2::zeros((2, 3))).unwrap();
        assert!(mlp.backward(&cache, &Array2::zeros((2, 3))).is_err());
    }

    #[test]
    fn mlp_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mlp = Mlp::new(&mut rng, &[3, 5, 4, 2], Activation::LeakyRelu(0.1), Activation::LeakyRelu(0.3));
        let x = Array2::from_shape_fn((4, 3), |_| rng.random_range(-1.0..1.0));
        let target = Array2::from_shape_fn((4, 2), |_| rng.random_range(-1.0..1.0));
        let loss = |m: &Mlp| {
            let y = m.forward(&x).unwrap();
            (&y - &target).mapv(|v| v * v).sum()
        };
        let (y, cache) = mlp.forward_cached(&x).unwrap();
        let (grads, _) = mlp.backward(&cache, &((&y - &target) * 2.0)).unwrap();
        let analytic: Vec<f64> = grads.iter().flat_map(|g| g.iter().copied()).collect();
        let h = 1e-5;
        let mut k = 0;
        for t in 0..mlp.tensors().len() {
            for idx in 0..mlp.tensors()[t].len() {
                let mut plus = mlp.clone();
                plus.tensors_mut()[t].as_slice_mut().unwrap()[idx] += h;
                let mut minus = mlp.clone();
                minus.tensors_mut()[t].as_slice_mut().unwrap()[idx] -= h;
                let numeric = (loss(&plus) - loss(&minus)) / (2.0 * h);
                let a = analytic[k];
                let scale = a.abs().max(numeric.abs()).max(1e-6);
                assert!((a - numeric).abs() / scale < 1e-4, "param {k}: {a} vs {numeric}");
                k += 1;
            }
        }
    }

    #[test]
    fn softmax_rows_normalise() {
        let logits = ndarray::array![[1.0, 2.0, 3.0], [1000.0, 1000.0, -1000.0]];
        let p = softmax_rows(&logits);
        for r in p.rows() {
            assert!((r.sum() - 1.0).abs() < 1e-12);
        }
        let lp = log_softmax_rows(&logits);
        assert!((lp[[1, 0]] - 0.5f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn adam_and_sgd_descend() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut mlp = Mlp::new(&mut rng, &[2, 1], Activation::Identity, Activation::Identity);
        let x = ndarray::array![[1.0, 2.0]];
        for kind in [OptimizerKind::default(), OptimizerKind::Sgd] {
            let mut opt = Optimizer::new(&mlp, kind, 0.05);
            let before = mlp.forward(&x).unwrap()[[0, 0]].powi(2);
            for _ in 0..20 {
                let (y, cache) = mlp.forward_cached(&x).unwrap();
                let (g, _) = mlp.backward(&cache, &(&y * 2.0)).unwrap();
                opt.apply(&mut mlp, &g);
            }
            assert!(mlp.forward(&x).unwrap()[[0, 0]].powi(2) < before);
        }
    }

    #[test]
    fn soft_and_hard_updates() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let online = Mlp::new(&mut rng, &[2, 3, 1], Activation::LeakyRelu(0.01), Activation::Identity);
        let mut target = Mlp::new(&mut rng, &[2, 3, 1], Activation::LeakyRelu(0.01), Activation::Identity);
        let old = target.flat();
        target.soft_update_from(&online, 0.25);
        for ((t, o), n) in old.iter().zip(online.flat()).zip(target.flat()) {
            assert!((n - (0.25 * o + 0.75 * t)).abs() < 1e-15);
        }
        target.hard_update_from(&online);
        assert_eq!(target, online);
    }

    #[test]
    fn clipping_bounds_norm() {
        let mut g = vec![Array2::from_elem((2, 2), 3.0)];
        let before = clip_grad_norm(&mut g, 1.0);
        assert_eq!(before, 6.0);
        assert!((grad_norm(&g) - 1.0).abs() < 1e-12);
    }
}
