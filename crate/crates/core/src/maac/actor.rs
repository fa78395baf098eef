use ndarray::{Array1, Array2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::OBS_DIM;
use crate::error::{Error, Result};
use crate::nn::{log_softmax_rows, softmax_rows, Activation, Mlp, Params};

/// Decentralised softmax policy over one agent's actions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Actor {
    pub net: Mlp,
}

impl Actor {
    /// Two hidden layers; the output layer starts at zero so the initial
    /// policy is exactly uniform.
    pub fn new<R: Rng + ?Sized>(rng: &mut R, hidden: usize, num_actions: usize, leak: f64) -> Self {
        let act = Activation::LeakyRelu(leak);
        let mut net = Mlp::new(rng, &[OBS_DIM, hidden, hidden, num_actions], act, Activation::Identity);
        net.zero_output_layer();
        Actor { net }
    }

    pub fn num_actions(&self) -> usize {
        self.net.outputs()
    }

    pub fn logits(&self, obs: &Array2<f64>) -> Result<Array2<f64>> {
        let z = self.net.forward(obs)?;
        if z.iter().any(|v| !v.is_finite()) {
            return Err(Error::Diverged("policy logits are not finite".into()));
        }
        Ok(z)
    }

    /// Row-wise action probabilities.
    pub fn probabilities(&self, obs: &Array2<f64>) -> Result<Array2<f64>> {
        Ok(softmax_rows(&self.logits(obs)?))
    }

    pub fn distribution(&self, obs: &[f64; OBS_DIM]) -> Result<Array1<f64>> {
        let x = Array2::from_shape_vec((1, OBS_DIM), obs.to_vec()).expect("row");
        Ok(self.probabilities(&x)?.row(0).to_owned())
    }

    pub fn greedy(&self, obs: &[f64; OBS_DIM]) -> Result<usize> {
        Ok(argmax(self.distribution(obs)?.as_slice().expect("contiguous")))
    }

    pub fn sample<R: Rng + ?Sized>(&self, obs: &[f64; OBS_DIM], rng: &mut R) -> Result<usize> {
        Ok(sample_categorical(self.distribution(obs)?.as_slice().expect("contiguous"), rng))
    }

    /// Policy loss `mean_b sum_a pi(a) (alpha log pi(a) - q(a))` with `q`
    /// held fixed, and its parameter gradients. Subtracting the
    /// counterfactual baseline leaves the gradient unchanged, since the
    /// baseline does not depend on the agent's own action.
    pub fn policy_loss(&self, obs: &Array2<f64>, q: &Array2<f64>, alpha: f64) -> Result<(f64, Vec<Array2<f64>>)> {
        let (z, cache) = self.net.forward_cached(obs)?;
        if z.dim() != q.dim() {
            return Err(Error::Shape(format!("Q {:?} does not match logits {:?}", q.dim(), z.dim())));
        }
        let pi = softmax_rows(&z);
        let log_pi = log_softmax_rows(&z);
        let rows = z.nrows() as f64;
        let u = &log_pi * alpha - q;
        let mut loss = 0.0;
        let mut grad_z = Array2::zeros(z.raw_dim());
        for ((p, u), mut g) in pi.rows().into_iter().zip(u.rows()).zip(grad_z.rows_mut()) {
            let mean = p.dot(&u);
            loss += mean;
            for ((g, &p), &u) in g.iter_mut().zip(p).zip(u) {
                *g = p * (u - mean) / rows;
            }
        }
        let (grads, _) = self.net.backward(&cache, &grad_z)?;
        Ok((loss / rows, grads))
    }
}

impl Params for Actor {
    fn tensors(&self) -> Vec<&Array2<f64>> {
        self.net.tensors()
    }

    fn tensors_mut(&mut self) -> Vec<&mut Array2<f64>> {
        self.net.tensors_mut()
    }
}

/// First index of the largest value.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Inverse-CDF draw from normalised probabilities.
pub fn sample_categorical<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(probs.len() - 1)
}

/// `b = sum_a pi(a) q(a)` per row.
pub fn counterfactual_baseline(pi: &Array2<f64>, q: &Array2<f64>) -> Array1<f64> {
    (pi * q).sum_axis(ndarray::Axis(1))
}

/// `A(a) = q(a) - b` per row.
pub fn advantages(pi: &Array2<f64>, q: &Array2<f64>) -> Array2<f64> {
    let b = counterfactual_baseline(pi, q);
    q - &b.insert_axis(ndarray::Axis(1))
}

/// Row-wise policy entropy.
pub fn entropy(pi: &Array2<f64>) -> Array1<f64> {
    pi.map_axis(ndarray::Axis(1), |row| {
        -row.iter().filter(|&&p| p > 0.0).map(|&p| p * p.ln()).sum::<f64>()
    })
}
