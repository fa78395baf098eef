//! Centralised attention critic with a vector head: for agent `i` it returns
//! Q for every candidate own action given the other agents' actions.

use ndarray::{Array2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::OBS_DIM;
use crate::error::{Error, Result};
use crate::nn::{concat_cols, one_hot, split_cols, Activation, Mlp, MlpCache, Params};

/// How agent `i` weighs the other agents' contributions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttentionMode {
    /// Learned dot-product attention.
    #[default]
    Learned,
    /// Every other agent weighted `1 / (N - 1)`.
    Uniform,
}

/// Tensors per agent: state encoder (2), state-action encoder (2), output head (4).
const AGENT_TENSORS: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionCritic {
    pub num_agents: usize,
    pub num_actions: usize,
    pub hidden: usize,
    pub heads: usize,
    pub mode: AttentionMode,
    pub leak: f64,
    /// `o_i -> s_i`.
    pub state_encoders: Vec<Mlp>,
    /// `(o_j, a_j) -> e_j`.
    pub sa_encoders: Vec<Mlp>,
    /// `[s_i, x_i] -> Q_i(., a_-i)`.
    pub outputs: Vec<Mlp>,
    pub w_query: Array2<f64>,
    pub w_key: Array2<f64>,
    pub w_value: Array2<f64>,
}

/// Everything the backward pass needs, plus the outputs.
#[derive(Debug, Clone)]
pub struct CriticPass {
    /// `q[i]` is `B x A`.
    pub q: Vec<Array2<f64>>,
    /// `attention[i][j]` is `B x H` for `j != i`.
    pub attention: Vec<Vec<Option<Array2<f64>>>>,
    s_cache: Vec<MlpCache>,
    s: Vec<Array2<f64>>,
    e_cache: Vec<MlpCache>,
    e: Vec<Array2<f64>>,
    query: Vec<Array2<f64>>,
    key: Vec<Array2<f64>>,
    value_pre: Vec<Array2<f64>>,
    value: Vec<Array2<f64>>,
    out_cache: Vec<MlpCache>,
}

impl AttentionCritic {
    pub fn new<R: Rng + ?Sized>(
        rng: &mut R,
        num_agents: usize,
        num_actions: usize,
        hidden: usize,
        heads: usize,
        mode: AttentionMode,
        leak: f64,
    ) -> Result<Self> {
        if num_agents == 0 || num_actions == 0 || hidden == 0 || heads == 0 {
            return Err(Error::InvalidConfig("critic dimensions must be positive".into()));
        }
        if hidden % heads != 0 {
            return Err(Error::InvalidConfig(format!(
                "hidden width {hidden} is not divisible by {heads} attention heads"
            )));
        }
        let act = Activation::LeakyRelu(leak);
        let mut state_encoders = Vec::with_capacity(num_agents);
        let mut sa_encoders = Vec::with_capacity(num_agents);
        let mut outputs = Vec::with_capacity(num_agents);
        for _ in 0..num_agents {
            state_encoders.push(Mlp::new(rng, &[OBS_DIM, hidden], act, act));
            sa_encoders.push(Mlp::new(rng, &[OBS_DIM + num_actions, hidden], act, act));
            outputs.push(Mlp::new(rng, &[2 * hidden, hidden, num_actions], act, Activation::Identity));
        }
        let bound = 1.0 / (hidden as f64).sqrt();
        let mut square = || Array2::from_shape_fn((hidden, hidden), |_| rng.random_range(-bound..bound));
        Ok(AttentionCritic {
            num_agents,
            num_actions,
            hidden,
            heads,
            mode,
            leak,
            state_encoders,
            sa_encoders,
            outputs,
            w_query: square(),
            w_key: square(),
            w_value: square(),
        })
    }

    fn head_width(&self) -> usize {
        self.hidden / self.heads
    }

    /// Sums each head's column block: `B x h -> B x H`.
    fn block_sum(&self, m: &Array2<f64>) -> Array2<f64> {
        let (b, _) = m.dim();
        m.to_shape((b, self.heads, self.head_width()))
            .expect("contiguous")
            .sum_axis(Axis(2))
    }

    /// Repeats each head's column: `B x H -> B x h`.
    fn block_expand(&self, w: &Array2<f64>) -> Array2<f64> {
        let d = self.head_width();
        Array2::from_shape_fn((w.nrows(), self.hidden), |(b, c)| w[[b, c / d]])
    }

    fn check_inputs(&self, obs: &[Array2<f64>], actions: &[Vec<usize>]) -> Result<usize> {
        if obs.len() != self.num_agents {
            return Err(Error::LengthMismatch {
                expected: self.num_agents,
                actual: obs.len(),
            });
        }
        if actions.len() != self.num_agents {
            return Err(Error::LengthMismatch {
                expected: self.num_agents,
                actual: actions.len(),
            });
        }
        let rows = obs[0].nrows();
        for (o, a) in obs.iter().zip(actions) {
            if o.dim() != (rows, OBS_DIM) || a.len() != rows {
                return Err(Error::Shape("joint batch rows disagree".into()));
            }
            if let Some(&bad) = a.iter().find(|&&x| x >= self.num_actions) {
                return Err(Error::InvalidAction(bad));
            }
        }
        Ok(rows)
    }

    /// Q vectors for every agent on a joint batch.
    pub fn forward(&self, obs: &[Array2<f64>], actions: &[Vec<usize>]) -> Result<CriticPass> {
        let rows = self.check_inputs(obs, actions)?;
        let n = self.num_agents;
        let leak = Activation::LeakyRelu(self.leak);
        let mut s_cache = Vec::with_capacity(n);
        let mut s = Vec::with_capacity(n);
        let mut e_cache = Vec::with_capacity(n);
        let mut e = Vec::with_capacity(n);
        for j in 0..n {
            let (sj, cj) = self.state_encoders[j].forward_cached(&obs[j])?;
            s.push(sj);
            s_cache.push(cj);
            let sa = concat_cols(&obs[j], &one_hot(&actions[j], self.num_actions));
            let (ej, cj) = self.sa_encoders[j].forward_cached(&sa)?;
            e.push(ej);
            e_cache.push(cj);
        }
        let query: Vec<_> = s.iter().map(|x| x.dot(&self.w_query)).collect();
        let key: Vec<_> = e.iter().map(|x| x.dot(&self.w_key)).collect();
        let value_pre: Vec<_> = e.iter().map(|x| x.dot(&self.w_value)).collect();
        let value: Vec<_> = value_pre.iter().map(|x| leak.apply_array(x)).collect();

        let mut attention = Vec::with_capacity(n);
        let mut q = Vec::with_capacity(n);
        let mut out_cache = Vec::with_capacity(n);
        for i in 0..n {
            let weights = self.attention_for(i, rows, &query, &key);
            let mut x = Array2::zeros((rows, self.hidden));
            for (j, w) in weights.iter().enumerate() {
                if let Some(w) = w {
                    x += &(self.block_expand(w) * &value[j]);
                }
            }
            let (qi, ci) = self.outputs[i].forward_cached(&concat_cols(&s[i], &x))?;
            if qi.iter().any(|v| !v.is_finite()) {
                return Err(Error::Diverged(format!("critic output for agent {i} is not finite")));
            }
            q.push(qi);
            out_cache.push(ci);
            attention.push(weights);
        }
        Ok(CriticPass {
            q,
            attention,
            s_cache,
            s,
            e_cache,
            e,
            query,
            key,
            value_pre,
            value,
            out_cache,
        })
    }

    fn attention_for(
        &self,
        i: usize,
        rows: usize,
        query: &[Array2<f64>],
        key: &[Array2<f64>],
    ) -> Vec<Option<Array2<f64>>> {
        let n = self.num_agents;
        let mut out: Vec<Option<Array2<f64>>> = vec![None; n];
        if n < 2 {
            return out;
        }
        if self.mode == AttentionMode::Uniform {
            for (j, slot) in out.iter_mut().enumerate() {
                if j != i {
                    *slot = Some(Array2::from_elem((rows, self.heads), 1.0 / (n - 1) as f64));
                }
            }
            return out;
        }
        let mut max = Array2::from_elem((rows, self.heads), f64::NEG_INFINITY);
        for j in (0..n).filter(|&j| j != i) {
            let score = self.block_sum(&(&key[j] * &query[i]));
            max.zip_mut_with(&score, |m, &s| *m = m.max(s));
            out[j] = Some(score);
        }
        let mut total = Array2::<f64>::zeros((rows, self.heads));
        for w in out.iter_mut().flatten() {
            w.zip_mut_with(&max, |s, &m| *s = (*s - m).exp());
            total += &*w;
        }
        for w in out.iter_mut().flatten() {
            *w /= &total;
        }
        out
    }

    /// Attention of agent `i` over the others on a joint batch.
    pub fn attention_weights(&self, i: usize, obs: &[Array2<f64>], actions: &[Vec<usize>]) -> Result<Vec<Option<Array2<f64>>>> {
        let pass = self.forward(obs, actions)?;
        Ok(pass.attention[i].clone())
    }

    /// Parameter gradients given `d loss / d q[i]` for every agent.
    pub fn backward(&self, pass: &CriticPass, grad_q: &[Array2<f64>]) -> Result<Vec<Array2<f64>>> {
        let n = self.num_agents;
        if grad_q.len() != n {
            return Err(Error::LengthMismatch {
                expected: n,
                actual: grad_q.len(),
            });
        }
        let rows = pass.q[0].nrows();
        let zeros = || Array2::<f64>::zeros((rows, self.hidden));
        let mut grads = self.zeros_like();
        let shared = n * AGENT_TENSORS;
        let mut ds: Vec<_> = (0..n).map(|_| zeros()).collect();
        let mut de: Vec<_> = (0..n).map(|_| zeros()).collect();
        let mut dquery: Vec<_> = (0..n).map(|_| zeros()).collect();
        let mut dkey: Vec<_> = (0..n).map(|_| zeros()).collect();
        let mut dvalue: Vec<_> = (0..n).map(|_| zeros()).collect();

        for i in 0..n {
            let off = i * AGENT_TENSORS;
            let g_in = self.outputs[i].backward_into(&pass.out_cache[i], &grad_q[i], &mut grads[off + 4..off + 8])?;
            let (ds_direct, dx) = split_cols(&g_in, self.hidden);
            ds[i] += &ds_direct;
            let mut drho: Vec<Option<Array2<f64>>> = vec![None; n];
            for (j, w) in pass.attention[i].iter().enumerate() {
                let Some(w) = w else { continue };
                dvalue[j] += &(self.block_expand(w) * &dx);
                if self.mode == AttentionMode::Learned {
                    drho[j] = Some(self.block_sum(&(&dx * &pass.value[j])));
                }
            }
            if self.mode == AttentionMode::Learned && n > 1 {
                // Softmax backward: dscore_j = rho_j (drho_j - sum_k rho_k drho_k).
                let mut mean = Array2::<f64>::zeros((rows, self.heads));
                for (w, d) in pass.attention[i].iter().zip(&drho) {
                    if let (Some(w), Some(d)) = (w, d) {
                        mean += &(w * d);
                    }
                }
                for (j, (w, d)) in pass.attention[i].iter().zip(&drho).enumerate() {
                    if let (Some(w), Some(d)) = (w, d) {
                        let dscore = self.block_expand(&(w * &(d - &mean)));
                        dkey[j] += &(&dscore * &pass.query[i]);
                        dquery[i] += &(&dscore * &pass.key[j]);
                    }
                }
            }
        }

        let leak = Activation::LeakyRelu(self.leak);
        for i in 0..n {
            grads[shared] += &pass.s[i].t().dot(&dquery[i]);
            ds[i] += &dquery[i].dot(&self.w_query.t());
            grads[shared + 1] += &pass.e[i].t().dot(&dkey[i]);
            de[i] += &dkey[i].dot(&self.w_key.t());
            let mut dpre = dvalue[i].clone();
            dpre.zip_mut_with(&pass.value_pre[i], |g, &z| *g *= leak.derivative(z));
            grads[shared + 2] += &pass.e[i].t().dot(&dpre);
            de[i] += &dpre.dot(&self.w_value.t());
        }
        for i in 0..n {
            let off = i * AGENT_TENSORS;
            self.state_encoders[i].backward_into(&pass.s_cache[i], &ds[i], &mut grads[off..off + 2])?;
            self.sa_encoders[i].backward_into(&pass.e_cache[i], &de[i], &mut grads[off + 2..off + 4])?;
        }
        Ok(grads)
    }
}

impl Params for AttentionCritic {
    fn tensors(&self) -> Vec<&Array2<f64>> {
        let mut out = Vec::with_capacity(self.num_agents * AGENT_TENSORS + 3);
        for i in 0..self.num_agents {
            out.extend(self.state_encoders[i].tensors());
            out.extend(self.sa_encoders[i].tensors());
            out.extend(self.outputs[i].tensors());
        }
        out.extend([&self.w_query, &self.w_key, &self.w_value]);
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut Array2<f64>> {
        let mut out = Vec::with_capacity(self.num_agents * AGENT_TENSORS + 3);
        for ((s, e), f) in self
            .state_encoders
            .iter_mut()
            .zip(self.sa_encoders.iter_mut())
            .zip(self.outputs.iter_mut())
        {
            out.extend(s.tensors_mut());
            out.extend(e.tensors_mut());
            out.extend(f.tensors_mut());
        }
        out.extend([&mut self.w_query, &mut self.w_key, &mut self.w_value]);
        out
    }
}
