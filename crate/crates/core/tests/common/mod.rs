#![allow(dead_code)]

pub mod oracle;

use std::sync::Arc;

use malora_core::analytic::NetworkModel;
use malora_core::link::LinkModel;
use malora_core::maac::{AttentionCritic, AttentionMode};
use malora_core::nn::Params;
use malora_core::radio::PhyConfig;
use malora_core::topology::{grid_gateways, NetworkTopology};
use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random network on the 8 km square with the 2x2 gateway grid.
pub fn network(num_eds: usize, seed: u64) -> Arc<NetworkModel> {
    let topo = NetworkTopology::random(&mut rng(seed), num_eds, grid_gateways(2, 8000.0), 1, 8000.0);
    Arc::new(NetworkModel::new(topo, PhyConfig::default(), LinkModel::default()).unwrap())
}

pub fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-1.5..1.5))
}

/// Joint batch of random normalised observations and actions.
pub fn random_joint(rng: &mut ChaCha8Rng, agents: usize, actions: usize, rows: usize) -> (Vec<Array2<f64>>, Vec<Vec<usize>>) {
    let obs = (0..agents).map(|_| random_matrix(rng, rows, 3)).collect();
    let acts = (0..agents)
        .map(|_| (0..rows).map(|_| rng.random_range(0..actions)).collect())
        .collect();
    (obs, acts)
}

pub fn random_targets(rng: &mut ChaCha8Rng, agents: usize, rows: usize) -> Vec<Array1<f64>> {
    (0..agents)
        .map(|_| Array1::from_shape_fn(rows, |_| rng.random_range(-2.0..2.0)))
        .collect()
}

pub fn small_critic(rng: &mut ChaCha8Rng, agents: usize, actions: usize, hidden: usize, heads: usize, mode: AttentionMode) -> AttentionCritic {
    AttentionCritic::new(rng, agents, actions, hidden, heads, mode, 0.01).unwrap()
}

/// `|a - n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// Worst relative error between `grads` and central differences of `loss`
/// with step `1e-5`.
pub fn worst_fd_error<P: Params + Clone>(params: &P, grads: &[Array2<f64>], loss: impl Fn(&P) -> f64) -> f64 {
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    let count = params.tensors().len();
    for t in 0..count {
        for idx in 0..params.tensors()[t].len() {
            let mut plus = params.clone();
            plus.tensors_mut()[t].as_slice_mut().unwrap()[idx] += h;
            let mut minus = params.clone();
            minus.tensors_mut()[t].as_slice_mut().unwrap()[idx] -= h;
            let numeric = (loss(&plus) - loss(&minus)) / (2.0 * h);
            let analytic = grads[t].as_slice().unwrap()[idx];
            worst = worst.max(relative_error(analytic, numeric));
        }
    }
    worst
}

/// Worst finite-difference error per network family over `configs` random
/// instances, each kept at or below 200 parameters.
#[derive(Debug, Clone, Copy, Default)]
pub struct GradientSuite {
    pub mlp: f64,
    pub critic: f64,
    pub actor: f64,
    pub max_params: usize,
}

pub fn gradient_suite(configs: usize, seed: u64) -> GradientSuite {
    use malora_core::maac::{critic_loss, Actor};
    use malora_core::nn::{Activation, Mlp};

    let mut r = rng(seed);
    let mut out = GradientSuite::default();
    for _ in 0..configs {
        // Generic MLP with a squared-error head.
        let widths: Vec<usize> = (0..r.random_range(2..5)).map(|_| r.random_range(1..6)).collect();
        let mlp = Mlp::new(&mut r, &widths, Activation::LeakyRelu(0.01), Activation::LeakyRelu(0.01));
        let rows = r.random_range(1..5);
        let x = random_matrix(&mut r, rows, widths[0]);
        let target = random_matrix(&mut r, rows, *widths.last().unwrap());
        let mse = |m: &Mlp| (&m.forward(&x).unwrap() - &target).mapv(|v| v * v).sum();
        let (y, cache) = mlp.forward_cached(&x).unwrap();
        let (g, _) = mlp.backward(&cache, &((&y - &target) * 2.0)).unwrap();
        out.max_params = out.max_params.max(mlp.num_params());
        out.mlp = out.mlp.max(worst_fd_error(&mlp, &g, mse));

        // Attention critic.
        let critic = loop {
            let agents = r.random_range(1..4);
            let actions = r.random_range(2..5);
            let heads = r.random_range(1..3);
            let hidden = heads * r.random_range(1..3);
            let mode = if r.random::<bool>() { AttentionMode::Learned } else { AttentionMode::Uniform };
            let c = small_critic(&mut r, agents, actions, hidden, heads, mode);
            if c.num_params() <= 200 {
                break c;
            }
        };
        let (agents, actions) = (critic.num_agents, critic.num_actions);
        out.max_params = out.max_params.max(critic.num_params());
        let rows = r.random_range(1..4);
        let (obs, acts) = random_joint(&mut r, agents, actions, rows);
        let targets = random_targets(&mut r, agents, rows);
        let (_, g) = critic_loss(&critic, &obs, &acts, &targets).unwrap();
        let loss = |c: &AttentionCritic| critic_loss(c, &obs, &acts, &targets).unwrap().0;
        out.critic = out.critic.max(worst_fd_error(&critic, &g, loss));

        // Actor with a fixed Q vector.
        let hidden = r.random_range(1..5);
        let actions = r.random_range(2..6);
        let mut actor = Actor::new(&mut r, hidden, actions, 0.01);
        for t in malora_core::nn::Params::tensors_mut(&mut actor) {
            t.mapv_inplace(|_| r.random_range(-1.0..1.0));
        }
        out.max_params = out.max_params.max(actor.num_params());
        let rows = r.random_range(1..5);
        let obs = random_matrix(&mut r, rows, 3);
        let q = random_matrix(&mut r, rows, actions);
        let alpha = r.random_range(0.0..0.5);
        let (_, g) = actor.policy_loss(&obs, &q, alpha).unwrap();
        let loss = |a: &Actor| a.policy_loss(&obs, &q, alpha).unwrap().0;
        out.actor = out.actor.max(worst_fd_error(&actor, &g, loss));
    }
    out
}
