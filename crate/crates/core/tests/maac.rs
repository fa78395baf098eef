mod common;

use common::*;
use malora_core::analytic::ACTIONS_PER_ED;
use malora_core::env::EnvConfig;
use malora_core::maac::{
    advantages, critic_loss, entropy, Actor, AttentionCritic, AttentionMode, JointBatch, LearnerConfig, Maac, TrainConfig,
    Trainer,
};
use malora_core::nn::{OptimizerKind, Params};
use ndarray::{Array1, Array2};
use rand::Rng;

fn lrelu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        0.01 * x
    }
}

/// Affine map `x W + b` written out with scalar loops.
fn affine(x: &[f64], w: &Array2<f64>, b: &Array2<f64>) -> Vec<f64> {
    (0..w.ncols())
        .map(|c| b[[0, c]] + (0..w.nrows()).map(|r| x[r] * w[[r, c]]).sum::<f64>())
        .collect()
}

fn matvec(x: &[f64], w: &Array2<f64>) -> Vec<f64> {
    (0..w.ncols()).map(|c| (0..w.nrows()).map(|r| x[r] * w[[r, c]]).sum()).collect()
}

/// Straight-line evaluation of one critic row, independent of the batched code.
fn oracle_q(critic: &AttentionCritic, obs: &[[f64; 3]], actions: &[usize], i: usize) -> Vec<f64> {
    let n = critic.num_agents;
    let h = critic.hidden;
    let d = h / critic.heads;
    let state = |k: usize| -> Vec<f64> {
        let l = &critic.state_encoders[k].layers[0];
        affine(&obs[k], &l.weight, &l.bias).into_iter().map(lrelu).collect()
    };
    let embed = |k: usize| -> Vec<f64> {
        let mut x = obs[k].to_vec();
        x.extend((0..critic.num_actions).map(|a| if a == actions[k] { 1.0 } else { 0.0 }));
        let l = &critic.sa_encoders[k].layers[0];
        affine(&x, &l.weight, &l.bias).into_iter().map(lrelu).collect()
    };
    let s_i = state(i);
    let query = matvec(&s_i, &critic.w_query);
    let others: Vec<usize> = (0..n).filter(|&j| j != i).collect();
    let mut x = vec![0.0; h];
    for head in 0..critic.heads {
        let cols = head * d..(head + 1) * d;
        let scores: Vec<f64> = others
            .iter()
            .map(|&j| {
                let key = matvec(&embed(j), &critic.w_key);
                cols.clone().map(|c| key[c] * query[c]).sum()
            })
            .collect();
        let weights: Vec<f64> = match critic.mode {
            AttentionMode::Uniform => vec![1.0 / others.len() as f64; others.len()],
            AttentionMode::Learned => {
                let total: f64 = scores.iter().map(|s| s.exp()).sum();
                scores.iter().map(|s| s.exp() / total).collect()
            }
        };
        for (&j, w) in others.iter().zip(weights) {
            let value: Vec<f64> = matvec(&embed(j), &critic.w_value).into_iter().map(lrelu).collect();
            for c in cols.clone() {
                x[c] += w * value[c];
            }
        }
    }
    let mut input = s_i;
    input.extend(x);
    let f = &critic.outputs[i];
    let hidden: Vec<f64> = affine(&input, &f.layers[0].weight, &f.layers[0].bias)
        .into_iter()
        .map(lrelu)
        .collect();
    affine(&hidden, &f.layers[1].weight, &f.layers[1].bias)
}

/// Deterministic small weights so the oracle case is fully pinned.
fn pin_weights(critic: &mut AttentionCritic) {
    let mut k = 0usize;
    for t in critic.tensors_mut() {
        for v in t.iter_mut() {
            *v = ((k * 37 + 11) % 23) as f64 / 23.0 - 0.5;
            k += 1;
        }
    }
}

#[test]
fn critic_matches_straight_line_oracle() {
    for (agents, mode) in [
        (2, AttentionMode::Learned),
        (3, AttentionMode::Learned),
        (3, AttentionMode::Uniform),
    ] {
        let mut r = rng(11);
        let mut critic = small_critic(&mut r, agents, 3, 4, 2, mode);
        pin_weights(&mut critic);
        let (obs, acts) = random_joint(&mut r, agents, 3, 5);
        let pass = critic.forward(&obs, &acts).unwrap();
        for b in 0..5 {
            let row_obs: Vec<[f64; 3]> = obs.iter().map(|o| [o[[b, 0]], o[[b, 1]], o[[b, 2]]]).collect();
            let row_act: Vec<usize> = acts.iter().map(|a| a[b]).collect();
            for i in 0..agents {
                let want = oracle_q(&critic, &row_obs, &row_act, i);
                for (a, w) in want.iter().enumerate() {
                    assert!((pass.q[i][[b, a]] - w).abs() < 1e-12, "agent {i} row {b} action {a}");
                }
            }
        }
    }
}

#[test]
fn gradients_match_finite_differences() {
    let suite = gradient_suite(100, 2024);
    assert!(suite.max_params <= 200);
    assert!(suite.mlp < 1e-4, "mlp {}", suite.mlp);
    assert!(suite.critic < 1e-3, "critic {}", suite.critic);
    assert!(suite.actor < 1e-3, "actor {}", suite.actor);
}

#[test]
fn attention_weights_are_distributions() {
    let mut r = rng(5);
    let critic = small_critic(&mut r, 6, 5, 8, 4, AttentionMode::Learned);
    let (obs, acts) = random_joint(&mut r, 6, 5, 40);
    for i in 0..6 {
        let w = critic.attention_weights(i, &obs, &acts).unwrap();
        assert!(w[i].is_none());
        let mut total = Array2::<f64>::zeros((40, 4));
        for m in w.iter().flatten() {
            assert!(m.iter().all(|&p| p >= 0.0));
            total += m;
        }
        assert!(total.iter().all(|&t| (t - 1.0).abs() <= 1e-6));
    }
}

#[test]
fn identical_embeddings_give_uniform_attention() {
    let mut r = rng(8);
    let mut critic = small_critic(&mut r, 4, 3, 4, 2, AttentionMode::Learned);
    let first = critic.sa_encoders[0].clone();
    for e in critic.sa_encoders.iter_mut() {
        *e = first.clone();
    }
    let obs = vec![random_matrix(&mut r, 3, 3); 4];
    let acts = vec![vec![1, 0, 2]; 4];
    let w = critic.attention_weights(2, &obs, &acts).unwrap();
    for m in w.iter().flatten() {
        assert!(m.iter().all(|&p| (p - 1.0 / 3.0).abs() < 1e-12));
    }
}

#[test]
fn two_agent_learned_and_uniform_critics_coincide() {
    let mut r = rng(21);
    let learned = small_critic(&mut r, 2, ACTIONS_PER_ED, 16, 4, AttentionMode::Learned);
    let uniform = AttentionCritic {
        mode: AttentionMode::Uniform,
        ..learned.clone()
    };
    let (obs, acts) = random_joint(&mut r, 2, ACTIONS_PER_ED, 64);
    let a = learned.forward(&obs, &acts).unwrap();
    let b = uniform.forward(&obs, &acts).unwrap();
    assert_eq!(a.q, b.q);
}

#[test]
fn other_agents_order_does_not_change_own_q() {
    let mut r = rng(3);
    let mut critic = small_critic(&mut r, 3, 4, 4, 2, AttentionMode::Learned);
    // Give agents 1 and 2 the same encoders so they can be swapped.
    critic.sa_encoders[2] = critic.sa_encoders[1].clone();
    critic.state_encoders[2] = critic.state_encoders[1].clone();
    let (obs, acts) = random_joint(&mut r, 3, 4, 6);
    let swapped_obs = vec![obs[0].clone(), obs[2].clone(), obs[1].clone()];
    let swapped_acts = vec![acts[0].clone(), acts[2].clone(), acts[1].clone()];
    let a = critic.forward(&obs, &acts).unwrap();
    let b = critic.forward(&swapped_obs, &swapped_acts).unwrap();
    for (x, y) in a.q[0].iter().zip(b.q[0].iter()) {
        assert!((x - y).abs() < 1e-12);
    }
}

#[test]
fn own_action_does_not_enter_own_q_vector() {
    let mut r = rng(4);
    let critic = small_critic(&mut r, 3, 4, 4, 2, AttentionMode::Learned);
    let (obs, mut acts) = random_joint(&mut r, 3, 4, 6);
    let before = critic.forward(&obs, &acts).unwrap().q[1].clone();
    acts[1] = acts[1].iter().map(|a| (a + 1) % 4).collect();
    assert_eq!(critic.forward(&obs, &acts).unwrap().q[1], before);
}

#[test]
fn counterfactual_advantage_has_zero_policy_mean() {
    let mut r = rng(17);
    let mut learner = Maac::new(
        3,
        ACTIONS_PER_ED,
        LearnerConfig {
            hidden_width: 16,
            attention_heads: 2,
            ..LearnerConfig::default()
        },
        &mut r,
    )
    .unwrap();
    for a in learner.actors.iter_mut() {
        for t in a.tensors_mut() {
            t.mapv_inplace(|_| r.random_range(-1.0..1.0));
        }
    }
    let (obs, acts) = random_joint(&mut r, 3, ACTIONS_PER_ED, 1000);
    let pass = learner.critic.forward(&obs, &acts).unwrap();
    for i in 0..3 {
        let pi = learner.actors[i].probabilities(&obs[i]).unwrap();
        let adv = advantages(&pi, &pass.q[i]);
        let mean = (&pi * &adv).sum_axis(ndarray::Axis(1));
        assert!(mean.iter().all(|m| m.abs() <= 1e-6));
    }
}

#[test]
fn fresh_policy_is_uniform() {
    let actor = Actor::new(&mut rng(0), 8, ACTIONS_PER_ED, 0.01);
    let p = actor.distribution(&[0.3, -1.0, 2.0]).unwrap();
    assert!(p.iter().all(|&x| (x - 1.0 / 48.0).abs() < 1e-15));
    assert!((p.sum() - 1.0).abs() < 1e-6);
    let h = entropy(&p.insert_axis(ndarray::Axis(0)));
    assert!((h[0] - 48f64.ln()).abs() < 1e-12);
}

#[test]
fn greedy_returns_argmax() {
    let mut r = rng(1);
    let mut actor = Actor::new(&mut r, 4, 6, 0.01);
    for t in actor.tensors_mut() {
        t.mapv_inplace(|_| r.random_range(-1.0..1.0));
    }
    let obs = [0.5, 0.2, -0.3];
    let p = actor.distribution(&obs).unwrap();
    let best = actor.greedy(&obs).unwrap();
    assert!(p.iter().all(|&x| x <= p[best]));
    assert!(entropy(&p.insert_axis(ndarray::Axis(0)))[0] <= 6f64.ln());
}

#[test]
fn uniform_policy_with_flat_q_has_zero_gradient() {
    let actor = Actor::new(&mut rng(2), 4, 5, 0.01);
    let obs = random_matrix(&mut rng(3), 7, 3);
    let q = Array2::from_elem((7, 5), 2.5);
    let (_, grads) = actor.policy_loss(&obs, &q, 0.3).unwrap();
    assert!(grads.iter().all(|g| g.iter().all(|&v| v == 0.0)));
}

fn learner(agents: usize, config: LearnerConfig, seed: u64) -> Maac {
    Maac::new(agents, 4, config, &mut rng(seed)).unwrap()
}

fn tiny_config() -> LearnerConfig {
    LearnerConfig {
        hidden_width: 4,
        attention_heads: 2,
        batch_size: 8,
        buffer_capacity: 64,
        ..LearnerConfig::default()
    }
}

fn random_batch(r: &mut rand_chacha::ChaCha8Rng, agents: usize, rows: usize) -> JointBatch {
    let (obs, actions) = random_joint(r, agents, 4, rows);
    let (next_obs, _) = random_joint(r, agents, 4, rows);
    JointBatch {
        obs,
        actions,
        rewards: random_targets(r, agents, rows),
        next_obs,
    }
}

#[test]
fn zero_discount_and_temperature_targets_are_rewards() {
    let mut l = learner(
        3,
        LearnerConfig {
            discount: 0.0,
            entropy_temperature: 0.0,
            ..tiny_config()
        },
        1,
    );
    l.reward_scale = 1.0;
    let mut r = rng(2);
    let batch = random_batch(&mut r, 3, 8);
    let y = l.critic_targets(&batch, &mut r).unwrap();
    assert_eq!(y, batch.rewards);
}

#[test]
fn critic_loss_is_nonnegative_and_zero_when_fit() {
    let mut r = rng(6);
    let critic = small_critic(&mut r, 3, 4, 4, 2, AttentionMode::Learned);
    let (obs, acts) = random_joint(&mut r, 3, 4, 10);
    let targets = random_targets(&mut r, 3, 10);
    assert!(critic_loss(&critic, &obs, &acts, &targets).unwrap().0 >= 0.0);

    let pass = critic.forward(&obs, &acts).unwrap();
    let fitted: Vec<Array1<f64>> = (0..3)
        .map(|i| Array1::from_shape_fn(10, |b| pass.q[i][[b, acts[i][b]]]))
        .collect();
    let (loss, grads) = critic_loss(&critic, &obs, &acts, &fitted).unwrap();
    assert_eq!(loss, 0.0);
    assert!(grads.iter().all(|g| g.iter().all(|&v| v == 0.0)));

    // Only agent 1 off target: other agents' output heads get no gradient.
    let mut one = fitted.clone();
    one[1] = &one[1] + 1.0;
    let (_, grads) = critic_loss(&critic, &obs, &acts, &one).unwrap();
    for agent in [0, 2] {
        for t in &grads[agent * 8 + 4..agent * 8 + 8] {
            assert!(t.iter().all(|&v| v == 0.0));
        }
    }
    let shared = &grads[grads.len() - 3..];
    assert!(shared.iter().any(|g| g.iter().any(|&v| v != 0.0)));
}

#[test]
fn uniform_mode_never_moves_query_and_key() {
    let mut l = learner(
        3,
        LearnerConfig {
            attention: AttentionMode::Uniform,
            ..tiny_config()
        },
        7,
    );
    let (wq, wk) = (l.critic.w_query.clone(), l.critic.w_key.clone());
    let wv = l.critic.w_value.clone();
    let mut r = rng(8);
    for _ in 0..5 {
        let batch = random_batch(&mut r, 3, 8);
        l.critic_update(&batch, &mut r).unwrap();
    }
    assert_eq!(l.critic.w_query, wq);
    assert_eq!(l.critic.w_key, wk);
    assert_ne!(l.critic.w_value, wv);
}

#[test]
fn target_networks_track_online_networks() {
    let mut l = learner(2, tiny_config(), 3);
    assert_eq!(l.target_critic, l.critic);
    let mut r = rng(4);
    let batch = random_batch(&mut r, 2, 8);
    l.critic_update(&batch, &mut r).unwrap();
    l.actor_update(&batch, &mut r).unwrap();
    let old = l.target_critic.flat();
    l.update_targets();
    let tau = l.config.target_tau;
    for ((t, o), n) in old.iter().zip(l.critic.flat()).zip(l.target_critic.flat()) {
        assert!((n - (tau * o + (1.0 - tau) * t)).abs() < 1e-15);
    }
    l.hard_sync_targets();
    assert_eq!(l.target_critic, l.critic);
    assert_eq!(l.target_actors, l.actors);
}

#[test]
fn sgd_updates_descend_critic_loss() {
    let mut l = learner(
        2,
        LearnerConfig {
            optimizer: OptimizerKind::Sgd,
            discount: 0.0,
            critic_learning_rate: 0.01,
            ..tiny_config()
        },
        5,
    );
    l.reward_scale = 1.0;
    let mut r = rng(9);
    let batch = random_batch(&mut r, 2, 8);
    let targets = l.critic_targets(&batch, &mut r).unwrap();
    let before = critic_loss(&l.critic, &batch.obs, &batch.actions, &targets).unwrap().0;
    for _ in 0..20 {
        l.critic_update(&batch, &mut r).unwrap();
    }
    let after = critic_loss(&l.critic, &batch.obs, &batch.actions, &targets).unwrap().0;
    assert!(after < before);
}

#[test]
fn divergence_is_reported() {
    let mut l = learner(2, tiny_config(), 5);
    l.critic.w_value[[0, 0]] = f64::NAN;
    let mut r = rng(9);
    let batch = random_batch(&mut r, 2, 8);
    assert!(matches!(
        l.critic_update(&batch, &mut r),
        Err(malora_core::Error::Diverged(_))
    ));
    l.actors[0].net.layers[0].bias[[0, 0]] = f64::INFINITY;
    assert!(l.actors[0].probabilities(&batch.obs[0]).is_err());
}

fn run_config() -> (LearnerConfig, TrainConfig) {
    (
        LearnerConfig {
            hidden_width: 8,
            attention_heads: 2,
            batch_size: 16,
            buffer_capacity: 500,
            update_interval: 5,
            ..LearnerConfig::default()
        },
        TrainConfig {
            total_steps: 300,
            eval_interval: 100,
        },
    )
}

#[test]
fn seeded_training_is_reproducible() {
    let model = network(4, 31);
    let (lc, tc) = run_config();
    let a = Trainer::new(model.clone(), EnvConfig::default(), lc.clone(), tc.clone(), 9).unwrap().run(None).unwrap();
    let b = Trainer::new(model, EnvConfig::default(), lc, tc, 9).unwrap().run(None).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.log.evals.len(), 3);
    assert_eq!(a.log.episodes.len(), 12);
}

#[test]
fn resumed_training_continues_identically() {
    let model = network(4, 32);
    let (lc, tc) = run_config();
    let full = Trainer::new(model.clone(), EnvConfig::default(), lc.clone(), tc.clone(), 3).unwrap();
    let mut full = full;
    let full_out = full.run(None).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ckpt.json");
    let mut first = Trainer::new(model.clone(), EnvConfig::default(), lc, tc, 3).unwrap();
    // Stop mid-episode so the accumulator and env state must round-trip.
    first.run_until(137, None).unwrap();
    first.save(&path).unwrap();
    drop(first);
    let mut resumed = Trainer::load(model, &path).unwrap();
    assert_eq!(resumed.step_count(), 137);
    let resumed_out = resumed.run(None).unwrap();
    assert_eq!(resumed_out, full_out);
    assert_eq!(resumed.checkpoint(), full.checkpoint());
}

#[test]
fn checkpoint_for_another_network_is_rejected() {
    let (lc, tc) = run_config();
    let t = Trainer::new(network(4, 1), EnvConfig::default(), lc, tc, 3).unwrap();
    let state = t.checkpoint().clone();
    assert!(Trainer::from_checkpoint(network(5, 1), state).is_err());
}

#[test]
fn policy_snapshot_replays_final_evaluation() {
    let model = network(4, 33);
    let (lc, tc) = run_config();
    let mut t = Trainer::new(model.clone(), EnvConfig::default(), lc, tc, 5).unwrap();
    let out = t.run(None).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("policy.json");
    t.policy().save(&path).unwrap();
    let snap = malora_core::maac::PolicySnapshot::load(&path).unwrap();
    assert_eq!(snap.evaluate(model).unwrap(), out.final_eval);
}
