//! Train an actor-critic agent whose update rule is an arbitrary loss
//! graph: replay buffer, stochastic data collection, graph-driven steepest
//! gradient descent, soft target updates, and deterministic evaluation.
//!
//! Training is a pure function of (backend, config, environment, seed).
//! Any non-finite loss, gradient, or parameter turns the run into a
//! [`TrainFailure`] value; the evolution loop scores it zero and moves on.

use crate::envs::{normalized_return, reset, step, EnvConfig, EnvState};
use crate::exec::{ExecError, LossGradients, NetworkBindings, PreparedGraph, TransitionBatch};
use crate::graph::LossGraph;
use crate::rng::{mix, RngStream};
use crate::tensor::nn::{policy_mean_action, policy_sample_and_logprob, GaussianTanhPolicy};
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};
use std::sync::atomic::{AtomicU64, Ordering};
use thiserror::Error;

/// Global count of gradient updates performed by any trainer in this
/// process. The cache-soundness checks assert it stays flat on cache hits.
static TRAINING_STEPS: AtomicU64 = AtomicU64::new(0);

pub fn training_steps_performed() -> u64 {
    TRAINING_STEPS.load(Ordering::Relaxed)
}

#[derive(Debug, Clone, Error)]
#[error("training failed at update {update}: {reason}")]
pub struct TrainFailure {
    pub update: u64,
    pub reason: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainerConfig {
    pub gamma: f64,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Target smoothing coefficient tau.
    pub tau: f64,
    pub replay_capacity: usize,
    /// Minimum stored samples before learning starts.
    pub min_replay: usize,
    /// Gradient updates per environment step once learning has started.
    pub updates_per_step: usize,
    /// Stored rewards are multiplied by this; evaluation uses raw rewards.
    pub reward_scale: f64,
    /// Training episodes to collect.
    pub episodes: usize,
    /// Hidden widths for policy and critics.
    pub hidden: Vec<usize>,
    /// Fixed at 1 (single-step bootstrapping).
    pub n_step: usize,
}

impl TrainerConfig {
    /// Desk-scale defaults: small networks, short runs.
    pub fn desk() -> Self {
        TrainerConfig {
            gamma: 0.99,
            batch_size: 32,
            learning_rate: 3e-4,
            tau: 0.005,
            replay_capacity: 20_000,
            min_replay: 500,
            updates_per_step: 1,
            reward_scale: 5.0,
            episodes: 20,
            hidden: vec![32, 32],
            n_step: 1,
        }
    }

    /// The published full-scale setup (256-wide networks, 1M replay).
    pub fn paper() -> Self {
        TrainerConfig {
            gamma: 0.99,
            batch_size: 64,
            learning_rate: 3e-4,
            tau: 0.005,
            replay_capacity: 1_000_000,
            min_replay: 10_000,
            updates_per_step: 1,
            reward_scale: 5.0,
            episodes: 100,
            hidden: vec![256, 256],
            n_step: 1,
        }
    }

    pub fn check(&self) -> Result<(), String> {
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(format!("gamma {} outside (0, 1]", self.gamma));
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return Err(format!("tau {} outside (0, 1]", self.tau));
        }
        if self.batch_size == 0
            || self.replay_capacity == 0
            || self.episodes == 0
            || self.hidden.is_empty()
        {
            return Err("counts must be positive".into());
        }
        if self.n_step != 1 {
            return Err("n_step is fixed at 1".into());
        }
        Ok(())
    }
}

struct Transition {
    state: Vec<f64>,
    action: Vec<f64>,
    reward: f64,
    next_state: Vec<f64>,
    done: bool,
}

/// Ring buffer with strict FIFO eviction and uniform sampling.
pub struct ReplayBuffer {
    items: Vec<Transition>,
    capacity: usize,
    write: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        ReplayBuffer {
            items: Vec::with_capacity(capacity.min(4096)),
            capacity,
            write: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    fn push(&mut self, t: Transition) {
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[self.write] = t;
        }
        self.write = (self.write + 1) % self.capacity;
    }

    fn sample(&self, n: usize, gamma: f64, rng: &mut RngStream) -> TransitionBatch {
        let state_dim = self.items[0].state.len();
        let action_dim = self.items[0].action.len();
        let mut states = Vec::with_capacity(n * state_dim);
        let mut actions = Vec::with_capacity(n * action_dim);
        let mut rewards = Vec::with_capacity(n);
        let mut next_states = Vec::with_capacity(n * state_dim);
        let mut terminals = Vec::with_capacity(n);
        for _ in 0..n {
            let t = &self.items[rng.below(self.items.len())];
            states.extend_from_slice(&t.state);
            actions.extend_from_slice(&t.action);
            rewards.push(t.reward);
            next_states.extend_from_slice(&t.next_state);
            terminals.push(t.done);
        }
        TransitionBatch {
            states: Tensor::new(vec![n, state_dim], states).unwrap(),
            actions: Tensor::new(vec![n, action_dim], actions).unwrap(),
            rewards: Tensor::new(vec![n], rewards).unwrap(),
            next_states: Tensor::new(vec![n, state_dim], next_states).unwrap(),
            gamma,
            terminals,
        }
    }
}

/// Per-episode training diagnostics.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Diagnostics {
    pub episode_returns: Vec<f64>,
    /// Monte-Carlo estimate of policy entropy on visited states.
    pub policy_entropy: Vec<f64>,
    /// Mean L2 norm of the actor-loss gradient over the episode's updates.
    pub actor_grad_norm: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedPolicy {
    pub policy: GaussianTanhPolicy,
    pub diagnostics: Diagnostics,
}

/// Computes losses and parameter gradients for one batch. The graph
/// interpreter is the production implementation; the hand-coded SAC
/// baseline provides an independent one.
pub trait LossBackend {
    fn compute(
        &self,
        batch: &TransitionBatch,
        nets: &NetworkBindings,
        noise_seed: u64,
    ) -> Result<LossGradients, ExecError>;
}

pub struct GraphBackend {
    prepared: PreparedGraph,
}

impl GraphBackend {
    pub fn new(graph: &LossGraph) -> Result<Self, ExecError> {
        Ok(GraphBackend {
            prepared: PreparedGraph::new(graph)?,
        })
    }
}

impl LossBackend for GraphBackend {
    fn compute(
        &self,
        batch: &TransitionBatch,
        nets: &NetworkBindings,
        noise_seed: u64,
    ) -> Result<LossGradients, ExecError> {
        self.prepared.gradients(batch, nets, noise_seed)
    }
}

/// Train with the graph as the update rule.
pub fn train(
    graph: &LossGraph,
    cfg: &TrainerConfig,
    env: &EnvConfig,
    seed: u64,
) -> Result<TrainedPolicy, TrainFailure> {
    let backend = GraphBackend::new(graph).map_err(|e| TrainFailure {
        update: 0,
        reason: format!("graph rejected: {e}"),
    })?;
    train_with_backend(&backend, cfg, env, seed)
}

/// Train with an arbitrary loss backend. Deterministic given all inputs.
pub fn train_with_backend(
    backend: &dyn LossBackend,
    cfg: &TrainerConfig,
    env: &EnvConfig,
    seed: u64,
) -> Result<TrainedPolicy, TrainFailure> {
    let mut nets = crate::exec::init_networks(env.dims(), &cfg.hidden, mix(seed, &["init"], &[]));
    let mut buffer = ReplayBuffer::new(cfg.replay_capacity);
    let mut replay_rng = RngStream::derive(seed, &["replay"], &[]);
    let mut diagnostics = Diagnostics::default();
    let mut update_counter: u64 = 0;
    let action_dim = env.action_dim();

    for episode in 0..cfg.episodes {
        let mut state = reset(env, mix(seed, &["episode"], &[episode as u64]));
        let mut act_rng = RngStream::derive(seed, &["act"], &[episode as u64]);
        let mut episode_return = 0.0;
        let mut grad_norms: Vec<f64> = Vec::new();
        let mut visited: Vec<Vec<f64>> = Vec::new();
        loop {
            let obs = state.observation();
            visited.push(obs.clone());
            let states_t = Tensor::new(vec![1, obs.len()], obs).unwrap();
            let noise = act_rng.normal_tensor(&[1, action_dim]);
            let (action_t, _) = policy_sample_and_logprob(&nets.policy, &states_t, &noise)
                .map_err(|e| TrainFailure {
                    update: update_counter,
                    reason: format!("action sampling failed: {e}"),
                })?;
            let action: Vec<f64> = action_t.data().to_vec();
            let (next_state, reward, done) = step(&state, &action, env);
            episode_return += reward;
            buffer.push(Transition {
                state: state.observation(),
                action,
                reward: reward * cfg.reward_scale,
                next_state: next_state.observation(),
                done,
            });
            state = next_state;

            if buffer.len() >= cfg.min_replay.max(cfg.batch_size) {
                for _ in 0..cfg.updates_per_step {
                    let batch = buffer.sample(cfg.batch_size, cfg.gamma, &mut replay_rng);
                    let noise_seed = mix(seed, &["update-noise"], &[update_counter]);
                    let grads = backend.compute(&batch, &nets, noise_seed).map_err(|e| {
                        TrainFailure {
                            update: update_counter,
                            reason: e.to_string(),
                        }
                    })?;
                    if !grads.all_finite() {
                        return Err(TrainFailure {
                            update: update_counter,
                            reason: "non-finite loss or gradient".into(),
                        });
                    }
                    apply_sgd(&mut nets, &grads, cfg.learning_rate);
                    if !(nets.policy.trunk.all_finite()
                        && nets.critic1.all_finite()
                        && nets.critic2.all_finite())
                    {
                        return Err(TrainFailure {
                            update: update_counter,
                            reason: "non-finite parameters".into(),
                        });
                    }
                    soft_update(&mut nets.target_critic1, &nets.critic1, cfg.tau);
                    soft_update(&mut nets.target_critic2, &nets.critic2, cfg.tau);
                    grad_norms.push(l2_norm(&grads.policy));
                    update_counter += 1;
                    TRAINING_STEPS.fetch_add(1, Ordering::Relaxed);
                }
            }
            if done {
                break;
            }
        }
        diagnostics.episode_returns.push(episode_return);
        diagnostics
            .policy_entropy
            .push(entropy_estimate(&nets.policy, &visited, seed, episode as u64));
        let mean_norm = if grad_norms.is_empty() {
            0.0
        } else {
            grad_norms.iter().sum::<f64>() / grad_norms.len() as f64
        };
        diagnostics.actor_grad_norm.push(mean_norm);
    }
    Ok(TrainedPolicy {
        policy: nets.policy,
        diagnostics,
    })
}

/// Plain steepest gradient descent on policy and online critics.
fn apply_sgd(nets: &mut NetworkBindings, grads: &LossGradients, lr: f64) {
    let update = |params: Vec<&mut Tensor>, grads: &[Tensor]| {
        for (p, g) in params.into_iter().zip(grads) {
            for (pv, gv) in p.data_mut().iter_mut().zip(g.data()) {
                *pv -= lr * gv;
            }
        }
    };
    update(nets.policy.trunk.params_mut(), &grads.policy);
    update(nets.critic1.params_mut(), &grads.critics[0]);
    update(nets.critic2.params_mut(), &grads.critics[1]);
}

/// theta_target <- (1 - tau) * theta_target + tau * theta.
fn soft_update(target: &mut crate::tensor::nn::MlpParams, online: &crate::tensor::nn::MlpParams, tau: f64) {
    for (t, o) in target.params_mut().into_iter().zip(online.params()) {
        for (tv, ov) in t.data_mut().iter_mut().zip(o.data()) {
            *tv = (1.0 - tau) * *tv + tau * ov;
        }
    }
}

fn l2_norm(tensors: &[Tensor]) -> f64 {
    tensors.iter().map(Tensor::sq_norm).sum::<f64>().sqrt()
}

/// Monte-Carlo entropy estimate: mean of -log pi over fresh samples at up
/// to 64 of the episode's visited states.
fn entropy_estimate(
    policy: &GaussianTanhPolicy,
    visited: &[Vec<f64>],
    seed: u64,
    episode: u64,
) -> f64 {
    if visited.is_empty() {
        return 0.0;
    }
    let take = visited.len().min(64);
    let stride = visited.len() / take;
    let rows: Vec<&Vec<f64>> = visited.iter().step_by(stride.max(1)).take(take).collect();
    let state_dim = rows[0].len();
    let data: Vec<f64> = rows.iter().flat_map(|r| r.iter().copied()).collect();
    let states = Tensor::new(vec![rows.len(), state_dim], data).unwrap();
    let mut rng = RngStream::derive(seed, &["entropy"], &[episode]);
    let noise = rng.normal_tensor(&[rows.len(), policy.action_dim]);
    match policy_sample_and_logprob(policy, &states, &noise) {
        Ok((_, logp)) => -logp.data().iter().sum::<f64>() / logp.len() as f64,
        Err(_) => f64::NAN,
    }
}

/// Mean normalized return of the deterministic policy over `episodes`
/// evaluation episodes.
pub fn evaluate_policy(
    policy: &GaussianTanhPolicy,
    env: &EnvConfig,
    episodes: usize,
    seed: u64,
) -> f64 {
    let mut total = 0.0;
    for ep in 0..episodes {
        total += rollout_deterministic(policy, env, mix(seed, &["eval-episode"], &[ep as u64]));
    }
    total / episodes.max(1) as f64
}

/// One deterministic episode; returns the normalized return.
pub fn rollout_deterministic(policy: &GaussianTanhPolicy, env: &EnvConfig, seed: u64) -> f64 {
    let mut state = reset(env, seed);
    rollout_from(policy, env, &mut state)
}

/// Deterministic rollout from a given state (used by tests that pin the
/// start). Consumes steps until the episode terminates.
pub fn rollout_from(policy: &GaussianTanhPolicy, env: &EnvConfig, state: &mut EnvState) -> f64 {
    let mut episode_return = 0.0;
    loop {
        let obs = state.observation();
        let states_t = Tensor::new(vec![1, obs.len()], obs).unwrap();
        let action = match policy_mean_action(policy, &states_t) {
            Ok(a) => a.data().to_vec(),
            Err(_) => vec![0.0; env.action_dim()],
        };
        let (next, reward, done) = step(state, &action, env);
        episode_return += reward;
        *state = next;
        if done {
            break;
        }
    }
    normalized_return(episode_return, env)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::EnvConfig;
    use crate::graph::{warm_start_sac, GraphNode, NodeId, NodeKind};

    fn tiny_cfg() -> TrainerConfig {
        TrainerConfig {
            episodes: 2,
            min_replay: 40,
            batch_size: 16,
            hidden: vec![8, 8],
            ..TrainerConfig::desk()
        }
    }

    fn zero_loss_graph() -> crate::graph::LossGraph {
        let mut nodes: Vec<GraphNode> =
            warm_start_sac().nodes.iter().take(10).cloned().collect();
        nodes.push(GraphNode { id: NodeId(10), kind: NodeKind::SquaredDiff, inputs: vec![NodeId(8), NodeId(8)] });
        nodes.push(GraphNode { id: NodeId(11), kind: NodeKind::MeanAll, inputs: vec![NodeId(10)] });
        nodes.push(GraphNode { id: NodeId(12), kind: NodeKind::PolicyLoss, inputs: vec![NodeId(11)] });
        nodes.push(GraphNode { id: NodeId(13), kind: NodeKind::CriticLoss, inputs: vec![NodeId(11)] });
        crate::graph::LossGraph { nodes, max_nodes: 60 }
    }

    #[test]
    fn zero_loss_leaves_parameters_at_init() {
        let env = EnvConfig::pointmass_desk();
        let cfg = tiny_cfg();
        let seed = 3;
        let trained = train(&zero_loss_graph(), &cfg, &env, seed).unwrap();
        let init = crate::exec::init_networks(env.dims(), &cfg.hidden, mix(seed, &["init"], &[]));
        assert_eq!(trained.policy, init.policy);
    }

    #[test]
    fn training_is_bitwise_deterministic() {
        let env = EnvConfig::pointmass_desk();
        let cfg = tiny_cfg();
        let a = train(&warm_start_sac(), &cfg, &env, 11).unwrap();
        let b = train(&warm_start_sac(), &cfg, &env, 11).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.diagnostics.episode_returns.len(), cfg.episodes);
        assert_eq!(a.diagnostics.policy_entropy.len(), cfg.episodes);
    }

    #[test]
    fn tau_extremes_behave() {
        let env = EnvConfig::pointmass_desk();
        let mut cfg = tiny_cfg();
        cfg.episodes = 1;
        // tau = 1: targets equal online critics after every update.
        cfg.tau = 1.0;
        let seed = 5;
        let backend = GraphBackend::new(&warm_start_sac()).unwrap();
        // Reproduce the loop manually for the last state.
        let mut nets = crate::exec::init_networks(env.dims(), &cfg.hidden, 1);
        let batch = crate::exec::synthetic_batch(env.dims(), 8, cfg.gamma, seed);
        let grads = backend.compute(&batch, &nets, 0).unwrap();
        apply_sgd(&mut nets, &grads, cfg.learning_rate);
        soft_update(&mut nets.target_critic1, &nets.critic1, 1.0);
        assert_eq!(nets.target_critic1, nets.critic1);
        // tau -> 0: targets stay at initialization.
        let init = crate::exec::init_networks(env.dims(), &cfg.hidden, 1);
        let mut frozen = init.target_critic2.clone();
        soft_update(&mut frozen, &nets.critic2, 0.0);
        assert_eq!(frozen, init.target_critic2);
    }

    #[test]
    fn evaluation_is_deterministic_and_do_nothing_scores_one_from_origin() {
        let env = EnvConfig::pointmass_desk();
        // A policy with zero weights: mean action 0 everywhere.
        let mut rng = RngStream::from_seed(0);
        let mut policy = GaussianTanhPolicy::init(2, 1, &[8], rng.inner());
        for l in &mut policy.trunk.layers {
            l.weight = Tensor::zeros(l.weight.shape());
            l.bias = Tensor::zeros(l.bias.shape());
        }
        let mut at_origin = EnvState::PointMass { x: 0.0, v: 0.0, step: 0 };
        let score = rollout_from(&policy, &env, &mut at_origin);
        assert_eq!(score, 1.0);
        let a = evaluate_policy(&policy, &env, 3, 7);
        let b = evaluate_policy(&policy, &env, 3, 7);
        assert_eq!(a, b);
        let single = evaluate_policy(&policy, &env, 1, 9);
        let manual = rollout_deterministic(&policy, &env, mix(9, &["eval-episode"], &[0]));
        assert_eq!(single, manual);
    }

    #[test]
    fn replay_buffer_evicts_fifo() {
        let mut buf = ReplayBuffer::new(3);
        for i in 0..5 {
            buf.push(Transition {
                state: vec![i as f64],
                action: vec![0.0],
                reward: i as f64,
                next_state: vec![0.0],
                done: false,
            });
        }
        assert_eq!(buf.len(), 3);
        let stored: Vec<f64> = buf.items.iter().map(|t| t.reward).collect();
        // Oldest (0, 1) evicted; slot order reflects the ring.
        assert_eq!(stored, vec![3.0, 4.0, 2.0]);
    }
}
