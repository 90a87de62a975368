//! Hand-coded SAC losses (entropy weight 1, min over two critics, per-critic
//! TD error against the stop-gradiented target), written directly against
//! the tensor tape with no graph machinery involved.
//!
//! This is the reference the graph interpreter is checked against: same
//! batch, same networks, and the same per-sample noise streams must yield
//! identical losses, gradients, and therefore training trajectories.

use crate::exec::{
    sample_noise, warm_start_noise_keys, ExecError, LossGradients, LossValues, NetworkBindings,
    NoiseKey, TransitionBatch,
};
use crate::tensor::nn::{
    dist_sample_taped, logprob_of_sample_taped, mlp_forward_taped, register_mlp, register_policy,
    MlpIds,
};
use crate::tensor::tape::{Tape, TapeOp, ValId};
use crate::tensor::Tensor;
use crate::trainer::LossBackend;

/// Hand-coded SAC loss backend.
pub struct SacLossBackend {
    key_t: NoiseKey,
    key_t1: NoiseKey,
}

impl SacLossBackend {
    pub fn new() -> Self {
        let (key_t, key_t1) = warm_start_noise_keys();
        SacLossBackend { key_t, key_t1 }
    }

    /// Loss values only.
    pub fn losses(
        &self,
        batch: &TransitionBatch,
        nets: &NetworkBindings,
        noise_seed: u64,
    ) -> Result<LossValues, ExecError> {
        Ok(self.compute_impl(batch, nets, noise_seed, false)?.values)
    }

    fn compute_impl(
        &self,
        batch: &TransitionBatch,
        nets: &NetworkBindings,
        noise_seed: u64,
        with_grads: bool,
    ) -> Result<LossGradients, ExecError> {
        let rows = batch.batch_size();
        let action_dim = batch.actions.shape()[1];

        // Pass A: policy loss and critic 1's loss.
        let mut tape = Tape::new();
        let policy_ids = register_policy(&mut tape, &nets.policy, true);
        let c1 = register_mlp(&mut tape, &nets.critic1, true);
        let c2 = register_mlp(&mut tape, &nets.critic2, true);
        let t1 = register_mlp(&mut tape, &nets.target_critic1, false);
        let t2 = register_mlp(&mut tape, &nets.target_critic2, false);
        let states = tape.leaf(batch.states.clone(), false);
        let next_states = tape.leaf(batch.next_states.clone(), false);
        let actions = tape.leaf(batch.actions.clone(), false);
        let rewards = tape.leaf(batch.rewards.clone(), false);
        let discount = tape.leaf(batch.discount_vector(), false);

        // log pi(a~|s) - min(Q1, Q2)(s, a~), averaged.
        let dist_t = crate::tensor::nn::policy_dist_taped(&mut tape, &policy_ids, states)?;
        let noise_t = tape.leaf(sample_noise(noise_seed, self.key_t, rows, action_dim), false);
        let sample_t = dist_sample_taped(&mut tape, &dist_t, noise_t)?;
        let logp_t = logprob_of_sample_taped(&mut tape, &dist_t, &sample_t)?;
        let q1_pi = critic_apply(&mut tape, &c1, states, sample_t.action)?;
        let q2_pi = critic_apply(&mut tape, &c2, states, sample_t.action)?;
        let min_q = tape.apply(TapeOp::MinElem, &[q1_pi, q2_pi])?;
        let pol_diff = tape.apply(TapeOp::Sub, &[logp_t, min_q])?;
        let policy_loss = tape.apply(TapeOp::MeanAll, &[pol_diff])?;

        // (sg(r + g*(min(Qt1, Qt2)(s', a~') - log pi')) - Q1(s, a))^2, averaged.
        let dist_t1 = crate::tensor::nn::policy_dist_taped(&mut tape, &policy_ids, next_states)?;
        let noise_t1 = tape.leaf(sample_noise(noise_seed, self.key_t1, rows, action_dim), false);
        let sample_t1 = dist_sample_taped(&mut tape, &dist_t1, noise_t1)?;
        let logp_t1 = logprob_of_sample_taped(&mut tape, &dist_t1, &sample_t1)?;
        let qt1 = critic_apply(&mut tape, &t1, next_states, sample_t1.action)?;
        let qt2 = critic_apply(&mut tape, &t2, next_states, sample_t1.action)?;
        let min_qt = tape.apply(TapeOp::MinElem, &[qt1, qt2])?;
        let ent = tape.apply(TapeOp::Sub, &[min_qt, logp_t1])?;
        let disc = tape.apply(TapeOp::Mul, &[discount, ent])?;
        let target = tape.apply(TapeOp::Add, &[rewards, disc])?;
        let target_sg = tape.apply(TapeOp::StopGradient, &[target])?;
        let q_online = critic_apply(&mut tape, &c1, states, actions)?;
        let td_sq = tape.apply(TapeOp::SquaredDiff, &[target_sg, q_online])?;
        let critic1_loss = tape.apply(TapeOp::MeanAll, &[td_sq])?;

        // Pass B: critic 2's loss on a fresh tape with swapped roles,
        // mirroring the interpreter's second evaluation.
        let mut tape_b = Tape::new();
        let policy_b = register_policy(&mut tape_b, &nets.policy, true);
        let _c1b = register_mlp(&mut tape_b, &nets.critic1, true);
        let c2b = register_mlp(&mut tape_b, &nets.critic2, true);
        let t1b = register_mlp(&mut tape_b, &nets.target_critic1, false);
        let t2b = register_mlp(&mut tape_b, &nets.target_critic2, false);
        let states_b = tape_b.leaf(batch.states.clone(), false);
        let next_states_b = tape_b.leaf(batch.next_states.clone(), false);
        let actions_b = tape_b.leaf(batch.actions.clone(), false);
        let rewards_b = tape_b.leaf(batch.rewards.clone(), false);
        let discount_b = tape_b.leaf(batch.discount_vector(), false);

        let dist_b = crate::tensor::nn::policy_dist_taped(&mut tape_b, &policy_b, next_states_b)?;
        let noise_b = tape_b.leaf(sample_noise(noise_seed, self.key_t1, rows, action_dim), false);
        let sample_b = dist_sample_taped(&mut tape_b, &dist_b, noise_b)?;
        let logp_b = logprob_of_sample_taped(&mut tape_b, &dist_b, &sample_b)?;
        // Role swap: the "first" target listed is critic 2's.
        let qt_first = critic_apply(&mut tape_b, &t2b, next_states_b, sample_b.action)?;
        let qt_second = critic_apply(&mut tape_b, &t1b, next_states_b, sample_b.action)?;
        let min_qt_b = tape_b.apply(TapeOp::MinElem, &[qt_first, qt_second])?;
        let ent_b = tape_b.apply(TapeOp::Sub, &[min_qt_b, logp_b])?;
        let disc_b = tape_b.apply(TapeOp::Mul, &[discount_b, ent_b])?;
        let target_b = tape_b.apply(TapeOp::Add, &[rewards_b, disc_b])?;
        let target_sg_b = tape_b.apply(TapeOp::StopGradient, &[target_b])?;
        let q_online_b = critic_apply(&mut tape_b, &c2b, states_b, actions_b)?;
        let td_sq_b = tape_b.apply(TapeOp::SquaredDiff, &[target_sg_b, q_online_b])?;
        let critic2_loss = tape_b.apply(TapeOp::MeanAll, &[td_sq_b])?;

        let values = LossValues {
            policy_loss: tape.value(policy_loss).item(),
            critic_losses: [
                tape.value(critic1_loss).item(),
                tape_b.value(critic2_loss).item(),
            ],
        };
        if !with_grads {
            return Ok(LossGradients {
                values,
                policy: vec![],
                critics: [vec![], vec![]],
            });
        }

        let pol_grads = tape.backward(policy_loss)?;
        let policy = collect(&tape, &pol_grads, &policy_ids.trunk);
        let c1_grads = tape.backward(critic1_loss)?;
        let critic1 = collect(&tape, &c1_grads, &c1);
        let c2_grads = tape_b.backward(critic2_loss)?;
        let critic2 = collect(&tape_b, &c2_grads, &c2b);
        Ok(LossGradients {
            values,
            policy,
            critics: [critic1, critic2],
        })
    }
}

impl Default for SacLossBackend {
    fn default() -> Self {
        SacLossBackend::new()
    }
}

impl LossBackend for SacLossBackend {
    fn compute(
        &self,
        batch: &TransitionBatch,
        nets: &NetworkBindings,
        noise_seed: u64,
    ) -> Result<LossGradients, ExecError> {
        self.compute_impl(batch, nets, noise_seed, true)
    }
}

/// Q(s, a): concatenate, run the critic, squeeze the single column.
fn critic_apply(
    tape: &mut Tape,
    critic: &MlpIds,
    states: ValId,
    actions: ValId,
) -> Result<ValId, ExecError> {
    let sa = tape.apply(TapeOp::ConcatLast, &[states, actions])?;
    let q = mlp_forward_taped(tape, critic, sa)?;
    Ok(tape.apply(TapeOp::SumLast, &[q])?)
}

fn collect(
    tape: &Tape,
    grads: &crate::tensor::tape::Gradients,
    ids: &MlpIds,
) -> Vec<Tensor> {
    let mut out = Vec::with_capacity(ids.layers.len() * 2);
    for (w, b) in &ids.layers {
        out.push(grads.get_or_zeros(*w, tape.value(*w).shape()));
        out.push(grads.get_or_zeros(*b, tape.value(*b).shape()));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exec::{init_networks, loss_gradients, synthetic_batch};
    use crate::graph::{warm_start_sac, EnvDims};

    #[test]
    fn oracle_matches_interpreted_warm_start_bitwise() {
        let dims = EnvDims { state_dim: 3, action_dim: 1 };
        let oracle = SacLossBackend::new();
        let graph = warm_start_sac();
        for seed in 0..5u64 {
            let batch = synthetic_batch(dims, 16, 0.99, 100 + seed);
            let nets = init_networks(dims, &[16, 16], 200 + seed);
            let from_graph = loss_gradients(&graph, &batch, &nets, seed).unwrap();
            let from_oracle = oracle.compute(&batch, &nets, seed).unwrap();
            assert_eq!(from_graph.values.policy_loss, from_oracle.values.policy_loss);
            assert_eq!(from_graph.values.critic_losses, from_oracle.values.critic_losses);
            assert_eq!(from_graph.policy, from_oracle.policy);
            assert_eq!(from_graph.critics, from_oracle.critics);
        }
    }
}
