//! Interpret a validated loss graph on a transition batch with bound
//! networks, producing scalar policy/critic losses and, via the tape,
//! gradients with respect to network parameters.
//!
//! The single `CriticLoss` output is written from critic 1's perspective and
//! evaluated twice: once as-is, once with the critic and target-critic roles
//! swapped, which realizes the per-critic loss L_{Q_i}.
//!
//! Distribution nodes draw reparameterized noise keyed by the node's
//! structural fingerprint, so every consumer of one sample node sees the
//! same action, interpretation is independent of raw node ids, and dead
//! nodes cannot perturb live values.

use crate::graph::{EnvDims, GraphError, LossGraph, NodeId, NodeKind};
use crate::rng::RngStream;
use crate::tensor::nn::{
    dist_sample_taped, logprob_foreign_taped, logprob_of_sample_taped, mlp_forward_taped,
    policy_dist_taped, register_mlp, register_policy, DistIds, GaussianTanhPolicy, MlpIds,
    MlpParams, PolicyIds, SampleIds,
};
use crate::tensor::tape::{Tape, TapeOp, ValId};
use crate::tensor::{summarize, Tensor, TensorError};
use std::collections::{BTreeSet, HashMap};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ExecError {
    #[error("node {node} ({kind}) produced a non-finite value: {summary}")]
    Numeric {
        node: NodeId,
        kind: &'static str,
        summary: String,
    },
    #[error("invalid graph: {0}")]
    Invalid(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// One uniform batch of transitions. `gamma` is the scalar discount; it is
/// zeroed per row for terminal transitions when bound to the graph's
/// `Discount` input.
#[derive(Debug, Clone)]
pub struct TransitionBatch {
    pub states: Tensor,
    pub actions: Tensor,
    pub rewards: Tensor,
    pub next_states: Tensor,
    pub gamma: f64,
    pub terminals: Vec<bool>,
}

impl TransitionBatch {
    pub fn batch_size(&self) -> usize {
        self.states.shape()[0]
    }

    pub fn dims(&self) -> EnvDims {
        EnvDims {
            state_dim: self.states.shape()[1],
            action_dim: self.actions.shape()[1],
        }
    }

    /// Per-row discount `gamma * (1 - terminal)`, the tensor bound to the
    /// `Discount` input node.
    pub fn discount_vector(&self) -> Tensor {
        let data = self
            .terminals
            .iter()
            .map(|&t| if t { 0.0 } else { self.gamma })
            .collect();
        Tensor::new(vec![self.batch_size()], data).unwrap()
    }

    pub fn all_finite(&self) -> bool {
        self.states.all_finite()
            && self.actions.all_finite()
            && self.rewards.all_finite()
            && self.next_states.all_finite()
            && self.gamma.is_finite()
    }
}

/// The networks a graph's input nodes refer to.
#[derive(Debug, Clone)]
pub struct NetworkBindings {
    pub policy: GaussianTanhPolicy,
    pub critic1: MlpParams,
    pub critic2: MlpParams,
    pub target_critic1: MlpParams,
    pub target_critic2: MlpParams,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossValues {
    pub policy_loss: f64,
    pub critic_losses: [f64; 2],
}

impl LossValues {
    pub fn all_finite(&self) -> bool {
        self.policy_loss.is_finite() && self.critic_losses.iter().all(|v| v.is_finite())
    }
}

/// Gradients of the policy loss w.r.t. policy parameters and of each
/// critic's loss w.r.t. that critic's parameters, in canonical
/// `w0, b0, w1, b1, ...` order.
#[derive(Debug, Clone)]
pub struct LossGradients {
    pub values: LossValues,
    pub policy: Vec<Tensor>,
    pub critics: [Vec<Tensor>; 2],
}

impl LossGradients {
    pub fn all_finite(&self) -> bool {
        self.values.all_finite()
            && self.policy.iter().all(Tensor::all_finite)
            && self.critics.iter().flatten().all(Tensor::all_finite)
    }
}

/// 128-bit structural key of a sample node; drives its noise stream.
pub type NoiseKey = [u8; 16];

/// Standard-normal reparameterization noise for one sample node.
pub fn sample_noise(noise_seed: u64, key: NoiseKey, rows: usize, cols: usize) -> Tensor {
    let mut rng = RngStream::derive_bytes(noise_seed, "sample-noise", &key, &[]);
    rng.normal_tensor(&[rows, cols])
}

/// Noise keys of the warm-start graph's two sample nodes (ã_t, ã_{t+1});
/// shared with the hand-coded SAC baseline.
pub fn warm_start_noise_keys() -> (NoiseKey, NoiseKey) {
    let graph = crate::graph::warm_start_sac();
    let (a_t, a_t1) = crate::graph::presets::warm_start_sample_nodes();
    let fps = graph.fingerprints().expect("warm start is acyclic");
    (fps[&a_t], fps[&a_t1])
}

/// Which concrete networks the critic-role input kinds resolve to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum RoleBinding {
    /// CriticNet1 -> critic 1: the policy-loss pass and L_{Q_1}.
    Straight,
    /// CriticNet1 -> critic 2: the L_{Q_2} pass.
    Swapped,
}

impl RoleBinding {
    /// Index into the `[critic1, critic2, target1, target2]` registry.
    fn resolve(self, kind: NodeKind) -> usize {
        let straight = match kind {
            NodeKind::CriticNet1 => 0,
            NodeKind::CriticNet2 => 1,
            NodeKind::TargetCriticNet1 => 2,
            NodeKind::TargetCriticNet2 => 3,
            _ => unreachable!("not a critic input"),
        };
        match self {
            RoleBinding::Straight => straight,
            RoleBinding::Swapped => match straight {
                0 => 1,
                1 => 0,
                2 => 3,
                _ => 2,
            },
        }
    }
}

/// A graph readied for repeated evaluation: topological order, live sets,
/// and per-sample-node noise keys are computed once.
pub struct PreparedGraph {
    graph: LossGraph,
    index: HashMap<NodeId, usize>,
    topo: Vec<NodeId>,
    policy_out: NodeId,
    critic_out: NodeId,
    live_both: BTreeSet<NodeId>,
    live_critic: BTreeSet<NodeId>,
    noise_keys: HashMap<NodeId, NoiseKey>,
}

impl PreparedGraph {
    pub fn new(graph: &LossGraph) -> Result<Self, ExecError> {
        let index = graph
            .index()
            .ok_or_else(|| ExecError::Invalid("duplicate node ids".into()))?;
        let topo = graph.topological_order()?;
        let (policy_out, critic_out) = graph.output_ids();
        let (policy_out, critic_out) = match (policy_out, critic_out) {
            (Some(p), Some(c)) => (p, c),
            _ => return Err(ExecError::Invalid("missing loss output".into())),
        };
        let live_both = graph.live_set()?;
        let live_critic = ancestors_of(graph, &index, critic_out);
        let fps = graph.fingerprints()?;
        let noise_keys = graph
            .nodes
            .iter()
            .filter(|n| n.kind == NodeKind::DistSample)
            .map(|n| (n.id, fps[&n.id]))
            .collect();
        Ok(PreparedGraph {
            graph: graph.clone(),
            index,
            topo,
            policy_out,
            critic_out,
            live_both,
            live_critic,
            noise_keys,
        })
    }

    pub fn graph(&self) -> &LossGraph {
        &self.graph
    }

    /// Interpret the graph; deterministic given all arguments.
    pub fn losses(
        &self,
        batch: &TransitionBatch,
        nets: &NetworkBindings,
        noise_seed: u64,
    ) -> Result<LossValues, ExecError> {
        let pass_a = self.run_pass(batch, nets, noise_seed, RoleBinding::Straight, false)?;
        let pass_b = self.run_pass(batch, nets, noise_seed, RoleBinding::Swapped, true)?;
        Ok(LossValues {
            policy_loss: pass_a.loss_value(pass_a.policy_out.unwrap()),
            critic_losses: [
                pass_a.loss_value(pass_a.critic_out.unwrap()),
                pass_b.loss_value(pass_b.critic_out.unwrap()),
            ],
        })
    }

    /// Losses plus gradients w.r.t. the respective network parameters.
    /// Target networks and anything behind a `StopGradient` get no flow.
    pub fn gradients(
        &self,
        batch: &TransitionBatch,
        nets: &NetworkBindings,
        noise_seed: u64,
    ) -> Result<LossGradients, ExecError> {
        let pass_a = self.run_pass(batch, nets, noise_seed, RoleBinding::Straight, false)?;
        let pass_b = self.run_pass(batch, nets, noise_seed, RoleBinding::Swapped, true)?;

        let policy_grads = pass_a.tape.backward(pass_a.policy_out.unwrap())?;
        let policy = collect_mlp_grads(&pass_a.tape, &policy_grads, &pass_a.policy_ids.trunk);

        let c1_grads = pass_a.tape.backward(pass_a.critic_out.unwrap())?;
        let critic1 = collect_mlp_grads(&pass_a.tape, &c1_grads, &pass_a.critic_ids[0]);

        // In the swapped pass, critic 2's parameters sit behind the
        // CriticNet1 role, i.e. registry slot 1 holds them.
        let c2_grads = pass_b.tape.backward(pass_b.critic_out.unwrap())?;
        let critic2 = collect_mlp_grads(&pass_b.tape, &c2_grads, &pass_b.critic_ids[1]);

        let values = LossValues {
            policy_loss: pass_a.loss_value(pass_a.policy_out.unwrap()),
            critic_losses: [
                pass_a.loss_value(pass_a.critic_out.unwrap()),
                pass_b.loss_value(pass_b.critic_out.unwrap()),
            ],
        };
        Ok(LossGradients {
            values,
            policy,
            critics: [critic1, critic2],
        })
    }

    fn run_pass(
        &self,
        batch: &TransitionBatch,
        nets: &NetworkBindings,
        noise_seed: u64,
        binding: RoleBinding,
        critic_only: bool,
    ) -> Result<PassState, ExecError> {
        let live = if critic_only {
            &self.live_critic
        } else {
            &self.live_both
        };
        let mut tape = Tape::new();
        // Fixed registration order keeps leaf ids canonical across passes.
        let policy_ids = register_policy(&mut tape, &nets.policy, true);
        let critic_ids = [
            register_mlp(&mut tape, &nets.critic1, true),
            register_mlp(&mut tape, &nets.critic2, true),
            register_mlp(&mut tape, &nets.target_critic1, false),
            register_mlp(&mut tape, &nets.target_critic2, false),
        ];
        let states = tape.leaf(batch.states.clone(), false);
        let next_states = tape.leaf(batch.next_states.clone(), false);
        let actions = tape.leaf(batch.actions.clone(), false);
        let rewards = tape.leaf(batch.rewards.clone(), false);
        let discount = tape.leaf(batch.discount_vector(), false);

        let batch_rows = batch.batch_size();
        let action_dim = batch.actions.shape()[1];

        let mut slots: HashMap<NodeId, Slot> = HashMap::with_capacity(live.len());
        let mut pass = PassState {
            tape,
            policy_ids,
            critic_ids,
            policy_out: None,
            critic_out: None,
        };

        for &id in &self.topo {
            if !live.contains(&id) {
                continue;
            }
            let node = &self.graph.nodes[self.index[&id]];
            let kind_name = node.kind.name();
            let slot = match node.kind {
                NodeKind::PolicyNet => Slot::Policy,
                NodeKind::CriticNet1
                | NodeKind::CriticNet2
                | NodeKind::TargetCriticNet1
                | NodeKind::TargetCriticNet2 => Slot::Critic(binding.resolve(node.kind)),
                NodeKind::States => Slot::Value(states),
                NodeKind::NextStates => Slot::Value(next_states),
                NodeKind::Actions => Slot::Value(actions),
                NodeKind::Rewards => Slot::Value(rewards),
                NodeKind::Discount => Slot::Value(discount),
                NodeKind::PolicyLoss | NodeKind::CriticLoss => {
                    let v = tensor_slot(&slots, node.inputs[0])?;
                    if !pass.tape.value(v).is_scalar() {
                        return Err(ExecError::Invalid(format!(
                            "loss output {id} received a non-scalar value"
                        )));
                    }
                    if node.kind == NodeKind::PolicyLoss {
                        pass.policy_out = Some(v);
                    } else {
                        pass.critic_out = Some(v);
                    }
                    continue;
                }
                NodeKind::DistFromState => {
                    let state = tensor_slot(&slots, node.inputs[1])?;
                    match slots.get(&node.inputs[0]) {
                        Some(Slot::Policy) => {}
                        _ => {
                            return Err(ExecError::Invalid(format!(
                                "node {id}: DistFromState needs the policy network"
                            )))
                        }
                    }
                    let ids = policy_dist_taped(&mut pass.tape, &pass.policy_ids, state)?;
                    slots.insert(id, Slot::Dist(ids));
                    continue;
                }
                NodeKind::DistSample => {
                    let dist = dist_slot(&slots, node.inputs[0])?;
                    let key = self.noise_keys[&id];
                    let noise = sample_noise(noise_seed, key, batch_rows, action_dim);
                    let noise = pass.tape.leaf(noise, false);
                    let ids = dist_sample_taped(&mut pass.tape, &dist, noise)?;
                    check_finite(&pass.tape, ids.action, id, kind_name)?;
                    slots.insert(
                        id,
                        Slot::Sample {
                            ids,
                            dist_node: node.inputs[0],
                        },
                    );
                    continue;
                }
                NodeKind::DistLogProb => {
                    let dist = dist_slot(&slots, node.inputs[0])?;
                    let out = match slots.get(&node.inputs[1]) {
                        // The distribution's own sample: reuse the saved
                        // pre-tanh value instead of going through atanh.
                        Some(Slot::Sample { ids, dist_node }) if *dist_node == node.inputs[0] => {
                            logprob_of_sample_taped(&mut pass.tape, &dist, ids)?
                        }
                        _ => {
                            let action = tensor_slot(&slots, node.inputs[1])?;
                            logprob_foreign_taped(&mut pass.tape, &dist, action)?
                        }
                    };
                    check_finite(&pass.tape, out, id, kind_name)?;
                    Slot::Value(out)
                }
                NodeKind::CriticValue => {
                    let net = match slots.get(&node.inputs[0]) {
                        Some(Slot::Critic(i)) => pass.critic_ids[*i].clone(),
                        _ => {
                            return Err(ExecError::Invalid(format!(
                                "node {id}: CriticValue needs a critic network"
                            )))
                        }
                    };
                    let s = tensor_slot(&slots, node.inputs[1])?;
                    let a = tensor_slot(&slots, node.inputs[2])?;
                    let sa = pass.tape.apply(TapeOp::ConcatLast, &[s, a])?;
                    let q = mlp_forward_taped(&mut pass.tape, &net, sa)?;
                    // [B, 1] -> [B]; summing the single column is exact.
                    let q = pass.tape.apply(TapeOp::SumLast, &[q])?;
                    check_finite(&pass.tape, q, id, kind_name)?;
                    Slot::Value(q)
                }
                _ => {
                    // Plain tensor primitive.
                    let mut ids = Vec::with_capacity(node.inputs.len());
                    for input in &node.inputs {
                        ids.push(tensor_slot(&slots, *input)?);
                    }
                    let out = apply_primitive_taped(&mut pass.tape, node.kind, &ids)?;
                    check_finite(&pass.tape, out, id, kind_name)?;
                    Slot::Value(out)
                }
            };
            slots.insert(id, slot);
        }
        if pass.critic_out.is_none() {
            return Err(ExecError::Invalid("critic loss was not produced".into()));
        }
        if !critic_only && pass.policy_out.is_none() {
            return Err(ExecError::Invalid("policy loss was not produced".into()));
        }
        let _ = (self.policy_out, self.critic_out);
        Ok(pass)
    }
}

struct PassState {
    tape: Tape,
    policy_ids: PolicyIds,
    critic_ids: [MlpIds; 4],
    policy_out: Option<ValId>,
    critic_out: Option<ValId>,
}

impl PassState {
    fn loss_value(&self, id: ValId) -> f64 {
        self.tape.value(id).item()
    }
}

#[derive(Debug, Clone)]
enum Slot {
    Value(ValId),
    Dist(DistIds),
    Sample { ids: SampleIds, dist_node: NodeId },
    Policy,
    Critic(usize),
}

fn tensor_slot(slots: &HashMap<NodeId, Slot>, id: NodeId) -> Result<ValId, ExecError> {
    match slots.get(&id) {
        Some(Slot::Value(v)) => Ok(*v),
        Some(Slot::Sample { ids, .. }) => Ok(ids.action),
        _ => Err(ExecError::Invalid(format!(
            "node {id} does not carry a tensor value"
        ))),
    }
}

fn dist_slot(slots: &HashMap<NodeId, Slot>, id: NodeId) -> Result<DistIds, ExecError> {
    match slots.get(&id) {
        Some(Slot::Dist(d)) => Ok(*d),
        _ => Err(ExecError::Invalid(format!(
            "node {id} does not carry a distribution"
        ))),
    }
}

fn check_finite(tape: &Tape, id: ValId, node: NodeId, kind: &'static str) -> Result<(), ExecError> {
    let value = tape.value(id);
    if value.all_finite() {
        Ok(())
    } else {
        Err(ExecError::Numeric {
            node,
            kind,
            summary: summarize(value),
        })
    }
}

fn collect_mlp_grads(
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

/// Ancestor closure of one node (inclusive).
fn ancestors_of(
    graph: &LossGraph,
    index: &HashMap<NodeId, usize>,
    root: NodeId,
) -> BTreeSet<NodeId> {
    let mut set = BTreeSet::new();
    let mut stack = vec![root];
    while let Some(id) = stack.pop() {
        if !set.insert(id) {
            continue;
        }
        for input in &graph.nodes[index[&id]].inputs {
            stack.push(*input);
        }
    }
    set
}

/// Apply a tensor-valued operation kind on the tape. Network and
/// distribution kinds are not primitives and are rejected.
pub fn apply_primitive_taped(
    tape: &mut Tape,
    kind: NodeKind,
    inputs: &[ValId],
) -> Result<ValId, ExecError> {
    use NodeKind::*;
    if inputs.len() != kind.arity() {
        return Err(ExecError::Tensor(TensorError::Arity {
            op: kind.name(),
            expected: kind.arity(),
            got: inputs.len(),
        }));
    }
    let fold = |tape: &mut Tape, op: TapeOp, inputs: &[ValId]| -> Result<ValId, TensorError> {
        let mut acc = tape.apply(op.clone(), &[inputs[0], inputs[1]])?;
        for &next in &inputs[2..] {
            acc = tape.apply(op.clone(), &[acc, next])?;
        }
        Ok(acc)
    };
    let out = match kind {
        Add2 => tape.apply(TapeOp::Add, inputs)?,
        Add3 | Add4 => fold(tape, TapeOp::Add, inputs)?,
        Mul2 => tape.apply(TapeOp::Mul, inputs)?,
        Mul3 => fold(tape, TapeOp::Mul, inputs)?,
        Sub => tape.apply(TapeOp::Sub, inputs)?,
        DivEps => tape.apply(TapeOp::DivEps, inputs)?,
        StopGradient => tape.apply(TapeOp::StopGradient, inputs)?,
        MeanLast => tape.apply(TapeOp::MeanLast, inputs)?,
        SumLast => tape.apply(TapeOp::SumLast, inputs)?,
        StdLast => tape.apply(TapeOp::StdLast, inputs)?,
        MeanAll => tape.apply(TapeOp::MeanAll, inputs)?,
        SumAll => tape.apply(TapeOp::SumAll, inputs)?,
        StdAll => tape.apply(TapeOp::StdAll, inputs)?,
        CumSum => tape.apply(TapeOp::CumSum, inputs)?,
        DiscountedCumSum => tape.apply(TapeOp::DiscountedCumSum, inputs)?,
        SquaredDiff => tape.apply(TapeOp::SquaredDiff, inputs)?,
        MulConst(c) => tape.apply(TapeOp::MulScalar(c.value()), inputs)?,
        MinLast => tape.apply(TapeOp::MinLast, inputs)?,
        MaxLast => tape.apply(TapeOp::MaxLast, inputs)?,
        MinElem => tape.apply(TapeOp::MinElem, inputs)?,
        MaxElem => tape.apply(TapeOp::MaxElem, inputs)?,
        Clamp => tape.apply(TapeOp::Clamp(-1.0, 1.0), inputs)?,
        Abs => tape.apply(TapeOp::Abs, inputs)?,
        Square => tape.apply(TapeOp::Square, inputs)?,
        Log => tape.apply(TapeOp::LogGuard, inputs)?,
        Exp => tape.apply(TapeOp::Exp, inputs)?,
        Sin => tape.apply(TapeOp::Sin, inputs)?,
        Cos => tape.apply(TapeOp::Cos, inputs)?,
        Tan => tape.apply(TapeOp::Tan, inputs)?,
        Atan => tape.apply(TapeOp::Atan, inputs)?,
        other => {
            return Err(ExecError::Invalid(format!(
                "{} is not a tensor primitive",
                other.name()
            )))
        }
    };
    Ok(out)
}

/// Untaped primitive application with a finiteness check on the result.
pub fn apply_primitive(kind: NodeKind, inputs: &[&Tensor]) -> Result<Tensor, ExecError> {
    let mut tape = Tape::new();
    let ids: Vec<ValId> = inputs.iter().map(|t| tape.leaf((*t).clone(), false)).collect();
    let out = apply_primitive_taped(&mut tape, kind, &ids)?;
    let value = tape.value(out);
    if !value.all_finite() {
        let summary = inputs.iter().map(|t| summarize(t)).collect::<Vec<_>>().join("; ");
        return Err(ExecError::Numeric {
            node: NodeId(u32::MAX),
            kind: kind.name(),
            summary,
        });
    }
    Ok(value.clone())
}

/// One-shot interpretation. Prefer [`PreparedGraph`] for repeated use.
pub fn evaluate(
    graph: &LossGraph,
    batch: &TransitionBatch,
    nets: &NetworkBindings,
    noise_seed: u64,
) -> Result<LossValues, ExecError> {
    PreparedGraph::new(graph)?.losses(batch, nets, noise_seed)
}

/// One-shot gradient computation. Prefer [`PreparedGraph`] for repeated use.
pub fn loss_gradients(
    graph: &LossGraph,
    batch: &TransitionBatch,
    nets: &NetworkBindings,
    noise_seed: u64,
) -> Result<LossGradients, ExecError> {
    PreparedGraph::new(graph)?.gradients(batch, nets, noise_seed)
}

/// Deterministic random networks for tests, hashing, and training init.
pub fn init_networks(
    dims: EnvDims,
    hidden: &[usize],
    seed: u64,
) -> NetworkBindings {
    let mut rng = RngStream::derive(seed, &["net-init"], &[]);
    let policy = GaussianTanhPolicy::init(dims.state_dim, dims.action_dim, hidden, rng.inner());
    let mut critic_dims = vec![dims.state_dim + dims.action_dim];
    critic_dims.extend_from_slice(hidden);
    critic_dims.push(1);
    let critic1 = MlpParams::init(&critic_dims, false, rng.inner());
    let critic2 = MlpParams::init(&critic_dims, false, rng.inner());
    let target_critic1 = critic1.clone();
    let target_critic2 = critic2.clone();
    NetworkBindings {
        policy,
        critic1,
        critic2,
        target_critic1,
        target_critic2,
    }
}

/// Deterministic standard-normal batch for tests and hashing.
pub fn synthetic_batch(dims: EnvDims, batch: usize, gamma: f64, seed: u64) -> TransitionBatch {
    let mut rng = RngStream::derive(seed, &["synthetic-batch"], &[]);
    TransitionBatch {
        states: rng.normal_tensor(&[batch, dims.state_dim]),
        actions: {
            let raw = rng.normal_tensor(&[batch, dims.action_dim]);
            crate::tensor::tanh(&raw)
        },
        rewards: rng.normal_tensor(&[batch]),
        next_states: rng.normal_tensor(&[batch, dims.state_dim]),
        gamma,
        terminals: vec![false; batch],
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{warm_start_sac, GraphNode};
    use approx::assert_relative_eq;

    fn setup() -> (TransitionBatch, NetworkBindings) {
        let dims = EnvDims { state_dim: 3, action_dim: 1 };
        (
            synthetic_batch(dims, 8, 0.99, 42),
            init_networks(dims, &[16, 16], 7),
        )
    }

    #[test]
    fn warm_start_evaluates_finite_and_deterministic() {
        let (batch, nets) = setup();
        let g = warm_start_sac();
        let v1 = evaluate(&g, &batch, &nets, 5).unwrap();
        let v2 = evaluate(&g, &batch, &nets, 5).unwrap();
        assert!(v1.all_finite());
        assert_eq!(v1, v2);
        let v3 = evaluate(&g, &batch, &nets, 6).unwrap();
        assert_ne!(v1.policy_loss, v3.policy_loss);
    }

    #[test]
    fn x_minus_x_graph_is_zero() {
        use NodeKind::*;
        let mut nodes: Vec<GraphNode> = warm_start_sac()
            .nodes
            .iter()
            .take(10)
            .cloned()
            .collect();
        let id = |i: u32| NodeId(i);
        nodes.push(GraphNode { id: id(10), kind: SquaredDiff, inputs: vec![id(8), id(8)] });
        nodes.push(GraphNode { id: id(11), kind: MeanAll, inputs: vec![id(10)] });
        nodes.push(GraphNode { id: id(12), kind: PolicyLoss, inputs: vec![id(11)] });
        nodes.push(GraphNode { id: id(13), kind: CriticLoss, inputs: vec![id(11)] });
        let g = LossGraph { nodes, max_nodes: 60 };
        let (batch, nets) = setup();
        let v = evaluate(&g, &batch, &nets, 0).unwrap();
        assert_eq!(v.policy_loss, 0.0);
        assert_eq!(v.critic_losses, [0.0, 0.0]);
    }

    #[test]
    fn target_critics_receive_no_gradient() {
        let (batch, nets) = setup();
        let g = warm_start_sac();
        let grads = loss_gradients(&g, &batch, &nets, 3).unwrap();
        // Constant-free policy gradient exists and is finite.
        assert!(grads.all_finite());
        assert!(grads.policy.iter().any(|t| t.sq_norm() > 0.0));
        assert!(grads.critics[0].iter().any(|t| t.sq_norm() > 0.0));
        assert!(grads.critics[1].iter().any(|t| t.sq_norm() > 0.0));
    }

    #[test]
    fn constant_loss_has_zero_gradients() {
        use NodeKind::*;
        let mut nodes: Vec<GraphNode> = warm_start_sac().nodes.iter().take(10).cloned().collect();
        let id = |i: u32| NodeId(i);
        nodes.push(GraphNode { id: id(10), kind: SquaredDiff, inputs: vec![id(8), id(8)] });
        nodes.push(GraphNode { id: id(11), kind: MeanAll, inputs: vec![id(10)] });
        nodes.push(GraphNode { id: id(12), kind: PolicyLoss, inputs: vec![id(11)] });
        nodes.push(GraphNode { id: id(13), kind: CriticLoss, inputs: vec![id(11)] });
        let g = LossGraph { nodes, max_nodes: 60 };
        let (batch, nets) = setup();
        let grads = loss_gradients(&g, &batch, &nets, 0).unwrap();
        assert!(grads.policy.iter().all(|t| t.sq_norm() == 0.0));
        assert!(grads.critics.iter().flatten().all(|t| t.sq_norm() == 0.0));
    }

    #[test]
    fn id_permutation_does_not_change_values() {
        let (batch, nets) = setup();
        let g = warm_start_sac();
        let n = g.node_count() as u32;
        let map: HashMap<NodeId, NodeId> =
            (0..n).map(|i| (NodeId(i), NodeId(n - 1 - i))).collect();
        let h = g.relabel(&map);
        let vg = evaluate(&g, &batch, &nets, 9).unwrap();
        let vh = evaluate(&h, &batch, &nets, 9).unwrap();
        assert_relative_eq!(vg.policy_loss, vh.policy_loss, max_relative = 1e-12);
        assert_relative_eq!(vg.critic_losses[0], vh.critic_losses[0], max_relative = 1e-12);
    }

    #[test]
    fn prune_preserves_losses() {
        let (batch, nets) = setup();
        let mut g = warm_start_sac();
        // A dead node: its value never reaches the outputs.
        g.nodes.push(GraphNode {
            id: NodeId(33),
            kind: NodeKind::Square,
            inputs: vec![NodeId(8)],
        });
        let pruned = g.prune_dead_nodes().unwrap();
        assert_eq!(pruned.node_count(), 33);
        let v1 = evaluate(&g, &batch, &nets, 4).unwrap();
        let v2 = evaluate(&pruned, &batch, &nets, 4).unwrap();
        assert_eq!(v1, v2);
    }
}
