//! Built-in graphs: the SAC warm-start that seeds every population, and the
//! evolved losses shipped as named presets.

use super::{GraphNode, LossGraph, MulConstant, NodeId, NodeKind};
use std::collections::BTreeMap;

use NodeKind::*;

/// Default node budget for the 60-node search space.
pub const DEFAULT_MAX_NODES: usize = 60;

struct Builder {
    nodes: Vec<GraphNode>,
}

impl Builder {
    fn new() -> Self {
        // Inputs always occupy ids 0..=9 in a fixed order.
        let inputs = [
            PolicyNet,
            CriticNet1,
            CriticNet2,
            TargetCriticNet1,
            TargetCriticNet2,
            States,
            NextStates,
            Actions,
            Rewards,
            Discount,
        ];
        let nodes = inputs
            .iter()
            .enumerate()
            .map(|(i, &kind)| GraphNode {
                id: NodeId(i as u32),
                kind,
                inputs: vec![],
            })
            .collect();
        Builder { nodes }
    }

    fn op(&mut self, kind: NodeKind, inputs: &[NodeId]) -> NodeId {
        let id = NodeId(self.nodes.len() as u32);
        self.nodes.push(GraphNode {
            id,
            kind,
            inputs: inputs.to_vec(),
        });
        id
    }

    fn finish(mut self, policy_loss: NodeId, critic_loss: NodeId) -> LossGraph {
        self.op(PolicyLoss, &[policy_loss]);
        self.op(CriticLoss, &[critic_loss]);
        LossGraph {
            nodes: self.nodes,
            max_nodes: DEFAULT_MAX_NODES,
        }
    }
}

const POLICY: NodeId = NodeId(0);
const Q1: NodeId = NodeId(1);
const Q2: NodeId = NodeId(2);
const QT1: NodeId = NodeId(3);
const QT2: NodeId = NodeId(4);
const S: NodeId = NodeId(5);
const S_NEXT: NodeId = NodeId(6);
const A: NodeId = NodeId(7);
const R: NodeId = NodeId(8);
const GAMMA: NodeId = NodeId(9);

/// The 33-node SAC graph used to initialize populations: entropy weight
/// fixed at 1, min over the two critics, TD target behind a stop-gradient.
pub fn warm_start_sac() -> LossGraph {
    let mut b = Builder::new();
    // Policy side: mean(log pi(a~|s) - min(Q1, Q2)(s, a~)).
    let dist_t = b.op(DistFromState, &[POLICY, S]);
    let a_t = b.op(DistSample, &[dist_t]);
    let logp_t = b.op(DistLogProb, &[dist_t, a_t]);
    let q1_pi = b.op(CriticValue, &[Q1, S, a_t]);
    let q2_pi = b.op(CriticValue, &[Q2, S, a_t]);
    let min_q = b.op(MinElem, &[q1_pi, q2_pi]);
    let pol_diff = b.op(Sub, &[logp_t, min_q]);
    let pol_loss = b.op(MeanAll, &[pol_diff]);
    // Critic side: mean((sg(r + g*(min(Qt1, Qt2)(s', a~') - log pi')) - Q(s, a))^2).
    let dist_t1 = b.op(DistFromState, &[POLICY, S_NEXT]);
    let a_t1 = b.op(DistSample, &[dist_t1]);
    let logp_t1 = b.op(DistLogProb, &[dist_t1, a_t1]);
    let qt1 = b.op(CriticValue, &[QT1, S_NEXT, a_t1]);
    let qt2 = b.op(CriticValue, &[QT2, S_NEXT, a_t1]);
    let min_qt = b.op(MinElem, &[qt1, qt2]);
    let ent = b.op(Sub, &[min_qt, logp_t1]);
    let disc = b.op(Mul2, &[GAMMA, ent]);
    let target = b.op(Add2, &[R, disc]);
    let target_sg = b.op(StopGradient, &[target]);
    let q_online = b.op(CriticValue, &[Q1, S, A]);
    let td_sq = b.op(SquaredDiff, &[target_sg, q_online]);
    let critic_loss = b.op(MeanAll, &[td_sq]);
    b.finish(pol_loss, critic_loss)
}

/// Node ids of the two `DistSample` nodes in [`warm_start_sac`], in
/// (current-state, next-state) order. The hand-coded SAC baseline shares
/// their noise streams.
pub fn warm_start_sample_nodes() -> (NodeId, NodeId) {
    (NodeId(11), NodeId(19))
}

fn cartpole_best_performer() -> LossGraph {
    let mut b = Builder::new();
    let dist_t = b.op(DistFromState, &[POLICY, S]);
    let a_t = b.op(DistSample, &[dist_t]);
    let dist_t1 = b.op(DistFromState, &[POLICY, S_NEXT]);
    let a_t1 = b.op(DistSample, &[dist_t1]);
    let logp_t1 = b.op(DistLogProb, &[dist_t1, a_t1]);
    // log(min(pi(a~'|s'), gamma)) - min(Q1, Q2)(s, a~)
    let prob = b.op(Exp, &[logp_t1]);
    let capped = b.op(MinElem, &[prob, GAMMA]);
    let logged = b.op(Log, &[capped]);
    let q1_pi = b.op(CriticValue, &[Q1, S, a_t]);
    let q2_pi = b.op(CriticValue, &[Q2, S, a_t]);
    let min_q = b.op(MinElem, &[q1_pi, q2_pi]);
    let pol_diff = b.op(Sub, &[logged, min_q]);
    let pol_loss = b.op(MeanAll, &[pol_diff]);
    // Critic target keeps its own target critic and drops the entropy term.
    let qt1 = b.op(CriticValue, &[QT1, S_NEXT, a_t1]);
    let disc = b.op(Mul2, &[GAMMA, qt1]);
    let target = b.op(Add2, &[R, disc]);
    let q_online = b.op(CriticValue, &[Q1, S, A]);
    let td_sq = b.op(SquaredDiff, &[target, q_online]);
    let critic_loss = b.op(MeanAll, &[td_sq]);
    b.finish(pol_loss, critic_loss)
}

fn cartpole_best_generalizer() -> LossGraph {
    let mut b = Builder::new();
    let dist_t = b.op(DistFromState, &[POLICY, S]);
    let a_t = b.op(DistSample, &[dist_t]);
    let logp_t = b.op(DistLogProb, &[dist_t, a_t]);
    // log pi(a~|s) - min(Q1, Q2)(s', a~)
    let q1_pi = b.op(CriticValue, &[Q1, S_NEXT, a_t]);
    let q2_pi = b.op(CriticValue, &[Q2, S_NEXT, a_t]);
    let min_q = b.op(MinElem, &[q1_pi, q2_pi]);
    let pol_diff = b.op(Sub, &[logp_t, min_q]);
    let pol_loss = b.op(MeanAll, &[pol_diff]);
    // atan((r + g*(min(Qt1, Qt2)(s', a~) - log pi(a~|s)) - Q(s, a))^2)
    let qt1 = b.op(CriticValue, &[QT1, S_NEXT, a_t]);
    let qt2 = b.op(CriticValue, &[QT2, S_NEXT, a_t]);
    let min_qt = b.op(MinElem, &[qt1, qt2]);
    let ent = b.op(Sub, &[min_qt, logp_t]);
    let disc = b.op(Mul2, &[GAMMA, ent]);
    let target = b.op(Add2, &[R, disc]);
    let q_online = b.op(CriticValue, &[Q1, S, A]);
    let td_sq = b.op(SquaredDiff, &[target, q_online]);
    let soft = b.op(Atan, &[td_sq]);
    let critic_loss = b.op(MeanAll, &[soft]);
    b.finish(pol_loss, critic_loss)
}

fn walker_best_performer() -> LossGraph {
    let mut b = Builder::new();
    let dist_t = b.op(DistFromState, &[POLICY, S]);
    let a_t = b.op(DistSample, &[dist_t]);
    let dist_t1 = b.op(DistFromState, &[POLICY, S_NEXT]);
    let a_t1 = b.op(DistSample, &[dist_t1]);
    // Shared target: r + g*(min(Qt1, Qt2)(s', a~') - atan(g / Q(s, a)))
    let qt1 = b.op(CriticValue, &[QT1, S_NEXT, a_t1]);
    let qt2 = b.op(CriticValue, &[QT2, S_NEXT, a_t1]);
    let min_qt = b.op(MinElem, &[qt1, qt2]);
    let q_online = b.op(CriticValue, &[Q1, S, A]);
    let ratio = b.op(DivEps, &[GAMMA, q_online]);
    let soft = b.op(Atan, &[ratio]);
    let inner = b.op(Sub, &[min_qt, soft]);
    let disc = b.op(Mul2, &[GAMMA, inner]);
    let target = b.op(Add2, &[R, disc]);
    // Policy loss subtracts Q(s, a~) from that target (no squaring).
    let q_pi = b.op(CriticValue, &[Q1, S, a_t]);
    let pol_diff = b.op(Sub, &[target, q_pi]);
    let pol_loss = b.op(MeanAll, &[pol_diff]);
    let td_sq = b.op(SquaredDiff, &[target, q_online]);
    let critic_loss = b.op(MeanAll, &[td_sq]);
    b.finish(pol_loss, critic_loss)
}

fn walker_best_generalizer() -> LossGraph {
    let mut b = Builder::new();
    let dist_t1 = b.op(DistFromState, &[POLICY, S_NEXT]);
    let a_t1 = b.op(DistSample, &[dist_t1]);
    let logp_t1 = b.op(DistLogProb, &[dist_t1, a_t1]);
    // Shared denominator: Q1(s', a~') - 0.1*log pi'
    let q1_next = b.op(CriticValue, &[Q1, S_NEXT, a_t1]);
    let lp_tenth = b.op(MulConst(MulConstant::Tenth), &[logp_t1]);
    let denom = b.op(Sub, &[q1_next, lp_tenth]);
    // 0.2*log pi' composed as 2*(0.1*log pi').
    let lp_fifth = b.op(MulConst(MulConstant::Two), &[lp_tenth]);
    let ratio = b.op(DivEps, &[lp_fifth, denom]);
    let q1_pi = b.op(CriticValue, &[Q1, S, a_t1]);
    let q2_pi = b.op(CriticValue, &[Q2, S, a_t1]);
    let min_q = b.op(MinElem, &[q1_pi, q2_pi]);
    let pol_diff = b.op(Sub, &[ratio, min_q]);
    let pol_loss = b.op(MeanAll, &[pol_diff]);
    // Critic bootstraps through the online critic, no target network.
    let disc = b.op(Mul2, &[GAMMA, denom]);
    let target = b.op(Add2, &[R, disc]);
    let q_online = b.op(CriticValue, &[Q1, S, A]);
    let td_sq = b.op(SquaredDiff, &[target, q_online]);
    let critic_loss = b.op(MeanAll, &[td_sq]);
    b.finish(pol_loss, critic_loss)
}

fn pendulum_best_performer() -> LossGraph {
    let mut b = Builder::new();
    let dist_t = b.op(DistFromState, &[POLICY, S]);
    let a_t = b.op(DistSample, &[dist_t]);
    let logp_t = b.op(DistLogProb, &[dist_t, a_t]);
    // 2*atan(log pi(a~|s)) - min(Q1, Q2)(s, a~)
    let soft = b.op(Atan, &[logp_t]);
    let doubled = b.op(MulConst(MulConstant::Two), &[soft]);
    let q1_pi = b.op(CriticValue, &[Q1, S, a_t]);
    let q2_pi = b.op(CriticValue, &[Q2, S, a_t]);
    let min_q = b.op(MinElem, &[q1_pi, q2_pi]);
    let pol_diff = b.op(Sub, &[doubled, min_q]);
    let pol_loss = b.op(MeanAll, &[pol_diff]);
    // r + g*(Qt1(s', a~) - log pi(a~|s)) - Q(s, a), squared
    let qt1 = b.op(CriticValue, &[QT1, S_NEXT, a_t]);
    let ent = b.op(Sub, &[qt1, logp_t]);
    let disc = b.op(Mul2, &[GAMMA, ent]);
    let target = b.op(Add2, &[R, disc]);
    let q_online = b.op(CriticValue, &[Q1, S, A]);
    let td_sq = b.op(SquaredDiff, &[target, q_online]);
    let critic_loss = b.op(MeanAll, &[td_sq]);
    b.finish(pol_loss, critic_loss)
}

fn pendulum_best_generalizer() -> LossGraph {
    let mut b = Builder::new();
    let dist_t = b.op(DistFromState, &[POLICY, S]);
    let a_t = b.op(DistSample, &[dist_t]);
    let logp_t = b.op(DistLogProb, &[dist_t, a_t]);
    // log(log pi): the inner log is guarded, see the Log primitive.
    let log_log = b.op(Log, &[logp_t]);
    let q1_pi = b.op(CriticValue, &[Q1, S, a_t]);
    let q2_pi = b.op(CriticValue, &[Q2, S, a_t]);
    let min_q = b.op(MinElem, &[q1_pi, q2_pi]);
    let pol_diff = b.op(Sub, &[log_log, min_q]);
    let pol_loss = b.op(MeanAll, &[pol_diff]);
    let qt1 = b.op(CriticValue, &[QT1, S_NEXT, a_t]);
    let ent = b.op(Sub, &[qt1, log_log]);
    let disc = b.op(Mul2, &[GAMMA, ent]);
    let target = b.op(Add2, &[R, disc]);
    let q_online = b.op(CriticValue, &[Q1, S, A]);
    let td_sq = b.op(SquaredDiff, &[target, q_online]);
    let critic_loss = b.op(MeanAll, &[td_sq]);
    b.finish(pol_loss, critic_loss)
}

fn ant_best_performer() -> LossGraph {
    let mut b = Builder::new();
    let dist_t1 = b.op(DistFromState, &[POLICY, S_NEXT]);
    let a_t1 = b.op(DistSample, &[dist_t1]);
    let logp_t1 = b.op(DistLogProb, &[dist_t1, a_t1]);
    // log pi(a~'|s') - min(Q1, Q2)(s, a)
    let q1_a = b.op(CriticValue, &[Q1, S, A]);
    let q2_a = b.op(CriticValue, &[Q2, S, A]);
    let min_qa = b.op(MinElem, &[q1_a, q2_a]);
    let pol_diff = b.op(Sub, &[logp_t1, min_qa]);
    let pol_loss = b.op(MeanAll, &[pol_diff]);
    // |(r + g*(min(Qt1, Qt2)(s, a~') - g) - Q(s, a))^2 * C1|
    // with C1 = r + g*(min(Q1, Q2)(s', a~') - g).
    let qt1 = b.op(CriticValue, &[QT1, S, a_t1]);
    let qt2 = b.op(CriticValue, &[QT2, S, a_t1]);
    let min_qt = b.op(MinElem, &[qt1, qt2]);
    let less_g = b.op(Sub, &[min_qt, GAMMA]);
    let disc = b.op(Mul2, &[GAMMA, less_g]);
    let target = b.op(Add2, &[R, disc]);
    let td_sq = b.op(SquaredDiff, &[target, q1_a]);
    let c1_q1 = b.op(CriticValue, &[Q1, S_NEXT, a_t1]);
    let c1_q2 = b.op(CriticValue, &[Q2, S_NEXT, a_t1]);
    let c1_min = b.op(MinElem, &[c1_q1, c1_q2]);
    let c1_less = b.op(Sub, &[c1_min, GAMMA]);
    let c1_disc = b.op(Mul2, &[GAMMA, c1_less]);
    let c1 = b.op(Add2, &[R, c1_disc]);
    let prod = b.op(Mul2, &[td_sq, c1]);
    let magnitude = b.op(Abs, &[prod]);
    let critic_loss = b.op(MeanAll, &[magnitude]);
    b.finish(pol_loss, critic_loss)
}

fn humanoid_best_performer() -> LossGraph {
    let mut b = Builder::new();
    let dist_t1 = b.op(DistFromState, &[POLICY, S_NEXT]);
    let a_t1 = b.op(DistSample, &[dist_t1]);
    let logp_t1 = b.op(DistLogProb, &[dist_t1, a_t1]);
    let q1_a = b.op(CriticValue, &[Q1, S, A]);
    let q2_a = b.op(CriticValue, &[Q2, S, A]);
    let min_qa = b.op(MinElem, &[q1_a, q2_a]);
    let pol_diff = b.op(Sub, &[logp_t1, min_qa]);
    let pol_loss = b.op(MeanAll, &[pol_diff]);
    // (C2 - Q(s, a))^2 * C2, C2 = r + g*(min(Qt1, Qt2)(s, a~') - log pi').
    let qt1 = b.op(CriticValue, &[QT1, S, a_t1]);
    let qt2 = b.op(CriticValue, &[QT2, S, a_t1]);
    let min_qt = b.op(MinElem, &[qt1, qt2]);
    let ent = b.op(Sub, &[min_qt, logp_t1]);
    let disc = b.op(Mul2, &[GAMMA, ent]);
    let c2 = b.op(Add2, &[R, disc]);
    let td_sq = b.op(SquaredDiff, &[c2, q1_a]);
    let prod = b.op(Mul2, &[td_sq, c2]);
    let critic_loss = b.op(MeanAll, &[prod]);
    b.finish(pol_loss, critic_loss)
}

/// Every shipped preset, including the warm start, keyed by name.
pub fn preset_graphs() -> BTreeMap<String, LossGraph> {
    let mut map = BTreeMap::new();
    map.insert("warm_start_sac".to_string(), warm_start_sac());
    map.insert("cartpole_best_performer".to_string(), cartpole_best_performer());
    map.insert("cartpole_best_generalizer".to_string(), cartpole_best_generalizer());
    map.insert("walker_best_performer".to_string(), walker_best_performer());
    map.insert("walker_best_generalizer".to_string(), walker_best_generalizer());
    map.insert("pendulum_best_performer".to_string(), pendulum_best_performer());
    map.insert("pendulum_best_generalizer".to_string(), pendulum_best_generalizer());
    map.insert("ant_best_performer".to_string(), ant_best_performer());
    map.insert("humanoid_best_performer".to_string(), humanoid_best_performer());
    map
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::EnvDims;

    #[test]
    fn warm_start_has_33_nodes() {
        assert_eq!(warm_start_sac().node_count(), 33);
    }

    #[test]
    fn warm_start_sample_node_ids_are_dist_samples() {
        let g = warm_start_sac();
        let (a, b) = warm_start_sample_nodes();
        assert_eq!(g.node(a).unwrap().kind, DistSample);
        assert_eq!(g.node(b).unwrap().kind, DistSample);
    }

    #[test]
    fn every_preset_validates_on_multiple_dims() {
        for (name, graph) in preset_graphs() {
            for (s, a) in [(3usize, 1usize), (2, 1), (5, 3)] {
                let report = graph.validate(EnvDims { state_dim: s, action_dim: a }, 8);
                assert!(
                    report.valid,
                    "{name} invalid for dims ({s},{a}): {:?}",
                    report.first_error
                );
            }
        }
    }

    #[test]
    fn warm_start_outputs_come_last_in_topo_order() {
        let g = warm_start_sac();
        let order = g.topological_order().unwrap();
        let last_two = &order[order.len() - 2..];
        let kinds: Vec<NodeKind> = last_two
            .iter()
            .map(|id| g.node(*id).unwrap().kind)
            .collect();
        assert!(kinds.contains(&PolicyLoss) && kinds.contains(&CriticLoss));
    }
}
