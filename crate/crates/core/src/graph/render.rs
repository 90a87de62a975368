//! Infix rendering of loss graphs for inspection.
//!
//! The output mirrors the notation the equations are usually written in:
//! sampled actions print as `ã_t`/`ã_{t+1}`, log-densities as `log π(a|s)`,
//! and a min over the two critics applied to the same arguments collapses to
//! `min(Q1, Q2)(args)`. Long shared subterms are hoisted into `x<k> = ...`
//! bindings to keep the dump linear in graph size.

use super::{GraphError, LossGraph, NodeId, NodeKind};
use std::collections::HashMap;

/// Rendered policy/critic expressions plus hoisted subterm bindings.
#[derive(Debug, Clone)]
pub struct RenderedLosses {
    pub policy: String,
    pub critic: String,
    pub bindings: Vec<(String, String)>,
}

impl std::fmt::Display for RenderedLosses {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for (name, expr) in &self.bindings {
            writeln!(f, "{name} = {expr}")?;
        }
        writeln!(f, "L_pi = {}", self.policy)?;
        write!(f, "L_Q  = {}", self.critic)
    }
}

/// Subterms longer than this with fan-out >= 2 become named bindings.
const BIND_THRESHOLD: usize = 48;

pub fn render_expressions(graph: &LossGraph) -> Result<RenderedLosses, GraphError> {
    let index = graph
        .index()
        .ok_or_else(|| GraphError::Invalid("duplicate node ids".into()))?;
    let order = graph.topological_order()?;
    let live = graph.live_set()?;

    // Fan-out among live nodes decides what gets hoisted.
    let mut fanout: HashMap<NodeId, usize> = HashMap::new();
    for node in &graph.nodes {
        if !live.contains(&node.id) {
            continue;
        }
        for input in &node.inputs {
            *fanout.entry(*input).or_insert(0) += 1;
        }
    }

    let mut rendered: HashMap<NodeId, String> = HashMap::new();
    let mut bindings: Vec<(String, String)> = Vec::new();
    let mut policy = String::from("<missing>");
    let mut critic = String::from("<missing>");

    for id in order {
        if !live.contains(&id) {
            continue;
        }
        let node = &graph.nodes[index[&id]];
        let expr = render_node(graph, node, &rendered, &index);
        match node.kind {
            NodeKind::PolicyLoss => policy = rendered[&node.inputs[0]].clone(),
            NodeKind::CriticLoss => critic = rendered[&node.inputs[0]].clone(),
            _ => {
                let hoist = node.kind.is_operation()
                    && fanout.get(&id).copied().unwrap_or(0) >= 2
                    && expr.len() > BIND_THRESHOLD;
                if hoist {
                    let name = format!("x{}", bindings.len() + 1);
                    bindings.push((name.clone(), expr));
                    rendered.insert(id, name);
                } else {
                    rendered.insert(id, expr);
                }
            }
        }
    }
    Ok(RenderedLosses {
        policy,
        critic,
        bindings,
    })
}

fn render_node(
    graph: &LossGraph,
    node: &super::GraphNode,
    rendered: &HashMap<NodeId, String>,
    index: &HashMap<NodeId, usize>,
) -> String {
    use NodeKind::*;
    let arg = |i: usize| rendered.get(&node.inputs[i]).cloned().unwrap_or_else(|| node.inputs[i].to_string());
    let kind_of = |id: NodeId| index.get(&id).map(|&i| graph.nodes[i].kind);
    match node.kind {
        PolicyNet => "π".into(),
        CriticNet1 => "Q1".into(),
        CriticNet2 => "Q2".into(),
        TargetCriticNet1 => "Qt1".into(),
        TargetCriticNet2 => "Qt2".into(),
        States => "s_t".into(),
        NextStates => "s_{t+1}".into(),
        Actions => "a_t".into(),
        Rewards => "r_t".into(),
        Discount => "γ".into(),
        PolicyLoss | CriticLoss => arg(0),
        Add2 => format!("({} + {})", arg(0), arg(1)),
        Add3 => format!("({} + {} + {})", arg(0), arg(1), arg(2)),
        Add4 => format!("({} + {} + {} + {})", arg(0), arg(1), arg(2), arg(3)),
        Mul2 => format!("({} * {})", arg(0), arg(1)),
        Mul3 => format!("({} * {} * {})", arg(0), arg(1), arg(2)),
        Sub => format!("({} - {})", arg(0), arg(1)),
        DivEps => format!("({} / ({} + ε))", arg(0), arg(1)),
        DistFromState => format!("π(·|{})", arg(1)),
        StopGradient => format!("sg({})", arg(0)),
        DistSample => {
            // Name the sample after the state feeding its distribution.
            match sample_state_kind(graph, node.inputs[0], index) {
                Some(States) => "ã_t".into(),
                Some(NextStates) => "ã_{t+1}".into(),
                _ => format!("ã({})", arg(0)),
            }
        }
        DistLogProb => {
            let state = dist_state_expr(graph, node.inputs[0], rendered, index);
            format!("log π({}|{})", arg(1), state)
        }
        CriticValue => {
            // min(Q1, Q2)(s, a) fusion happens at the MinElem site.
            format!("{}({}, {})", arg(0), arg(1), arg(2))
        }
        MeanLast => format!("mean_last({})", arg(0)),
        SumLast => format!("sum_last({})", arg(0)),
        StdLast => format!("std_last({})", arg(0)),
        MeanAll => format!("mean({})", arg(0)),
        SumAll => format!("sum({})", arg(0)),
        StdAll => format!("std({})", arg(0)),
        CumSum => format!("cumsum({})", arg(0)),
        DiscountedCumSum => format!("disc_cumsum({}, {})", arg(0), arg(1)),
        SquaredDiff => format!("({} - {})^2", arg(0), arg(1)),
        MulConst(c) => format!("({} * {})", c.token(), arg(0)),
        MinLast => format!("min_last({})", arg(0)),
        MaxLast => format!("max_last({})", arg(0)),
        MinElem | MaxElem => {
            let op = if node.kind == MinElem { "min" } else { "max" };
            // Fuse a min/max over two critic applications with equal args.
            if let (Some(CriticValue), Some(CriticValue)) =
                (kind_of(node.inputs[0]), kind_of(node.inputs[1]))
            {
                let a = &graph.nodes[index[&node.inputs[0]]];
                let b = &graph.nodes[index[&node.inputs[1]]];
                if a.inputs[1..] == b.inputs[1..] {
                    let net_a = rendered.get(&a.inputs[0]).cloned().unwrap_or_default();
                    let net_b = rendered.get(&b.inputs[0]).cloned().unwrap_or_default();
                    let s = rendered.get(&a.inputs[1]).cloned().unwrap_or_default();
                    let act = rendered.get(&a.inputs[2]).cloned().unwrap_or_default();
                    return format!("{op}({net_a}, {net_b})({s}, {act})");
                }
            }
            format!("{op}({}, {})", arg(0), arg(1))
        }
        Clamp => format!("clamp({})", arg(0)),
        Abs => format!("|{}|", arg(0)),
        Square => format!("({})^2", arg(0)),
        Log => format!("log({})", arg(0)),
        Exp => format!("exp({})", arg(0)),
        Sin => format!("sin({})", arg(0)),
        Cos => format!("cos({})", arg(0)),
        Tan => format!("tan({})", arg(0)),
        Atan => format!("atan({})", arg(0)),
    }
}

/// Kind of the state node feeding a distribution, if it is a plain input.
fn sample_state_kind(
    graph: &LossGraph,
    dist: NodeId,
    index: &HashMap<NodeId, usize>,
) -> Option<NodeKind> {
    let dist_node = &graph.nodes[*index.get(&dist)?];
    if dist_node.kind != NodeKind::DistFromState {
        return None;
    }
    index
        .get(&dist_node.inputs[1])
        .map(|&i| graph.nodes[i].kind)
}

fn dist_state_expr(
    graph: &LossGraph,
    dist: NodeId,
    rendered: &HashMap<NodeId, String>,
    index: &HashMap<NodeId, usize>,
) -> String {
    index
        .get(&dist)
        .map(|&i| &graph.nodes[i])
        .filter(|n| n.kind == NodeKind::DistFromState)
        .and_then(|n| rendered.get(&n.inputs[1]).cloned())
        .unwrap_or_else(|| dist.to_string())
}

#[cfg(test)]
mod tests {
    use crate::graph::preset_graphs;

    #[test]
    fn warm_start_policy_mentions_logprob_and_min_q() {
        let g = &preset_graphs()["warm_start_sac"];
        let r = super::render_expressions(g).unwrap();
        assert!(r.policy.contains("log π"), "{}", r.policy);
        assert!(r.policy.contains("min(Q1, Q2)"), "{}", r.policy);
    }

    #[test]
    fn atan_critic_renders_atan() {
        let g = &preset_graphs()["cartpole_best_generalizer"];
        let r = super::render_expressions(g).unwrap();
        assert!(r.critic.contains("atan("), "{}", r.critic);
    }

    #[test]
    fn no_entropy_critic_has_no_logprob_term() {
        let g = &preset_graphs()["cartpole_best_performer"];
        let r = super::render_expressions(g).unwrap();
        assert!(!r.critic.contains("log π"), "{}", r.critic);
    }
}
