//! The searchable genome: a typed DAG over input, operation, and output
//! nodes encoding a policy loss and a critic loss.
//!
//! A [`LossGraph`] is a permissive container — arbitrary node/edge soups can
//! be represented — and [`LossGraph::validate`] is a total checker that
//! reports invalidity as data rather than panicking, because evolution must
//! handle broken children gracefully.

mod kinds;
pub mod presets;
pub mod render;
mod textfmt;

pub use kinds::{MulConstant, NodeKind, RoleClass, ValueCategory};
pub use presets::{preset_graphs, warm_start_sac};
pub use render::{render_expressions, RenderedLosses};

use sha2::{Digest, Sha256};
use std::collections::{BTreeSet, HashMap};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(pub u32);

impl std::fmt::Display for NodeId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "n{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GraphNode {
    pub id: NodeId,
    pub kind: NodeKind,
    /// Ordered producer references.
    pub inputs: Vec<NodeId>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossGraph {
    pub nodes: Vec<GraphNode>,
    pub max_nodes: usize,
}

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("cycle involving node {0}")]
    Cycle(NodeId),
    #[error("unknown node id {0}")]
    UnknownNode(NodeId),
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("invalid graph: {0}")]
    Invalid(String),
}

/// Environment dimensions a graph is checked against.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EnvDims {
    pub state_dim: usize,
    pub action_dim: usize,
}

/// Value a node was inferred to carry during validation.
#[derive(Debug, Clone, PartialEq)]
pub enum InferredValue {
    Tensor(Vec<usize>),
    Dist { batch: usize },
    PolicyNet,
    CriticNet,
}

/// Outcome of shape/consistency propagation over a graph.
#[derive(Debug, Clone)]
pub struct ShapeReport {
    pub per_node: HashMap<NodeId, InferredValue>,
    pub valid: bool,
    pub first_error: Option<String>,
}

impl ShapeReport {
    fn fail(per_node: HashMap<NodeId, InferredValue>, msg: String) -> Self {
        ShapeReport {
            per_node,
            valid: false,
            first_error: Some(msg),
        }
    }
}

impl LossGraph {
    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn node(&self, id: NodeId) -> Option<&GraphNode> {
        self.nodes.iter().find(|n| n.id == id)
    }

    /// Map from id to position in `nodes`; `None` when ids collide.
    pub fn index(&self) -> Option<HashMap<NodeId, usize>> {
        let mut map = HashMap::with_capacity(self.nodes.len());
        for (i, n) in self.nodes.iter().enumerate() {
            if map.insert(n.id, i).is_some() {
                return None;
            }
        }
        Some(map)
    }

    pub fn output_ids(&self) -> (Option<NodeId>, Option<NodeId>) {
        let mut policy = None;
        let mut critic = None;
        for n in &self.nodes {
            match n.kind {
                NodeKind::PolicyLoss => policy = policy.or(Some(n.id)),
                NodeKind::CriticLoss => critic = critic.or(Some(n.id)),
                _ => {}
            }
        }
        (policy, critic)
    }

    /// Deterministic topological order: among ready nodes, smallest id
    /// first. Fails with a node on a cycle.
    pub fn topological_order(&self) -> Result<Vec<NodeId>, GraphError> {
        let index = self
            .index()
            .ok_or_else(|| GraphError::Invalid("duplicate node ids".into()))?;
        let n = self.nodes.len();
        let mut indegree = vec![0usize; n];
        let mut consumers: Vec<Vec<usize>> = vec![Vec::new(); n];
        for (i, node) in self.nodes.iter().enumerate() {
            for input in &node.inputs {
                let &j = index.get(input).ok_or(GraphError::UnknownNode(*input))?;
                indegree[i] += 1;
                consumers[j].push(i);
            }
        }
        let mut ready: BTreeSet<(NodeId, usize)> = self
            .nodes
            .iter()
            .enumerate()
            .filter(|(i, _)| indegree[*i] == 0)
            .map(|(i, node)| (node.id, i))
            .collect();
        let mut order = Vec::with_capacity(n);
        while let Some(&(id, i)) = ready.iter().next() {
            ready.remove(&(id, i));
            order.push(id);
            for &c in &consumers[i] {
                indegree[c] -= 1;
                if indegree[c] == 0 {
                    ready.insert((self.nodes[c].id, c));
                }
            }
        }
        if order.len() < n {
            let stuck = self
                .nodes
                .iter()
                .enumerate()
                .find(|(i, _)| indegree[*i] > 0)
                .map(|(_, node)| node.id)
                .unwrap();
            return Err(GraphError::Cycle(stuck));
        }
        Ok(order)
    }

    /// Propagate categories and shapes from inputs to outputs. Total:
    /// invalidity is reported, never raised.
    pub fn validate(&self, dims: EnvDims, batch: usize) -> ShapeReport {
        let mut inferred: HashMap<NodeId, InferredValue> = HashMap::new();
        let Some(index) = self.index() else {
            return ShapeReport::fail(inferred, "duplicate node ids".into());
        };
        if self.nodes.len() > self.max_nodes {
            return ShapeReport::fail(
                inferred,
                format!("{} nodes exceed max_nodes {}", self.nodes.len(), self.max_nodes),
            );
        }
        // Each input kind at most once; exactly one of each output kind.
        let mut seen_inputs: Vec<NodeKind> = Vec::new();
        let mut policy_outs = 0usize;
        let mut critic_outs = 0usize;
        for node in &self.nodes {
            match node.kind.role() {
                RoleClass::Input => {
                    if seen_inputs.contains(&node.kind) {
                        return ShapeReport::fail(
                            inferred,
                            format!("input kind {} appears more than once", node.kind.name()),
                        );
                    }
                    seen_inputs.push(node.kind);
                }
                RoleClass::Output => match node.kind {
                    NodeKind::PolicyLoss => policy_outs += 1,
                    _ => critic_outs += 1,
                },
                RoleClass::Operation => {}
            }
            for input in &node.inputs {
                if !index.contains_key(input) {
                    return ShapeReport::fail(
                        inferred,
                        format!("node {} references missing node {}", node.id, input),
                    );
                }
            }
        }
        if policy_outs != 1 || critic_outs != 1 {
            return ShapeReport::fail(
                inferred,
                format!(
                    "graph must have exactly one PolicyLoss and one CriticLoss (got {policy_outs} and {critic_outs})"
                ),
            );
        }
        let order = match self.topological_order() {
            Ok(order) => order,
            Err(e) => return ShapeReport::fail(inferred, e.to_string()),
        };
        for id in order {
            let node = &self.nodes[index[&id]];
            match infer_node(node, &inferred, dims, batch) {
                Ok(Some(value)) => {
                    inferred.insert(id, value);
                }
                Ok(None) => {}
                Err(msg) => {
                    return ShapeReport::fail(inferred, format!("node {id} ({}): {msg}", node.kind.name()));
                }
            }
        }
        ShapeReport {
            per_node: inferred,
            valid: true,
            first_error: None,
        }
    }

    /// Ids of nodes on a path to either loss output (includes the outputs).
    pub fn live_set(&self) -> Result<BTreeSet<NodeId>, GraphError> {
        let index = self
            .index()
            .ok_or_else(|| GraphError::Invalid("duplicate node ids".into()))?;
        let mut live: BTreeSet<NodeId> = BTreeSet::new();
        let mut stack: Vec<NodeId> = self
            .nodes
            .iter()
            .filter(|n| n.kind.is_output())
            .map(|n| n.id)
            .collect();
        while let Some(id) = stack.pop() {
            if !live.insert(id) {
                continue;
            }
            let node = &self.nodes[*index.get(&id).ok_or(GraphError::UnknownNode(id))?];
            for input in &node.inputs {
                stack.push(*input);
            }
        }
        Ok(live)
    }

    /// Drop nodes unreachable from the outputs, renumbering ids densely
    /// while preserving node order. Interpreted losses are unchanged.
    pub fn prune_dead_nodes(&self) -> Result<LossGraph, GraphError> {
        let live = self.live_set()?;
        let survivors: Vec<&GraphNode> = self.nodes.iter().filter(|n| live.contains(&n.id)).collect();
        let remap: HashMap<NodeId, NodeId> = survivors
            .iter()
            .enumerate()
            .map(|(i, n)| (n.id, NodeId(i as u32)))
            .collect();
        let nodes = survivors
            .iter()
            .map(|n| GraphNode {
                id: remap[&n.id],
                kind: n.kind,
                inputs: n.inputs.iter().map(|i| remap[i]).collect(),
            })
            .collect();
        Ok(LossGraph {
            nodes,
            max_nodes: self.max_nodes,
        })
    }

    /// Structural fingerprints: a Merkle digest of each node's kind and its
    /// inputs' fingerprints, independent of raw node ids. Identical
    /// subgraphs share a fingerprint.
    pub fn fingerprints(&self) -> Result<HashMap<NodeId, [u8; 16]>, GraphError> {
        let index = self
            .index()
            .ok_or_else(|| GraphError::Invalid("duplicate node ids".into()))?;
        let order = self.topological_order()?;
        let mut fps: HashMap<NodeId, [u8; 16]> = HashMap::with_capacity(order.len());
        for id in order {
            let node = &self.nodes[index[&id]];
            let mut h = Sha256::new();
            h.update(node.kind.name().as_bytes());
            if let NodeKind::MulConst(c) = node.kind {
                h.update(c.token().as_bytes());
            }
            for input in &node.inputs {
                h.update(fps[input]);
            }
            let digest = h.finalize();
            let mut fp = [0u8; 16];
            fp.copy_from_slice(&digest[..16]);
            fps.insert(id, fp);
        }
        Ok(fps)
    }

    /// Pruned graph relabeled into a canonical id order (by fingerprint
    /// among ready nodes), so structurally equal graphs serialize equally.
    pub fn canonical_form(&self) -> Result<LossGraph, GraphError> {
        let pruned = self.prune_dead_nodes()?;
        let fps = pruned.fingerprints()?;
        let index = pruned.index().unwrap();
        let n = pruned.nodes.len();
        let mut indegree = vec![0usize; n];
        let mut consumers: Vec<Vec<usize>> = vec![Vec::new(); n];
        for (i, node) in pruned.nodes.iter().enumerate() {
            for input in &node.inputs {
                indegree[i] += 1;
                consumers[index[input]].push(i);
            }
        }
        let mut ready: BTreeSet<([u8; 16], NodeId, usize)> = pruned
            .nodes
            .iter()
            .enumerate()
            .filter(|(i, _)| indegree[*i] == 0)
            .map(|(i, node)| (fps[&node.id], node.id, i))
            .collect();
        let mut order: Vec<usize> = Vec::with_capacity(n);
        while let Some(&(fp, id, i)) = ready.iter().next() {
            ready.remove(&(fp, id, i));
            order.push(i);
            for &c in &consumers[i] {
                indegree[c] -= 1;
                if indegree[c] == 0 {
                    ready.insert((fps[&pruned.nodes[c].id], pruned.nodes[c].id, c));
                }
            }
        }
        let remap: HashMap<NodeId, NodeId> = order
            .iter()
            .enumerate()
            .map(|(new, &i)| (pruned.nodes[i].id, NodeId(new as u32)))
            .collect();
        let nodes = order
            .iter()
            .map(|&i| {
                let node = &pruned.nodes[i];
                GraphNode {
                    id: remap[&node.id],
                    kind: node.kind,
                    inputs: node.inputs.iter().map(|x| remap[x]).collect(),
                }
            })
            .collect();
        Ok(LossGraph {
            nodes,
            max_nodes: self.max_nodes,
        })
    }

    /// Relabel node ids (test support and canonicalization). The mapping
    /// must be a bijection over the graph's ids.
    pub fn relabel(&self, map: &HashMap<NodeId, NodeId>) -> LossGraph {
        LossGraph {
            nodes: self
                .nodes
                .iter()
                .map(|n| GraphNode {
                    id: map[&n.id],
                    kind: n.kind,
                    inputs: n.inputs.iter().map(|i| map[i]).collect(),
                })
                .collect(),
            max_nodes: self.max_nodes,
        }
    }

    pub fn serialize(&self) -> String {
        textfmt::serialize(self, &[])
    }

    pub fn serialize_with_meta(&self, meta: &[(String, String)]) -> String {
        textfmt::serialize(self, meta)
    }

    pub fn parse(text: &str) -> Result<(LossGraph, Vec<(String, String)>), GraphError> {
        textfmt::parse(text)
    }
}

fn infer_node(
    node: &GraphNode,
    inferred: &HashMap<NodeId, InferredValue>,
    dims: EnvDims,
    batch: usize,
) -> Result<Option<InferredValue>, String> {
    use NodeKind::*;
    let kind = node.kind;
    if node.inputs.len() != kind.arity() {
        return Err(format!(
            "expects {} inputs, got {}",
            kind.arity(),
            node.inputs.len()
        ));
    }
    // Category check against the port signature.
    let ports = kind.port_categories();
    for (port, input) in ports.iter().zip(&node.inputs) {
        let value = inferred
            .get(input)
            .ok_or_else(|| format!("input {input} carries no value (loss outputs are sinks)"))?;
        let ok = matches!(
            (port, value),
            (ValueCategory::Tensor, InferredValue::Tensor(_))
                | (ValueCategory::Dist, InferredValue::Dist { .. })
                | (ValueCategory::PolicyNet, InferredValue::PolicyNet)
                | (ValueCategory::CriticNet, InferredValue::CriticNet)
        );
        if !ok {
            return Err(format!("input {input} has the wrong category for {:?} port", port));
        }
    }
    let tensor_shape = |i: usize| -> Vec<usize> {
        match &inferred[&node.inputs[i]] {
            InferredValue::Tensor(s) => s.clone(),
            _ => unreachable!(),
        }
    };
    let value = match kind {
        States | NextStates => InferredValue::Tensor(vec![batch, dims.state_dim]),
        Actions => InferredValue::Tensor(vec![batch, dims.action_dim]),
        Rewards | Discount => InferredValue::Tensor(vec![batch]),
        PolicyNet => InferredValue::PolicyNet,
        CriticNet1 | CriticNet2 | TargetCriticNet1 | TargetCriticNet2 => InferredValue::CriticNet,
        PolicyLoss | CriticLoss => {
            let s = tensor_shape(0);
            if !s.is_empty() {
                return Err(format!("loss output must be scalar, got shape {s:?}"));
            }
            return Ok(None);
        }
        Add2 | Add3 | Add4 | Mul2 | Mul3 | Sub | DivEps | MinElem | MaxElem | SquaredDiff => {
            let mut common: Option<Vec<usize>> = None;
            for i in 0..node.inputs.len() {
                let s = tensor_shape(i);
                if s.is_empty() {
                    continue;
                }
                match &common {
                    None => common = Some(s),
                    Some(c) if *c == s => {}
                    Some(c) => {
                        return Err(format!("operand shapes {c:?} and {s:?} are incompatible"))
                    }
                }
            }
            InferredValue::Tensor(common.unwrap_or_default())
        }
        DiscountedCumSum => {
            let x = tensor_shape(0);
            let g = tensor_shape(1);
            if x.is_empty() {
                return Err("needs rank >= 1".into());
            }
            if !(g.is_empty() || g == x) {
                return Err(format!("discount shape {g:?} incompatible with {x:?}"));
            }
            InferredValue::Tensor(x)
        }
        CumSum => {
            let x = tensor_shape(0);
            if x.is_empty() {
                return Err("needs rank >= 1".into());
            }
            InferredValue::Tensor(x)
        }
        MeanLast | SumLast | StdLast | MinLast | MaxLast => {
            let x = tensor_shape(0);
            if x.is_empty() {
                return Err("needs rank >= 1".into());
            }
            InferredValue::Tensor(x[..x.len() - 1].to_vec())
        }
        MeanAll | SumAll | StdAll => InferredValue::Tensor(vec![]),
        StopGradient | MulConst(_) | Clamp | Abs | Square | Log | Exp | Sin | Cos | Tan | Atan => {
            InferredValue::Tensor(tensor_shape(0))
        }
        DistFromState => {
            let s = tensor_shape(1);
            if s != [batch, dims.state_dim] {
                return Err(format!(
                    "state input must be [batch, state_dim] = [{batch}, {}], got {s:?}",
                    dims.state_dim
                ));
            }
            InferredValue::Dist { batch }
        }
        DistSample => InferredValue::Tensor(vec![batch, dims.action_dim]),
        DistLogProb => {
            let a = tensor_shape(1);
            if a != [batch, dims.action_dim] {
                return Err(format!(
                    "action input must be [batch, action_dim] = [{batch}, {}], got {a:?}",
                    dims.action_dim
                ));
            }
            InferredValue::Tensor(vec![batch])
        }
        CriticValue => {
            let s = tensor_shape(1);
            let a = tensor_shape(2);
            if s != [batch, dims.state_dim] || a != [batch, dims.action_dim] {
                return Err(format!(
                    "critic inputs must be [batch, state_dim] and [batch, action_dim], got {s:?} and {a:?}"
                ));
            }
            InferredValue::Tensor(vec![batch])
        }
    };
    Ok(Some(value))
}

/// Decimal exponent of the `(N*K*(K-1)/2)^K` bound on the number of graphs
/// with `N` operation kinds and `K` nodes.
pub fn search_space_upper_bound(num_op_kinds: u64, max_nodes: u64) -> f64 {
    let n = num_op_kinds as f64;
    let k = max_nodes as f64;
    k * (n * k * (k - 1.0) / 2.0).log10()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chain_graph() -> LossGraph {
        // rewards -> MeanAll -> both outputs (degenerate but valid).
        let nodes = vec![
            GraphNode { id: NodeId(0), kind: NodeKind::Rewards, inputs: vec![] },
            GraphNode { id: NodeId(1), kind: NodeKind::MeanAll, inputs: vec![NodeId(0)] },
            GraphNode { id: NodeId(2), kind: NodeKind::PolicyLoss, inputs: vec![NodeId(1)] },
            GraphNode { id: NodeId(3), kind: NodeKind::CriticLoss, inputs: vec![NodeId(1)] },
        ];
        LossGraph { nodes, max_nodes: 60 }
    }

    #[test]
    fn topo_order_of_chain() {
        let g = chain_graph();
        let order = g.topological_order().unwrap();
        assert_eq!(order, vec![NodeId(0), NodeId(1), NodeId(2), NodeId(3)]);
    }

    #[test]
    fn cycle_is_reported() {
        let mut g = chain_graph();
        g.nodes[1].inputs = vec![NodeId(1)];
        assert!(matches!(g.topological_order(), Err(GraphError::Cycle(_))));
        let report = g.validate(EnvDims { state_dim: 3, action_dim: 1 }, 4);
        assert!(!report.valid);
    }

    #[test]
    fn arity_violation_is_invalid_not_fatal() {
        let mut g = chain_graph();
        g.nodes[1].kind = NodeKind::Add2; // one operand only
        let report = g.validate(EnvDims { state_dim: 3, action_dim: 1 }, 4);
        assert!(!report.valid);
        assert!(report.first_error.unwrap().contains("expects 2 inputs"));
    }

    #[test]
    fn nonscalar_output_is_invalid() {
        let nodes = vec![
            GraphNode { id: NodeId(0), kind: NodeKind::Rewards, inputs: vec![] },
            GraphNode { id: NodeId(1), kind: NodeKind::PolicyLoss, inputs: vec![NodeId(0)] },
            GraphNode { id: NodeId(2), kind: NodeKind::MeanAll, inputs: vec![NodeId(0)] },
            GraphNode { id: NodeId(3), kind: NodeKind::CriticLoss, inputs: vec![NodeId(2)] },
        ];
        let g = LossGraph { nodes, max_nodes: 60 };
        let report = g.validate(EnvDims { state_dim: 3, action_dim: 1 }, 4);
        assert!(!report.valid);
        assert!(report.first_error.unwrap().contains("scalar"));
    }

    #[test]
    fn prune_removes_disconnected_nodes() {
        let mut g = chain_graph();
        g.nodes.push(GraphNode {
            id: NodeId(9),
            kind: NodeKind::States,
            inputs: vec![],
        });
        let pruned = g.prune_dead_nodes().unwrap();
        assert_eq!(pruned.node_count(), 4);
        // Already-minimal graph is untouched.
        let again = pruned.prune_dead_nodes().unwrap();
        assert_eq!(again, pruned);
    }

    #[test]
    fn fingerprints_ignore_ids() {
        let g = chain_graph();
        let map: HashMap<NodeId, NodeId> = [(0, 7), (1, 3), (2, 11), (3, 0)]
            .into_iter()
            .map(|(a, b)| (NodeId(a), NodeId(b)))
            .collect();
        let h = g.relabel(&map);
        let fg = g.fingerprints().unwrap();
        let fh = h.fingerprints().unwrap();
        assert_eq!(fg[&NodeId(1)], fh[&NodeId(3)]);
        assert_eq!(fg[&NodeId(2)], fh[&NodeId(11)]);
    }

    #[test]
    fn upper_bound_matches_known_exponents() {
        assert!((search_space_upper_bound(33, 60) - 286.0).abs() < 1.0);
        assert!((search_space_upper_bound(33, 80) - 401.0).abs() < 1.0);
        assert_eq!(search_space_upper_bound(1, 2), 0.0);
    }

    #[test]
    fn upper_bound_is_monotone() {
        let mut prev = search_space_upper_bound(1, 3);
        for n in 2..40 {
            let b = search_space_upper_bound(n, 3);
            assert!(b > prev);
            prev = b;
        }
        let mut prev = search_space_upper_bound(33, 3);
        for k in 4..100 {
            let b = search_space_upper_bound(33, k);
            assert!(b > prev);
            prev = b;
        }
    }
}
