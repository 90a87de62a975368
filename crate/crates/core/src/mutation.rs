//! Child graphs by node replacement or edge rewiring, with consistency
//! filtering. Invalid children are data, not errors: after the retry budget
//! the last candidate is returned flagged invalid and the controller assigns
//! it failing fitness.

use crate::graph::{EnvDims, GraphNode, LossGraph, NodeId, NodeKind, ValueCategory};
use crate::rng::RngStream;
use std::collections::HashMap;

/// Batch size used for the cheap shape check after a mutation; any value
/// works since shapes only carry it symbolically.
const CHECK_BATCH: usize = 4;

#[derive(Debug, Clone)]
pub struct MutationConfig {
    /// Probability a child undergoes node mutation (vs edge mutation).
    pub p_node_mutation: f64,
    /// Distribution of how many nodes a node mutation replaces.
    pub node_counts: Vec<(usize, f64)>,
    /// Retry budget per child before giving up and returning it invalid.
    pub max_attempts: usize,
}

impl Default for MutationConfig {
    fn default() -> Self {
        MutationConfig {
            p_node_mutation: 0.5,
            node_counts: vec![(1, 0.5), (2, 0.25), (4, 0.125), (8, 0.0625), (16, 0.0625)],
            max_attempts: 50,
        }
    }
}

impl MutationConfig {
    pub fn probabilities_sum_to_one(&self) -> bool {
        let total: f64 = self.node_counts.iter().map(|(_, p)| p).sum();
        (total - 1.0).abs() < 1e-12
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MutationKind {
    Node { replaced: usize },
    Edge,
}

impl std::fmt::Display for MutationKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            MutationKind::Node { replaced } => write!(f, "node:{replaced}"),
            MutationKind::Edge => write!(f, "edge"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct MutationResult {
    pub child: LossGraph,
    pub kind: MutationKind,
    /// Whether the child passed operation-consistency checking.
    pub valid: bool,
}

/// Produce one child. With probability `p_node_mutation` a node mutation
/// replaces `k` operation nodes (k drawn once per child); otherwise a single
/// input edge of one operation/output node is rewired to an earlier producer
/// of compatible category. Pure given the stream.
pub fn mutate(
    parent: &LossGraph,
    cfg: &MutationConfig,
    dims: EnvDims,
    rng: &mut RngStream,
) -> MutationResult {
    let node_mutation = rng.coin(cfg.p_node_mutation);
    let kind = if node_mutation {
        let weights: Vec<f64> = cfg.node_counts.iter().map(|(_, p)| *p).collect();
        let k = cfg.node_counts[rng.weighted_choice(&weights)].0;
        MutationKind::Node { replaced: k }
    } else {
        MutationKind::Edge
    };
    let mut last = parent.clone();
    for _ in 0..cfg.max_attempts.max(1) {
        let candidate = match kind {
            MutationKind::Node { replaced } => replace_nodes(parent, replaced, rng),
            MutationKind::Edge => rewire_edge(parent, rng),
        };
        let Some(candidate) = candidate else { continue };
        if candidate.validate(dims, CHECK_BATCH).valid {
            return MutationResult {
                child: candidate,
                kind,
                valid: true,
            };
        }
        last = candidate;
    }
    MutationResult {
        child: last,
        kind,
        valid: false,
    }
}

/// Positions topologically before each node, split by producer category.
struct Wiring {
    /// Topological order of node ids.
    topo: Vec<NodeId>,
    /// Position of each node in `topo`.
    pos: HashMap<NodeId, usize>,
}

impl Wiring {
    fn of(graph: &LossGraph) -> Option<Self> {
        let topo = graph.topological_order().ok()?;
        let pos = topo.iter().enumerate().map(|(i, id)| (*id, i)).collect();
        Some(Wiring { topo, pos })
    }

    /// Producers of the wanted category strictly before `consumer`.
    fn candidates(
        &self,
        graph: &LossGraph,
        index: &HashMap<NodeId, usize>,
        consumer: NodeId,
        want: ValueCategory,
    ) -> Vec<NodeId> {
        let limit = self.pos[&consumer];
        self.topo[..limit]
            .iter()
            .copied()
            .filter(|id| graph.nodes[index[id]].kind.produces() == Some(want))
            .collect()
    }
}

/// Replace `k` operation nodes in place: new kind (different from the old
/// one), freshly sampled input edges of compatible category.
fn replace_nodes(parent: &LossGraph, k: usize, rng: &mut RngStream) -> Option<LossGraph> {
    let mut child = parent.clone();
    let index = child.index()?;
    let wiring = Wiring::of(&child)?;
    let op_positions: Vec<usize> = child
        .nodes
        .iter()
        .enumerate()
        .filter(|(_, n)| n.kind.is_operation())
        .map(|(i, _)| i)
        .collect();
    if op_positions.is_empty() {
        return None;
    }
    let k = k.min(op_positions.len());
    // Choose k distinct victims.
    let mut pool = op_positions;
    let mut victims = Vec::with_capacity(k);
    for _ in 0..k {
        let at = rng.below(pool.len());
        victims.push(pool.swap_remove(at));
    }
    victims.sort_unstable();
    let all_ops = NodeKind::all_operations();
    for &v in &victims {
        let old_kind = child.nodes[v].kind;
        let new_kind = loop {
            let cand = all_ops[rng.below(all_ops.len())];
            if cand != old_kind {
                break cand;
            }
        };
        let mut inputs = Vec::with_capacity(new_kind.arity());
        for want in new_kind.port_categories() {
            let candidates = wiring.candidates(&child, &index, child.nodes[v].id, want);
            if candidates.is_empty() {
                return None;
            }
            inputs.push(candidates[rng.below(candidates.len())]);
        }
        child.nodes[v] = GraphNode {
            id: child.nodes[v].id,
            kind: new_kind,
            inputs,
        };
    }
    Some(child)
}

/// Rewire one input edge of one operation/output node to a different
/// earlier producer of the same category.
fn rewire_edge(parent: &LossGraph, rng: &mut RngStream) -> Option<LossGraph> {
    let mut child = parent.clone();
    let index = child.index()?;
    let wiring = Wiring::of(&child)?;
    // All (node position, port) pairs on operation/output nodes.
    let mut ports: Vec<(usize, usize)> = Vec::new();
    for (i, node) in child.nodes.iter().enumerate() {
        if node.kind.is_operation() || node.kind.is_output() {
            for p in 0..node.inputs.len() {
                ports.push((i, p));
            }
        }
    }
    while !ports.is_empty() {
        let at = rng.below(ports.len());
        let (i, p) = ports.swap_remove(at);
        let node = &child.nodes[i];
        let want = match node.kind.port_categories().get(p) {
            Some(c) => *c,
            None => continue,
        };
        let current = node.inputs[p];
        let mut candidates = wiring.candidates(&child, &index, node.id, want);
        candidates.retain(|id| *id != current);
        if candidates.is_empty() {
            continue;
        }
        let replacement = candidates[rng.below(candidates.len())];
        child.nodes[i].inputs[p] = replacement;
        return Some(child);
    }
    None
}

/// Append random unreachable operation nodes until the graph has exactly
/// `max_nodes` nodes. Interpreted losses are unchanged.
pub fn pad_to_max(graph: &LossGraph, max_nodes: usize, rng: &mut RngStream) -> LossGraph {
    assert!(graph.node_count() <= max_nodes, "graph exceeds max_nodes");
    let mut padded = graph.clone();
    padded.max_nodes = max_nodes;
    let all_ops = NodeKind::all_operations();
    let mut next_id = padded.nodes.iter().map(|n| n.id.0).max().map_or(0, |m| m + 1);
    while padded.node_count() < max_nodes {
        // Wire pad-node inputs among existing value producers; the node
        // itself feeds nothing, so it stays dead.
        let kind = all_ops[rng.below(all_ops.len())];
        let mut inputs = Vec::with_capacity(kind.arity());
        let mut ok = true;
        for want in kind.port_categories() {
            let candidates: Vec<NodeId> = padded
                .nodes
                .iter()
                .filter(|n| n.kind.produces() == Some(want))
                .map(|n| n.id)
                .collect();
            if candidates.is_empty() {
                ok = false;
                break;
            }
            inputs.push(candidates[rng.below(candidates.len())]);
        }
        if !ok {
            continue;
        }
        padded.nodes.push(GraphNode {
            id: NodeId(next_id),
            kind,
            inputs,
        });
        next_id += 1;
    }
    padded
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::warm_start_sac;
    use crate::hash::functional_hash;

    const DIMS: EnvDims = EnvDims {
        state_dim: 3,
        action_dim: 1,
    };

    #[test]
    fn default_config_probabilities_sum_to_one() {
        assert!(MutationConfig::default().probabilities_sum_to_one());
    }

    #[test]
    fn mutation_is_deterministic_given_seed() {
        let parent = warm_start_sac();
        let cfg = MutationConfig::default();
        let a = mutate(&parent, &cfg, DIMS, &mut RngStream::from_seed(9));
        let b = mutate(&parent, &cfg, DIMS, &mut RngStream::from_seed(9));
        assert_eq!(a.child, b.child);
        assert_eq!(a.kind, b.kind);
    }

    #[test]
    fn mutation_preserves_io_nodes_and_count() {
        let parent = warm_start_sac();
        let cfg = MutationConfig::default();
        let mut rng = RngStream::from_seed(4);
        for _ in 0..200 {
            let out = mutate(&parent, &cfg, DIMS, &mut rng);
            assert_eq!(out.child.node_count(), parent.node_count());
            for (a, b) in parent.nodes.iter().zip(&out.child.nodes) {
                if a.kind.is_input() || a.kind.is_output() {
                    assert_eq!(a.kind, b.kind, "IO node kind changed");
                }
            }
            // No cycles ever.
            assert!(out.child.topological_order().is_ok());
        }
    }

    #[test]
    fn edge_mutation_changes_exactly_one_edge() {
        let parent = warm_start_sac();
        let cfg = MutationConfig {
            p_node_mutation: 0.0,
            ..MutationConfig::default()
        };
        let mut rng = RngStream::from_seed(11);
        let out = mutate(&parent, &cfg, DIMS, &mut rng);
        assert_eq!(out.kind, MutationKind::Edge);
        let mut diffs = 0;
        for (a, b) in parent.nodes.iter().zip(&out.child.nodes) {
            assert_eq!(a.kind, b.kind);
            diffs += a
                .inputs
                .iter()
                .zip(&b.inputs)
                .filter(|(x, y)| x != y)
                .count();
        }
        assert_eq!(diffs, 1);
    }

    #[test]
    fn single_node_mutation_changes_one_kind_slot() {
        let parent = warm_start_sac();
        let cfg = MutationConfig {
            p_node_mutation: 1.0,
            node_counts: vec![(1, 1.0)],
            ..MutationConfig::default()
        };
        let mut rng = RngStream::from_seed(2);
        for _ in 0..50 {
            let out = mutate(&parent, &cfg, DIMS, &mut rng);
            if !out.valid {
                continue;
            }
            let changed = parent
                .nodes
                .iter()
                .zip(&out.child.nodes)
                .filter(|(a, b)| a.kind != b.kind)
                .count();
            assert_eq!(changed, 1);
        }
    }

    #[test]
    fn padding_keeps_hash_and_prunes_back() {
        let parent = warm_start_sac();
        let digest = functional_hash(&parent);
        let mut rng = RngStream::from_seed(5);
        let padded = pad_to_max(&parent, 60, &mut rng);
        assert_eq!(padded.node_count(), 60);
        assert_eq!(functional_hash(&padded), digest);
        let pruned = padded.prune_dead_nodes().unwrap();
        assert_eq!(pruned.node_count(), parent.node_count());
        // Padding a graph already at max is the identity.
        let again = pad_to_max(&padded, 60, &mut RngStream::from_seed(6));
        assert_eq!(again, padded);
    }
}
