//! Functional hashing: a graph is identified by the gradient of its losses
//! on fixed synthetic inputs, quantized to absorb floating-point noise.
//! Behaviorally identical graphs (under id permutation or dead-code edits)
//! collide on purpose; that is what makes the fitness cache sound.

use crate::exec::{init_networks, synthetic_batch, PreparedGraph};
use crate::graph::{EnvDims, LossGraph};
use sha2::{Digest, Sha256};

/// Probe dimensions: the hashing batch has 16 rows.
pub const PROBE_DIMS: EnvDims = EnvDims {
    state_dim: 3,
    action_dim: 1,
};
pub const PROBE_BATCH: usize = 16;
pub const PROBE_GAMMA: f64 = 0.99;
/// Hidden widths of the synthetic probe networks.
pub const PROBE_HIDDEN: [usize; 2] = [16, 16];
/// Gradient entries are rounded to the nearest multiple of this scale.
pub const QUANT_SCALE: f64 = 1e-6;

const PROBE_SEED: u64 = 0x5eed_1e55_c0de_cafe;
const NOISE_SEED: u64 = 0x0b5e_55ed_0000_0001;

const TAG_GRADIENT: u8 = 1;
const TAG_STRUCTURAL: u8 = 0;

/// Digest of a graph's quantized gradient signature (or of its canonical
/// structure when the probe cannot be evaluated).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct HashDigest {
    pub bytes: [u8; 32],
    /// Quantization scale the signature used; 0 for structural fallbacks.
    pub quant_bits: u64,
}

impl HashDigest {
    pub fn hex(&self) -> String {
        self.bytes.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn short_hex(&self) -> String {
        self.bytes[..8].iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn from_hex(s: &str) -> Option<Self> {
        if s.len() != 64 {
            return None;
        }
        let mut bytes = [0u8; 32];
        for (i, chunk) in s.as_bytes().chunks(2).enumerate() {
            let hi = (chunk[0] as char).to_digit(16)?;
            let lo = (chunk[1] as char).to_digit(16)?;
            bytes[i] = (hi * 16 + lo) as u8;
        }
        Some(HashDigest {
            bytes,
            quant_bits: QUANT_SCALE.to_bits(),
        })
    }
}

impl std::fmt::Display for HashDigest {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.hex())
    }
}

/// Gradient signature on the synthetic probe: every parameter gradient of
/// the policy and both critics, flattened in canonical order. `None` when
/// the graph is invalid on the probe dims or evaluation goes non-finite.
pub fn gradient_signature(graph: &LossGraph) -> Option<Vec<f64>> {
    let report = graph.validate(PROBE_DIMS, PROBE_BATCH);
    if !report.valid {
        return None;
    }
    let prepared = PreparedGraph::new(graph).ok()?;
    let batch = synthetic_batch(PROBE_DIMS, PROBE_BATCH, PROBE_GAMMA, PROBE_SEED);
    let nets = init_networks(PROBE_DIMS, &PROBE_HIDDEN, PROBE_SEED);
    let grads = prepared.gradients(&batch, &nets, NOISE_SEED).ok()?;
    if !grads.all_finite() {
        return None;
    }
    let mut signature = Vec::new();
    for t in grads.policy.iter().chain(grads.critics.iter().flatten()) {
        signature.extend_from_slice(t.data());
    }
    Some(signature)
}

/// Quantize a signature entry to an integer number of `QUANT_SCALE` steps.
pub fn quantize(v: f64) -> i64 {
    let steps = (v / QUANT_SCALE).round();
    // Saturate instead of wrapping; gradients this large are degenerate
    // anyway and the bucket boundary does not matter.
    if steps >= i64::MAX as f64 {
        i64::MAX
    } else if steps <= i64::MIN as f64 {
        i64::MIN
    } else {
        steps as i64
    }
}

/// Hash a graph by its gradient signature on the synthetic probe; falls
/// back to a digest of the canonical serialized form when the probe cannot
/// run. Invariant under node-id permutation and dead-node edits.
pub fn functional_hash(graph: &LossGraph) -> HashDigest {
    match gradient_signature(graph) {
        Some(signature) => {
            let mut h = Sha256::new();
            h.update([TAG_GRADIENT]);
            for v in signature {
                h.update(quantize(v).to_le_bytes());
            }
            finish(h)
        }
        None => {
            let canonical = graph
                .canonical_form()
                .map(|g| g.serialize())
                .unwrap_or_else(|e| format!("unhashable: {e}"));
            let mut h = Sha256::new();
            h.update([TAG_STRUCTURAL]);
            h.update(canonical.as_bytes());
            finish(h)
        }
    }
}

fn finish(h: Sha256) -> HashDigest {
    let digest = h.finalize();
    let mut bytes = [0u8; 32];
    bytes.copy_from_slice(&digest);
    HashDigest {
        bytes,
        quant_bits: QUANT_SCALE.to_bits(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{warm_start_sac, NodeId};
    use std::collections::HashMap;

    #[test]
    fn hashing_is_deterministic() {
        let g = warm_start_sac();
        assert_eq!(functional_hash(&g), functional_hash(&g));
    }

    #[test]
    fn id_permutation_preserves_digest() {
        let g = warm_start_sac();
        let n = g.node_count() as u32;
        let map: HashMap<NodeId, NodeId> =
            (0..n).map(|i| (NodeId(i), NodeId((i * 7 + 3) % n))).collect();
        // The map above must be a bijection for n = 33 (gcd(7, 33) = 1).
        let h = g.relabel(&map);
        assert_eq!(functional_hash(&g), functional_hash(&h));
    }

    #[test]
    fn dead_node_preserves_digest() {
        let mut g = warm_start_sac();
        let digest = functional_hash(&g);
        g.nodes.push(crate::graph::GraphNode {
            id: NodeId(33),
            kind: crate::graph::NodeKind::Exp,
            inputs: vec![NodeId(8)],
        });
        assert_eq!(functional_hash(&g), digest);
    }

    #[test]
    fn different_structure_changes_digest() {
        let g = warm_start_sac();
        let mut h = g.clone();
        // Rewire the policy-loss subtraction into an addition.
        let idx = h.nodes.iter().position(|n| n.kind == crate::graph::NodeKind::Sub).unwrap();
        h.nodes[idx].kind = crate::graph::NodeKind::Add2;
        assert_ne!(functional_hash(&g), functional_hash(&h));
    }

    #[test]
    fn hex_round_trip() {
        let d = functional_hash(&warm_start_sac());
        assert_eq!(HashDigest::from_hex(&d.hex()).unwrap().bytes, d.bytes);
    }
}
