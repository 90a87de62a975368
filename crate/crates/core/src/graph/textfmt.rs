//! Line-oriented graph file format.
//!
//! ```text
//! lossgraph v1
//! max_nodes 60
//! nodes 4
//! 0 Rewards
//! 1 MulConst 0.5
//! 2 PolicyLoss
//! 3 CriticLoss
//! edges 3
//! 1: 0
//! 2: 1
//! 3: 1
//! meta 1
//! origin pendulum
//! end
//! ```
//!
//! Serialization is deterministic, so byte-exact round-trips hold for any
//! structurally equal graph.

use super::{GraphError, GraphNode, LossGraph, NodeId, NodeKind};

pub const FORMAT_VERSION: u32 = 1;

pub fn serialize(graph: &LossGraph, meta: &[(String, String)]) -> String {
    let mut out = String::new();
    out.push_str(&format!("lossgraph v{FORMAT_VERSION}\n"));
    out.push_str(&format!("max_nodes {}\n", graph.max_nodes));
    out.push_str(&format!("nodes {}\n", graph.nodes.len()));
    for node in &graph.nodes {
        match node.kind {
            NodeKind::MulConst(c) => {
                out.push_str(&format!("{} MulConst {}\n", node.id.0, c.token()))
            }
            kind => out.push_str(&format!("{} {}\n", node.id.0, kind.name())),
        }
    }
    let with_edges: Vec<&GraphNode> = graph.nodes.iter().filter(|n| !n.inputs.is_empty()).collect();
    out.push_str(&format!("edges {}\n", with_edges.len()));
    for node in with_edges {
        let inputs: Vec<String> = node.inputs.iter().map(|i| i.0.to_string()).collect();
        out.push_str(&format!("{}: {}\n", node.id.0, inputs.join(" ")));
    }
    if !meta.is_empty() {
        out.push_str(&format!("meta {}\n", meta.len()));
        for (k, v) in meta {
            out.push_str(&format!("{k} {v}\n"));
        }
    }
    out.push_str("end\n");
    out
}

struct Lines<'a> {
    iter: std::iter::Enumerate<std::str::Lines<'a>>,
}

impl<'a> Lines<'a> {
    fn next(&mut self) -> Result<(usize, &'a str), GraphError> {
        for (i, line) in self.iter.by_ref() {
            let line = line.trim();
            if !line.is_empty() {
                return Ok((i + 1, line));
            }
        }
        Err(GraphError::Parse {
            line: 0,
            msg: "unexpected end of document".into(),
        })
    }
}

fn err(line: usize, msg: impl Into<String>) -> GraphError {
    GraphError::Parse {
        line,
        msg: msg.into(),
    }
}

fn parse_count(line: usize, text: &str, keyword: &str) -> Result<usize, GraphError> {
    let rest = text
        .strip_prefix(keyword)
        .ok_or_else(|| err(line, format!("expected `{keyword} <count>`, got `{text}`")))?;
    rest.trim()
        .parse::<usize>()
        .map_err(|_| err(line, format!("bad count in `{text}`")))
}

pub fn parse(text: &str) -> Result<(LossGraph, Vec<(String, String)>), GraphError> {
    let mut lines = Lines {
        iter: text.lines().enumerate(),
    };
    let (ln, header) = lines.next()?;
    let version = header
        .strip_prefix("lossgraph v")
        .ok_or_else(|| err(ln, "expected `lossgraph v<version>` header"))?;
    let version: u32 = version
        .trim()
        .parse()
        .map_err(|_| err(ln, "bad version number"))?;
    if version != FORMAT_VERSION {
        return Err(err(ln, format!("unsupported format version {version}")));
    }
    let (ln, line) = lines.next()?;
    let max_nodes = parse_count(ln, line, "max_nodes")?;
    let (ln, line) = lines.next()?;
    let node_count = parse_count(ln, line, "nodes")?;

    let mut nodes: Vec<GraphNode> = Vec::with_capacity(node_count);
    for _ in 0..node_count {
        let (ln, line) = lines.next()?;
        let mut parts = line.split_whitespace();
        let id: u32 = parts
            .next()
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| err(ln, format!("bad node id in `{line}`")))?;
        let name = parts
            .next()
            .ok_or_else(|| err(ln, format!("missing node kind in `{line}`")))?;
        let payload = parts.next();
        if parts.next().is_some() {
            return Err(err(ln, format!("trailing tokens in `{line}`")));
        }
        let kind = NodeKind::from_name(name, payload)
            .ok_or_else(|| err(ln, format!("unknown node kind `{name}`")))?;
        nodes.push(GraphNode {
            id: NodeId(id),
            kind,
            inputs: vec![],
        });
    }

    let (ln, line) = lines.next()?;
    let edge_count = parse_count(ln, line, "edges")?;
    for _ in 0..edge_count {
        let (ln, line) = lines.next()?;
        let (head, rest) = line
            .split_once(':')
            .ok_or_else(|| err(ln, format!("expected `<id>: <inputs>`, got `{line}`")))?;
        let id: u32 = head
            .trim()
            .parse()
            .map_err(|_| err(ln, format!("bad consumer id in `{line}`")))?;
        let mut inputs = Vec::new();
        for tok in rest.split_whitespace() {
            let p: u32 = tok
                .parse()
                .map_err(|_| err(ln, format!("bad producer id `{tok}`")))?;
            inputs.push(NodeId(p));
        }
        let node = nodes
            .iter_mut()
            .find(|n| n.id.0 == id)
            .ok_or_else(|| GraphError::Invalid(format!("edge list names absent node n{id}")))?;
        node.inputs = inputs;
    }

    let (_, line) = lines.next()?;
    let mut meta = Vec::new();
    let mut line = line.to_string();
    if let Some(rest) = line.strip_prefix("meta ") {
        let count: usize = rest
            .trim()
            .parse()
            .map_err(|_| GraphError::Invalid("bad meta count".into()))?;
        for _ in 0..count {
            let (ln, l) = lines.next()?;
            let (k, v) = l
                .split_once(' ')
                .ok_or_else(|| err(ln, format!("expected `key value`, got `{l}`")))?;
            meta.push((k.to_string(), v.trim().to_string()));
        }
        let (_, l) = lines.next()?;
        line = l.to_string();
    }
    if line != "end" {
        return Err(GraphError::Invalid(format!(
            "expected `end`, got `{line}`"
        )));
    }

    let graph = LossGraph { nodes, max_nodes };
    // Semantic check: dangling edges are a validation error, not a parse one.
    if let Some(index) = graph.index() {
        for node in &graph.nodes {
            for input in &node.inputs {
                if !index.contains_key(input) {
                    return Err(GraphError::Invalid(format!(
                        "node {} references absent node {}",
                        node.id, input
                    )));
                }
            }
        }
    } else {
        return Err(GraphError::Invalid("duplicate node ids".into()));
    }
    Ok((graph, meta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::warm_start_sac;

    #[test]
    fn round_trip_is_identity() {
        let g = warm_start_sac();
        let text = serialize(&g, &[("origin".into(), "warm start".into())]);
        let (parsed, meta) = parse(&text).unwrap();
        assert_eq!(parsed, g);
        assert_eq!(meta, vec![("origin".to_string(), "warm start".to_string())]);
        // Re-serialization is byte-identical.
        assert_eq!(serialize(&parsed, &meta), text);
    }

    #[test]
    fn unknown_kind_is_named_in_the_error() {
        let text = "lossgraph v1\nmax_nodes 60\nnodes 1\n0 Foo\nedges 0\nend\n";
        let e = parse(text).unwrap_err();
        assert!(e.to_string().contains("Foo"), "{e}");
    }

    #[test]
    fn dangling_edge_is_a_validation_error() {
        let text = "lossgraph v1\nmax_nodes 60\nnodes 2\n0 Rewards\n1 MeanAll\nedges 1\n1: 5\nend\n";
        let e = parse(text).unwrap_err();
        assert!(matches!(e, GraphError::Invalid(_)), "{e}");
    }

    #[test]
    fn parse_error_carries_line_number() {
        let text = "lossgraph v1\nmax_nodes 60\nnodes 1\nnot-a-node\nedges 0\nend\n";
        match parse(text).unwrap_err() {
            GraphError::Parse { line, .. } => assert_eq!(line, 4),
            other => panic!("expected parse error, got {other}"),
        }
    }
}
