//! Streaming dataflow graph: primitives connected by typed channels.

use crate::frontend::{MapFn, ReduceOp};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fmt::Write as _;
use thiserror::Error;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("graph parse error: {0}")]
    ParseError(String),
    #[error("graph format version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("channel {channel} carries {found} into a port expecting {expected}")]
    TypeMismatch { channel: usize, expected: StreamKind, found: StreamKind },
    #[error("node {0} is not reachable from the root")]
    Unreachable(String),
    #[error("port {port} of node {node} is not connected")]
    DanglingPort { node: String, port: usize },
    #[error("port {port} of node {node} has more than one producer")]
    MultipleDrivers { node: String, port: usize },
    #[error("channel {0} refers to a missing node or port")]
    BadEndpoint(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum StreamKind {
    Crd,
    Ref,
    Val,
}

impl fmt::Display for StreamKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StreamKind::Crd => "crd",
            StreamKind::Ref => "ref",
            StreamKind::Val => "val",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AluOp {
    Add,
    Sub,
    Mul,
    Div,
}

impl AluOp {
    pub fn apply(self, a: f64, b: f64) -> f64 {
        match self {
            AluOp::Add => a + b,
            AluOp::Sub => a - b,
            AluOp::Mul => a * b,
            AluOp::Div => {
                if b == 0.0 {
                    0.0
                } else {
                    a / b
                }
            }
        }
    }

    pub fn symbol(self) -> &'static str {
        match self {
            AluOp::Add => "add",
            AluOp::Sub => "sub",
            AluOp::Mul => "mul",
            AluOp::Div => "div",
        }
    }
}

/// How a scanner walks one mode.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum ScanKind {
    /// Walk a stored level of the tensor.
    Level { level: usize },
    /// Walk a logical mode of an all-dense tensor: ref = parent + crd * stride.
    Strided { extent: usize, stride: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Primitive {
    Root,
    LevelScanner { tensor: String, scan: ScanKind },
    /// Coordinate merge; payload counts per side ride along with each crd.
    Intersect { left: usize, right: usize },
    Union { left: usize, right: usize },
    Repeat,
    /// Every coordinate below `extent`, once per parent token: the full
    /// iteration space of a var a union operand is broadcast over.
    Range { extent: usize },
    ValArray { tensor: String, block_dims: Vec<String> },
    Alu { op: AluOp },
    Map { func: MapFn },
    Reduce { op: ReduceOp, block_dim: Option<String> },
    /// Reduces over the second-innermost level, merging inner fibers by crd.
    Red1 { op: ReduceOp, block_dim: Option<String> },
    /// Drops zero values with their crds.
    ValDrop,
    /// Drops crds whose next-level fiber is empty, along with their subtrees.
    CoordDrop { inner: usize },
    LevelWriter { tensor: String, level: usize },
    ValWriter { tensor: String },
    /// Keeps the elements of one lane: those whose coordinate is `lane` mod `lanes`.
    /// All inputs are lockstep streams of the same depth.
    Parallelizer { var: String, lanes: usize, lane: usize, streams: usize },
    /// Merges lane outputs by smallest head coordinate. Streams shallower than
    /// `cut` are identical across lanes; deeper ones carry per-element subtrees.
    Serializer { lanes: usize, depths: Vec<u8>, cut: u8 },
}

impl Primitive {
    /// Short class name used in reports and goldens.
    pub fn class(&self) -> &'static str {
        match self {
            Primitive::Root => "Root",
            Primitive::LevelScanner { .. } => "LS",
            Primitive::Intersect { .. } => "Intersect",
            Primitive::Union { .. } => "Union",
            Primitive::Repeat => "Rep",
            Primitive::Range { .. } => "Range",
            Primitive::ValArray { .. } => "Val",
            Primitive::Alu { .. } => "ALU",
            Primitive::Map { .. } => "Map",
            Primitive::Reduce { .. } => "Reduce",
            Primitive::Red1 { .. } => "Red1",
            Primitive::ValDrop => "CD",
            Primitive::CoordDrop { .. } => "CD",
            Primitive::LevelWriter { .. } => "LW",
            Primitive::ValWriter { .. } => "ValWriter",
            Primitive::Parallelizer { .. } => "Par",
            Primitive::Serializer { .. } => "Ser",
        }
    }

    /// Expected kind per input port; `None` accepts any payload.
    pub fn input_kinds(&self) -> Vec<Option<StreamKind>> {
        use StreamKind::*;
        match self {
            Primitive::Root => vec![],
            Primitive::LevelScanner { .. } => vec![Some(Ref)],
            Primitive::Intersect { left, right } | Primitive::Union { left, right } => {
                let mut v = vec![Some(Crd)];
                v.extend(std::iter::repeat_n(None, *left));
                v.push(Some(Crd));
                v.extend(std::iter::repeat_n(None, *right));
                v
            }
            Primitive::Repeat => vec![None, Some(Crd)],
            Primitive::Range { .. } => vec![None],
            Primitive::ValArray { .. } => vec![Some(Ref)],
            Primitive::Alu { .. } => vec![Some(Val), Some(Val)],
            Primitive::Map { .. } | Primitive::Reduce { .. } => vec![Some(Val)],
            Primitive::Red1 { .. } => vec![Some(Crd), Some(Val)],
            Primitive::ValDrop => vec![Some(Crd), Some(Val)],
            Primitive::CoordDrop { inner } => {
                let mut v = vec![Some(Crd); *inner];
                v.push(Some(Val));
                v.insert(0, Some(Crd));
                v
            }
            Primitive::LevelWriter { .. } => vec![Some(Crd)],
            Primitive::ValWriter { .. } => vec![Some(Val)],
            Primitive::Parallelizer { streams, .. } => vec![None; *streams],
            Primitive::Serializer { lanes, depths, .. } => vec![None; lanes * depths.len()],
        }
    }

    pub fn output_kinds(&self) -> Vec<Option<StreamKind>> {
        use StreamKind::*;
        match self {
            Primitive::Root => vec![Some(Ref)],
            Primitive::LevelScanner { .. } => vec![Some(Crd), Some(Ref)],
            Primitive::Intersect { left, right } | Primitive::Union { left, right } => {
                let mut v = vec![Some(Crd)];
                v.extend(std::iter::repeat_n(None, left + right));
                v
            }
            Primitive::Repeat => vec![None],
            Primitive::Range { .. } => vec![Some(Crd)],
            Primitive::ValArray { .. } | Primitive::Alu { .. } | Primitive::Map { .. } | Primitive::Reduce { .. } => vec![Some(Val)],
            Primitive::Red1 { .. } | Primitive::ValDrop => vec![Some(Crd), Some(Val)],
            Primitive::CoordDrop { .. } => self.input_kinds(),
            Primitive::LevelWriter { .. } | Primitive::ValWriter { .. } => vec![],
            Primitive::Parallelizer { streams, .. } => vec![None; *streams],
            Primitive::Serializer { depths, .. } => vec![None; depths.len()],
        }
    }

    pub fn is_writer(&self) -> bool {
        matches!(self, Primitive::LevelWriter { .. } | Primitive::ValWriter { .. })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphNode {
    pub name: String,
    pub kind: Primitive,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PortRef {
    pub node: usize,
    pub port: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Channel {
    pub from: PortRef,
    pub to: PortRef,
    pub kind: StreamKind,
    /// Nesting depth: a depth-d stream closes each level-l fiber with Stop(d - l).
    pub depth: u8,
    /// Block extents carried by each Val token, if blocked.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub block: Option<Vec<usize>>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DataflowGraph {
    pub version: u32,
    pub name: String,
    pub nodes: Vec<GraphNode>,
    pub channels: Vec<Channel>,
    #[serde(default)]
    pub outputs: Vec<OutputBinding>,
}

/// How a written tensor is reassembled from its writers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OutputBinding {
    pub tensor: String,
    /// Logical extents (elements, not blocks).
    pub shape: Vec<usize>,
    /// Storage order of the written levels.
    pub mode_order: Vec<usize>,
    /// Block extents in logical mode order, if blocked.
    pub block: Option<Vec<usize>>,
    /// Labels of the block payload dims in storage order.
    pub block_dims: Vec<String>,
}

impl DataflowGraph {
    pub fn new(name: &str) -> Self {
        DataflowGraph { version: FORMAT_VERSION, name: name.to_string(), nodes: vec![], channels: vec![], outputs: vec![] }
    }

    pub fn add(&mut self, name: impl Into<String>, kind: Primitive) -> usize {
        self.nodes.push(GraphNode { name: name.into(), kind });
        self.nodes.len() - 1
    }

    pub fn connect(&mut self, from: (usize, usize), to: (usize, usize), kind: StreamKind, depth: u8) {
        self.channels.push(Channel { from: PortRef { node: from.0, port: from.1 }, to: PortRef { node: to.0, port: to.1 }, kind, depth, block: None });
    }

    /// Class multiset, e.g. {"LS": 3, "Intersect": 1, ...}.
    pub fn class_counts(&self) -> BTreeMap<String, usize> {
        let mut m = BTreeMap::new();
        for n in &self.nodes {
            *m.entry(n.kind.class().to_string()).or_insert(0) += 1;
        }
        m
    }

    pub fn producer_of(&self, node: usize, port: usize) -> Option<&Channel> {
        self.channels.iter().find(|c| c.to.node == node && c.to.port == port)
    }

    pub fn consumers_of(&self, node: usize, port: usize) -> impl Iterator<Item = &Channel> {
        self.channels.iter().filter(move |c| c.from.node == node && c.from.port == port)
    }

    pub fn find(&self, name: &str) -> Option<usize> {
        self.nodes.iter().position(|n| n.name == name)
    }

    /// Structural checks: endpoints exist, every input has exactly one typed
    /// producer, and every node is reachable from a root.
    pub fn validate(&self) -> Result<(), GraphError> {
        for (ci, c) in self.channels.iter().enumerate() {
            let (Some(src), Some(dst)) = (self.nodes.get(c.from.node), self.nodes.get(c.to.node)) else {
                return Err(GraphError::BadEndpoint(ci));
            };
            let outs = src.kind.output_kinds();
            let ins = dst.kind.input_kinds();
            let (Some(out_kind), Some(in_kind)) = (outs.get(c.from.port), ins.get(c.to.port)) else {
                return Err(GraphError::BadEndpoint(ci));
            };
            for expected in [out_kind, in_kind].into_iter().flatten() {
                if *expected != c.kind {
                    return Err(GraphError::TypeMismatch { channel: ci, expected: *expected, found: c.kind });
                }
            }
        }
        for (ni, n) in self.nodes.iter().enumerate() {
            for port in 0..n.kind.input_kinds().len() {
                match self.channels.iter().filter(|c| c.to.node == ni && c.to.port == port).count() {
                    0 => return Err(GraphError::DanglingPort { node: n.name.clone(), port }),
                    1 => {}
                    _ => return Err(GraphError::MultipleDrivers { node: n.name.clone(), port }),
                }
            }
        }
        let mut seen: BTreeSet<usize> = self.nodes.iter().enumerate().filter(|(_, n)| n.kind == Primitive::Root).map(|(i, _)| i).collect();
        let mut stack: Vec<usize> = seen.iter().copied().collect();
        while let Some(n) = stack.pop() {
            for c in self.channels.iter().filter(|c| c.from.node == n) {
                if seen.insert(c.to.node) {
                    stack.push(c.to.node);
                }
            }
        }
        if let Some((_, n)) = self.nodes.iter().enumerate().find(|(i, _)| !seen.contains(i)) {
            return Err(GraphError::Unreachable(n.name.clone()));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("graph serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, GraphError> {
        let raw: serde_json::Value = serde_json::from_str(text).map_err(|e| GraphError::ParseError(e.to_string()))?;
        let found = raw.get("version").and_then(|v| v.as_u64()).ok_or_else(|| GraphError::ParseError("missing version".into()))? as u32;
        if found != FORMAT_VERSION {
            return Err(GraphError::VersionMismatch { found, expected: FORMAT_VERSION });
        }
        serde_json::from_value(raw).map_err(|e| GraphError::ParseError(e.to_string()))
    }

    pub fn to_dot(&self) -> String {
        let mut s = format!("digraph \"{}\" {{\n  rankdir=TB;\n", self.name);
        for (i, n) in self.nodes.iter().enumerate() {
            let shape = if n.kind.is_writer() { "box" } else { "ellipse" };
            let _ = writeln!(s, "  n{i} [label=\"{}:{}\", shape={shape}];", n.kind.class(), n.name.replace('"', "'"));
        }
        for c in &self.channels {
            let style = match c.kind {
                StreamKind::Crd => "solid",
                StreamKind::Ref => "dashed",
                StreamKind::Val => "bold",
            };
            let block = c.block.as_ref().map(|b| format!(" {b:?}")).unwrap_or_default();
            let _ = writeln!(s, "  n{} -> n{} [label=\"{}/{}{block}\", style={style}];", c.from.node, c.to.node, c.kind, c.depth);
        }
        s.push_str("}\n");
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> DataflowGraph {
        let mut g = DataflowGraph::new("copy");
        let root = g.add("Root", Primitive::Root);
        let ls = g.add("LS_Ai", Primitive::LevelScanner { tensor: "A".into(), scan: ScanKind::Level { level: 0 } });
        let val = g.add("Val_A", Primitive::ValArray { tensor: "A".into(), block_dims: vec![] });
        let lw = g.add("LW_Xi", Primitive::LevelWriter { tensor: "X".into(), level: 0 });
        let vw = g.add("VW_X", Primitive::ValWriter { tensor: "X".into() });
        g.connect((root, 0), (ls, 0), StreamKind::Ref, 0);
        g.connect((ls, 1), (val, 0), StreamKind::Ref, 1);
        g.connect((ls, 0), (lw, 0), StreamKind::Crd, 1);
        g.connect((val, 0), (vw, 0), StreamKind::Val, 1);
        g
    }

    #[test]
    fn valid_graph_round_trips() {
        let g = tiny();
        g.validate().unwrap();
        assert_eq!(DataflowGraph::from_json(&g.to_json()).unwrap(), g);
        assert!(g.to_dot().contains("n0 -> n1"));
    }

    #[test]
    fn rejects_bad_graphs() {
        let mut g = tiny();
        g.channels[2].kind = StreamKind::Val;
        assert!(matches!(g.validate(), Err(GraphError::TypeMismatch { .. })));
        let mut g = tiny();
        g.channels.pop();
        assert!(matches!(g.validate(), Err(GraphError::DanglingPort { .. })));
        let mut g = tiny();
        let a = g.add("loop_a", Primitive::Map { func: MapFn::Relu });
        let b = g.add("loop_b", Primitive::Map { func: MapFn::Relu });
        g.connect((a, 0), (b, 0), StreamKind::Val, 1);
        g.connect((b, 0), (a, 0), StreamKind::Val, 1);
        assert_eq!(g.validate(), Err(GraphError::Unreachable("loop_a".into())));
        let json = tiny().to_json().replace("\"version\": 1", "\"version\": 7");
        assert_eq!(DataflowGraph::from_json(&json), Err(GraphError::VersionMismatch { found: 7, expected: 1 }));
        assert!(matches!(DataflowGraph::from_json("{"), Err(GraphError::ParseError(_))));
    }
}
