use crate::frontend::{MapFn, ReduceOp};
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
pub struct NodeId(pub usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ViewId(pub usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CombineOp {
    Mul,
    Div,
    Add,
    Sub,
    /// Left operand is the mask leaf; the value is the right operand's.
    Mask,
}

impl CombineOp {
    pub fn symbol(self) -> &'static str {
        match self {
            CombineOp::Mul => "*",
            CombineOp::Div => "/",
            CombineOp::Add => "+",
            CombineOp::Sub => "-",
            CombineOp::Mask => "mask",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Node {
    Leaf { view: ViewId },
    Map { func: MapFn, child: NodeId },
    Combine { op: CombineOp, lhs: NodeId, rhs: NodeId },
    Reduce { op: ReduceOp, var: String, child: NodeId },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TreeNode {
    pub node: Node,
    /// Name of the expression whose body this node roots, if any.
    pub label: Option<String>,
}

/// Arena of the fused expression; node ids are stable for a given region.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FusionTree {
    pub nodes: Vec<TreeNode>,
    pub root: NodeId,
}

impl FusionTree {
    pub fn push(&mut self, node: Node, label: Option<String>) -> NodeId {
        self.nodes.push(TreeNode { node, label });
        NodeId(self.nodes.len() - 1)
    }

    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id.0].node
    }

    pub fn label(&self, id: NodeId) -> Option<&str> {
        self.nodes[id.0].label.as_deref()
    }

    pub fn children(&self, id: NodeId) -> Vec<NodeId> {
        match self.node(id) {
            Node::Leaf { .. } => vec![],
            Node::Map { child, .. } | Node::Reduce { child, .. } => vec![*child],
            Node::Combine { lhs, rhs, .. } => vec![*lhs, *rhs],
        }
    }

    /// Nodes reachable from the root, parents before children, left to right.
    pub fn preorder(&self) -> Vec<NodeId> {
        let mut out = Vec::new();
        let mut stack = vec![self.root];
        while let Some(n) = stack.pop() {
            out.push(n);
            let mut ch = self.children(n);
            ch.reverse();
            stack.extend(ch);
        }
        out
    }

    pub fn parent_map(&self) -> Vec<Option<NodeId>> {
        let mut parent = vec![None; self.nodes.len()];
        for n in self.preorder() {
            for c in self.children(n) {
                parent[c.0] = Some(n);
            }
        }
        parent
    }

    pub fn leaves(&self, id: NodeId) -> Vec<NodeId> {
        let mut out = Vec::new();
        let mut stack = vec![id];
        while let Some(n) = stack.pop() {
            if matches!(self.node(n), Node::Leaf { .. }) {
                out.push(n);
            }
            let mut ch = self.children(n);
            ch.reverse();
            stack.extend(ch);
        }
        out
    }

    /// Reduction vars bound inside the subtree.
    pub fn internal_vars(&self, id: NodeId) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        let mut stack = vec![id];
        while let Some(n) = stack.pop() {
            if let Node::Reduce { var, .. } = self.node(n) {
                out.insert(var.clone());
            }
            stack.extend(self.children(n));
        }
        out
    }
}
