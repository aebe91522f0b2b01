//! Analytic cost model over fused regions.
//!
//! Tensors are modeled as uniformly random with a known nonzero density. Every
//! node of a region is charged per value token, where the token count follows
//! the loop context the lowering assigns to it: a node is evaluated once per
//! visited point of its context, and a point is visited with the probability
//! that every stream co-iterated in that scope has it.

use super::OptimizeError;
use crate::frontend::{MapFn, ReduceOp};
use crate::fusion::{CombineOp, FusedRegion, Node, NodeId, TensorFormat};
use crate::pipeline::{unblocked, CompiledProgram, Step};
use crate::table::node_contexts;
use crate::tensor::{LevelKind, SparseTensor};
use serde::Serialize;
use std::collections::BTreeMap;

const INDEX_BYTES: f64 = 4.0;
const VALUE_BYTES: f64 = 8.0;

/// Nonzero densities of the program's input tensors.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct HeuristicInput {
    pub densities: BTreeMap<String, f64>,
}

impl HeuristicInput {
    /// Densities measured on concrete tensors. Blocked tensors are measured
    /// per block: a block counts if any of its elements is nonzero.
    pub fn measured(tensors: &BTreeMap<String, SparseTensor>) -> Self {
        let densities = tensors.iter().map(|(name, t)| (name.clone(), measure(t))).collect();
        HeuristicInput { densities }
    }

    pub fn with(mut self, tensor: &str, density: f64) -> Self {
        self.densities.insert(tensor.to_string(), density.clamp(0.0, 1.0));
        self
    }
}

fn measure(t: &SparseTensor) -> f64 {
    let Some(block) = t.block_shape().map(|b| b.to_vec()) else {
        let size: usize = t.shape.iter().product();
        return if size == 0 { 0.0 } else { t.nnz() as f64 / size as f64 };
    };
    let Ok(flat) = unblocked(t) else { return 1.0 };
    let grid: Vec<usize> = flat.shape.iter().zip(&block).map(|(s, b)| s / b).collect();
    let mut hit = std::collections::BTreeSet::new();
    for (c, v) in flat.entries() {
        if v != 0.0 {
            let cell: Vec<usize> = c.iter().zip(&block).map(|(&x, b)| x as usize / b).collect();
            hit.insert(cell);
        }
    }
    let cells: usize = grid.iter().product();
    if cells == 0 {
        0.0
    } else {
        hit.len() as f64 / cells as f64
    }
}

/// Cost of one kernel.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExprCost {
    pub output: String,
    pub flops: f64,
    pub bytes_read: f64,
    pub bytes_written: f64,
    /// Coordinates emitted by level scanners, a proxy for stream length.
    pub iterations: f64,
    /// Predicted nonzero density of the written output.
    pub density: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CostEstimate {
    pub flops: f64,
    pub bytes_read: f64,
    pub bytes_written: f64,
    pub iterations: f64,
    pub per_expression: Vec<ExprCost>,
    /// Predicted densities of materialized intermediates.
    pub materialized: BTreeMap<String, f64>,
}

impl CostEstimate {
    pub fn bytes(&self) -> f64 {
        self.bytes_read + self.bytes_written
    }
}

/// Estimates a compiled program kernel by kernel, feeding each kernel's
/// predicted output density to the kernels that read it.
pub fn estimate(program: &CompiledProgram, input: &HeuristicInput) -> Result<CostEstimate, OptimizeError> {
    let mut dens = input.densities.clone();
    let mut out = CostEstimate { flops: 0.0, bytes_read: 0.0, bytes_written: 0.0, iterations: 0.0, per_expression: vec![], materialized: BTreeMap::new() };
    for step in &program.steps {
        match step {
            Step::Kernel(k) => {
                let kernel = &program.kernels[*k];
                for pc in &kernel.region.permuted_copies {
                    let d = dens.get(&pc.source).copied().unwrap_or(1.0);
                    dens.insert(pc.name.clone(), d);
                }
                let cost = estimate_region(&kernel.region, &dens)?;
                out.flops += cost.flops;
                out.bytes_read += cost.bytes_read;
                out.bytes_written += cost.bytes_written;
                out.iterations += cost.iterations;
                dens.insert(cost.output.clone(), cost.density);
                if program.materialized.contains(&cost.output) {
                    out.materialized.insert(cost.output.clone(), cost.density);
                }
                out.per_expression.push(cost);
            }
            Step::Reshape(r) => {
                let d = dens.get(&r.input).copied().unwrap_or(1.0);
                dens.insert(r.output.clone(), d);
            }
        }
    }
    Ok(out)
}

/// Estimates one region under its selected order. Tensors missing from
/// `densities` are taken as fully dense.
pub fn estimate_region(region: &FusedRegion, densities: &BTreeMap<String, f64>) -> Result<ExprCost, OptimizeError> {
    let m = Model::new(region, densities)?;
    let root = region.tree.root;
    let mut flops = 0.0;
    let mut iterations = 0.0;
    for id in region.tree.preorder() {
        flops += m.flops(id);
        iterations += m.scanned(id);
    }
    // Mask operands contribute coordinates only; their values are never loaded.
    let mut tensors: BTreeMap<&str, bool> = BTreeMap::new();
    for id in region.tree.preorder() {
        if let Node::Leaf { view } = region.tree.node(id) {
            let masked = m.parent[id.0].is_some_and(|p| matches!(region.tree.node(p), Node::Combine { op: CombineOp::Mask, lhs, .. } if *lhs == id));
            *tensors.entry(region.views[view.0].base.as_str()).or_insert(false) |= !masked;
        }
    }
    let bytes_read = tensors.iter().map(|(t, values)| m.storage_bytes(&region.formats[*t], m.density(t), *values)).sum();
    let root_ctx = &m.ctx[&root];
    let space = m.space(root_ctx);
    let density = if space > 0.0 { (m.tokens(root) / space * m.nonzero(root)).clamp(0.0, 1.0) } else { 0.0 };
    let extents: Vec<f64> = root_ctx.iter().map(|v| m.extent(v)).collect();
    let mut bytes_written = 0.0;
    let mut parents = 1.0;
    for k in 0..extents.len() {
        let positions = m.positions(&extents, k, density);
        bytes_written += (parents + positions) * INDEX_BYTES;
        parents = positions;
    }
    bytes_written += parents * VALUE_BYTES * m.volume(root_ctx.len());
    Ok(ExprCost { output: region.output.clone(), flops, bytes_read, bytes_written, iterations, density })
}

struct Model<'a> {
    region: &'a FusedRegion,
    ctx: BTreeMap<NodeId, Vec<String>>,
    pos: BTreeMap<String, usize>,
    parent: Vec<Option<NodeId>>,
    densities: &'a BTreeMap<String, f64>,
    block: f64,
}

impl<'a> Model<'a> {
    fn new(region: &'a FusedRegion, densities: &'a BTreeMap<String, f64>) -> Result<Self, OptimizeError> {
        let ctx = node_contexts(region)?;
        let pos = region.order().iter().enumerate().map(|(i, v)| (v.clone(), i)).collect();
        let block = region.views.iter().find_map(|v| region.formats[&v.base].block.as_ref().and_then(|b| b.first().copied())).unwrap_or(1);
        Ok(Model { region, ctx, pos, parent: region.tree.parent_map(), densities, block: block as f64 })
    }

    fn density(&self, tensor: &str) -> f64 {
        self.densities.get(tensor).copied().unwrap_or(1.0)
    }

    fn extent(&self, v: &str) -> f64 {
        self.region.extents.get(v).copied().unwrap_or(1) as f64
    }

    fn space(&self, vars: &[String]) -> f64 {
        vars.iter().map(|v| self.extent(v)).product()
    }

    /// Elements per value token: blocks carry one element per block dim.
    fn volume(&self, dims: usize) -> f64 {
        self.block.powi(dims as i32)
    }

    fn restrict(&self, id: NodeId, w: &[String]) -> Vec<String> {
        let c = &self.ctx[&id];
        w.iter().filter(|v| c.contains(v)).cloned().collect()
    }

    fn with(&self, w: &[String], extra: &str) -> Vec<String> {
        let mut out = w.to_vec();
        if !out.iter().any(|v| v == extra) {
            out.push(extra.to_string());
        }
        out.sort_by_key(|v| self.pos[v]);
        out
    }

    /// Chance that a position `k` levels deep exists under the random model,
    /// given its parent exists: some element of its subtree is nonzero.
    fn subtree_nonempty(&self, extents: &[f64], k: usize, density: f64) -> f64 {
        let below: f64 = extents[k + 1..].iter().product();
        1.0 - (1.0 - density).powf(below)
    }

    /// Expected stored positions at compressed level `k`.
    fn positions(&self, extents: &[f64], k: usize, density: f64) -> f64 {
        extents[..=k].iter().product::<f64>() * self.subtree_nonempty(extents, k, density)
    }

    fn storage_bytes(&self, fmt: &TensorFormat, density: f64, values: bool) -> f64 {
        let block = fmt.block.as_ref().and_then(|b| b.first().copied()).unwrap_or(1);
        let extents: Vec<f64> = fmt.mode_order.iter().map(|&m| (fmt.shape[m] / block) as f64).collect();
        let mut parents = 1.0;
        let mut bytes = 0.0;
        for (k, kind) in fmt.kinds.iter().enumerate() {
            let here = match kind {
                LevelKind::Dense => parents * extents[k],
                _ => {
                    let p = self.positions(&extents, k, density);
                    bytes += match kind {
                        LevelKind::Compressed => (parents + p) * INDEX_BYTES,
                        _ => p * INDEX_BYTES,
                    };
                    p
                }
            };
            parents = here;
        }
        if values {
            bytes += parents * VALUE_BYTES * self.volume(extents.len());
        }
        bytes
    }

    /// Chance that a leaf's scanners emit a given point of `w`.
    fn leaf_emit(&self, id: NodeId, w: &[String]) -> f64 {
        let Node::Leaf { view } = self.region.tree.node(id) else { unreachable!("leaf") };
        let view = &self.region.views[view.0];
        let fmt = &self.region.formats[&view.base];
        if fmt.is_all_dense() {
            return 1.0;
        }
        let vars = view.storage_vars();
        let Some(deepest) = vars.iter().rposition(|v| w.contains(v)) else { return 1.0 };
        let Some(c) = (0..=deepest).rev().find(|&k| fmt.kinds[k] != LevelKind::Dense) else { return 1.0 };
        let extents: Vec<f64> = vars.iter().map(|v| self.extent(v)).collect();
        self.subtree_nonempty(&extents, c, self.density(&view.base))
    }

    /// Chance that co-iterating node `id`'s streams visits a point of `w`.
    fn visit(&self, id: NodeId, w: &[String]) -> f64 {
        let w = self.restrict(id, w);
        match self.region.tree.node(id).clone() {
            Node::Leaf { .. } => self.leaf_emit(id, &w),
            Node::Map { child, .. } => self.visit(child, &w),
            Node::Combine { op, lhs, rhs } => {
                let (a, b) = (self.visit(lhs, &w), self.visit(rhs, &w));
                if self.region.is_union(id) && op != CombineOp::Mask {
                    1.0 - (1.0 - a) * (1.0 - b)
                } else {
                    a * b
                }
            }
            Node::Reduce { var: u, child, .. } => {
                let Some(v) = w.iter().find(|x| self.pos[*x] > self.pos[&u]).cloned() else {
                    return self.visit(child, &w);
                };
                // The reduced var sits above `v`: a `v` survives if any `u` has it.
                let base: Vec<String> = w.iter().filter(|x| **x != v).cloned().collect();
                let d0 = self.visit(child, &base);
                let du = self.visit(child, &self.with(&base, &u));
                if d0 <= 0.0 || du <= 0.0 {
                    return 0.0;
                }
                let p = du / d0 * (self.visit(child, &self.with(&self.with(&base, &u), &v)) / du);
                d0 * (1.0 - (1.0 - p).powf(self.extent(&u)))
            }
        }
    }

    /// Chance that a point of `w` (within `id`'s context) is visited in the
    /// scope where `id` is evaluated.
    fn scope_visit(&self, id: NodeId, w: &[String]) -> f64 {
        match self.parent[id.0] {
            None => self.visit(id, w),
            Some(p) => match self.region.tree.node(p) {
                Node::Reduce { var: u, .. } => {
                    let outer: Vec<String> = w.iter().filter(|x| self.pos[*x] < self.pos[u]).cloned().collect();
                    let base = self.scope_visit(p, &outer);
                    if outer.len() == w.len() {
                        return base;
                    }
                    let d0 = self.visit(id, &outer);
                    if d0 <= 0.0 {
                        0.0
                    } else {
                        base * self.visit(id, w) / d0
                    }
                }
                _ => self.scope_visit(p, w),
            },
        }
    }

    /// Coordinates a leaf's scanners emit: at each of its vars, one fiber per
    /// visited parent point.
    fn scanned(&self, id: NodeId) -> f64 {
        let Node::Leaf { view } = self.region.tree.node(id) else { return 0.0 };
        let view = &self.region.views[view.0];
        let ctx = &self.ctx[&id];
        let mut total = 0.0;
        for (k, v) in ctx.iter().enumerate() {
            if !view.index_map.contains(v) {
                continue;
            }
            let (outer, here) = (&ctx[..k], &ctx[..=k]);
            let parent = self.leaf_emit(id, outer);
            if parent > 0.0 {
                total += self.space(here) * self.scope_visit(id, outer) * self.leaf_emit(id, here) / parent;
            }
        }
        total
    }

    /// Value tokens node `id` produces.
    fn tokens(&self, id: NodeId) -> f64 {
        let c = &self.ctx[&id];
        self.space(c) * self.scope_visit(id, c)
    }

    /// Chance that a produced value is nonzero.
    fn nonzero(&self, id: NodeId) -> f64 {
        match self.region.tree.node(id).clone() {
            Node::Leaf { view } => {
                let base = &self.region.views[view.0].base;
                let stored = self.leaf_emit(id, &self.ctx[&id]);
                if stored > 0.0 {
                    (self.density(base) / stored).min(1.0)
                } else {
                    0.0
                }
            }
            Node::Map { func, child } => match func {
                MapFn::Relu => 0.5 * self.nonzero(child),
                MapFn::Exp => 1.0,
                MapFn::Gelu | MapFn::Scale(_) => self.nonzero(child),
            },
            Node::Combine { op, lhs, rhs } => {
                let (a, b) = (self.nonzero(lhs), self.nonzero(rhs));
                match op {
                    CombineOp::Mul => a * b,
                    CombineOp::Div => a,
                    CombineOp::Mask => b,
                    CombineOp::Add | CombineOp::Sub => 1.0 - (1.0 - a) * (1.0 - b),
                }
            }
            Node::Reduce { child, .. } => {
                let (filled, terms) = self.reduce_fill(id);
                if filled <= 0.0 {
                    return 0.0;
                }
                filled * (1.0 - (1.0 - self.nonzero(child)).powf(terms.max(1.0)))
            }
        }
    }

    fn is_red1(&self, id: NodeId) -> bool {
        match self.region.tree.node(id) {
            Node::Reduce { var, .. } => self.ctx[&id].iter().any(|v| self.pos[v] > self.pos[var]),
            _ => false,
        }
    }

    /// Fraction of a reducer's outputs with at least one input, and the
    /// expected number of inputs per such output.
    fn reduce_fill(&self, id: NodeId) -> (f64, f64) {
        let Node::Reduce { var: u, child, .. } = self.region.tree.node(id) else { unreachable!("reduce") };
        let (out, inp) = (self.tokens(id), self.tokens(*child));
        if out <= 0.0 {
            return (0.0, 0.0);
        }
        if self.is_red1(id) {
            return (1.0, inp / out);
        }
        let p = (inp / (out * self.extent(u))).min(1.0);
        let filled = 1.0 - (1.0 - p).powf(self.extent(u));
        (filled, if filled > 0.0 { inp / (out * filled) } else { 0.0 })
    }

    fn flops(&self, id: NodeId) -> f64 {
        let dims = self.region.free_vars(id).len();
        match self.region.tree.node(id).clone() {
            Node::Leaf { .. } | Node::Combine { op: CombineOp::Mask, .. } => 0.0,
            Node::Map { .. } | Node::Combine { .. } => self.tokens(id) * self.volume(dims),
            Node::Reduce { op, child, .. } => {
                if op != ReduceOp::Sum {
                    return 0.0;
                }
                let inp = self.tokens(child);
                let (filled, _) = self.reduce_fill(id);
                let merges = (inp - self.tokens(id) * filled).max(0.0);
                let local = if self.block > 1.0 { inp * (self.block - 1.0) * self.volume(dims) } else { 0.0 };
                merges * self.volume(dims) + local
            }
        }
    }
}
