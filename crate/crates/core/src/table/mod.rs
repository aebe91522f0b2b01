//! Tabular lowering: rows are index vars in the selected order plus a value
//! row, columns are leaf views and reduction results. Cells hold primitives
//! whose inputs are deferred handles, resolved when the graph is generated.

mod codegen;
mod dump;

pub use codegen::{generate_graph, generate_parallel_graph};

use crate::frontend::ReduceOp;
use crate::fusion::{CombineOp, FusedRegion, Node, NodeId};
use crate::graph::{AluOp, OutputBinding, Primitive, ScanKind, StreamKind};
use serde::Serialize;
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LoweringError {
    #[error("unresolved handle at row {row}, column {column}")]
    DanglingReference { row: String, column: String },
    #[error("region has no selected order")]
    NoOrder,
    #[error("view {view} is scanned out of its storage order at {var}")]
    NonConcordant { view: String, var: String },
    #[error("reduction over {var} has more than one var nested inside it: {inner:?}")]
    IllegalContext { var: String, inner: Vec<String> },
    #[error("{var} is not an output index of the region and cannot be parallelized")]
    NotParallelizable { var: String },
}

/// Keeps only the coordinates of an output var that belong to one lane.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LaneFilter {
    pub var: String,
    pub lanes: u32,
    pub lane: u32,
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub enum Row {
    Var(String),
    Val,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub enum ColumnKind {
    Leaf(NodeId),
    Reduce(NodeId),
    Output,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Column {
    pub name: String,
    pub kind: ColumnKind,
}

/// Where a cell's item sits: in one column or spanning several (joins).
#[derive(Clone, Debug, PartialEq, Serialize)]
pub enum Placement {
    Column(usize),
    Merged(Vec<usize>),
    /// Output assembly, outside the grid.
    Writer,
}

/// A deferred input handle.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub enum Src {
    Port { item: usize, port: usize },
    /// The latest stream a column exposes at a row (after all joins there).
    Top { var: String, col: usize },
    /// The iteration crd of a scope at a row.
    Scope { scope: usize, var: String },
    Root,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Item {
    pub name: String,
    pub prim: Primitive,
    pub inputs: Vec<Src>,
    pub row: Row,
    pub place: Placement,
    /// Kind per output port.
    pub outputs: Vec<StreamKind>,
    pub depth: u8,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FusionTable {
    pub region: String,
    /// Index vars in the selected order.
    pub rows: Vec<String>,
    /// Display names of the rows (original var names where known).
    pub row_names: Vec<String>,
    pub columns: Vec<Column>,
    pub items: Vec<Item>,
    #[serde(skip)]
    pub top: BTreeMap<(String, usize), (usize, usize)>,
    #[serde(skip)]
    pub scopes: BTreeMap<(usize, String), Src>,
    /// Output crd per root context var, outermost first, and the value stream.
    pub out_crds: Vec<Src>,
    pub out_vars: Vec<String>,
    pub out_val: Option<Src>,
    pub block: Option<Vec<usize>>,
    pub output: OutputBinding,
}

#[derive(Clone, Debug)]
struct StreamSet {
    crd: Src,
    payloads: Vec<(usize, Src)>,
}

struct Builder<'a> {
    region: &'a FusedRegion,
    pos: BTreeMap<String, usize>,
    ctx: BTreeMap<NodeId, Vec<String>>,
    parent: Vec<Option<NodeId>>,
    col_of: BTreeMap<NodeId, usize>,
    out_col: Option<usize>,
    scope_at: BTreeMap<(NodeId, String), usize>,
    /// Scope of each column top, and whether it is a Repeat.
    top_scope: BTreeMap<(String, usize), (usize, bool)>,
    next_scope: usize,
    vals: BTreeMap<NodeId, Src>,
    table: FusionTable,
    blocked: bool,
    filters: Vec<LaneFilter>,
}

/// Builds the fusion table for a region with a selected order.
pub fn build_table(region: &FusedRegion) -> Result<FusionTable, LoweringError> {
    build_lane_table(region, &[])
}

/// Builds the table of one lane: each filter keeps the coordinates of its var
/// that fall in the lane (`crd % lanes == lane`).
pub fn build_lane_table(region: &FusedRegion, filters: &[LaneFilter]) -> Result<FusionTable, LoweringError> {
    let mut b = Builder::new(region, filters)?;
    b.columns();
    let root = region.tree.root;
    let root_ctx = b.root_ctx()?;
    if let Some(f) = filters.iter().find(|f| !root_ctx.contains(&f.var)) {
        return Err(LoweringError::NotParallelizable { var: f.var.clone() });
    }
    let scope = b.new_scope();
    for v in &root_ctx {
        let set = b.level(root, v, scope)?.expect("root iterates every free var");
        b.bind_scope(scope, v, set.crd);
    }
    let val = b.value(root)?;
    b.table.out_crds = root_ctx.iter().map(|v| Src::Scope { scope, var: v.clone() }).collect();
    let factor = b.table.block.as_ref().and_then(|b| b.first().copied());
    let declared = &region.output_vars;
    b.table.output.shape = declared.iter().map(|v| region.extents.get(v).copied().unwrap_or(1) * factor.unwrap_or(1)).collect();
    b.table.output.mode_order = root_ctx.iter().map(|v| declared.iter().position(|d| d == v).expect("free var is an output index")).collect();
    if let Some(f) = factor {
        b.table.output.block = Some(vec![f; declared.len()]);
        b.table.output.block_dims = root_ctx.clone();
    }
    b.table.out_vars = root_ctx;
    b.table.out_val = Some(val);
    Ok(b.table)
}

/// Loop context of every node under the region's selected order: the vars a
/// node's value is produced over, outermost first.
pub fn node_contexts(region: &FusedRegion) -> Result<BTreeMap<NodeId, Vec<String>>, LoweringError> {
    let mut b = Builder::new(region, &[])?;
    b.root_ctx()?;
    Ok(b.ctx)
}

impl<'a> Builder<'a> {
    fn new(region: &'a FusedRegion, filters: &[LaneFilter]) -> Result<Self, LoweringError> {
        let order = region.selected_order.clone().ok_or(LoweringError::NoOrder)?;
        let pos: BTreeMap<String, usize> = order.iter().enumerate().map(|(i, v)| (v.clone(), i)).collect();
        let block = region.views.iter().find_map(|v| region.formats[&v.base].block.clone());
        let row_names = order.iter().map(|v| region.origin.get(v).cloned().unwrap_or_else(|| v.clone())).collect();
        Ok(Builder {
            region,
            pos,
            ctx: BTreeMap::new(),
            parent: region.tree.parent_map(),
            col_of: BTreeMap::new(),
            out_col: None,
            scope_at: BTreeMap::new(),
            top_scope: BTreeMap::new(),
            next_scope: 0,
            vals: BTreeMap::new(),
            blocked: block.is_some(),
            filters: filters.to_vec(),
            table: FusionTable {
                region: region.output.clone(),
                rows: order,
                row_names,
                columns: vec![],
                items: vec![],
                top: BTreeMap::new(),
                scopes: BTreeMap::new(),
                out_crds: vec![],
                out_vars: vec![],
                out_val: None,
                block,
                output: OutputBinding { tensor: region.output.clone(), shape: vec![], mode_order: vec![], block: None, block_dims: vec![] },
            },
        })
    }

    fn root_ctx(&mut self) -> Result<Vec<String>, LoweringError> {
        let root = self.region.tree.root;
        let mut ctx = self.region.free_vars(root);
        self.sort(&mut ctx);
        self.assign_ctx(root, ctx.clone())?;
        Ok(ctx)
    }
}

impl Builder<'_> {
    /// Records the crd of `v` in `scope`, filtered to this lane when `v` is split.
    /// Every scope that iterates a split var filters it, so reductions nested
    /// under it only do the lane's share of the work.
    fn bind_scope(&mut self, scope: usize, v: &str, crd: Src) {
        let crd = match self.filters.iter().find(|f| f.var == v).cloned() {
            Some(f) => self.lane_filter(&f, scope, crd),
            None => crd,
        };
        self.table.scopes.insert((scope, v.to_string()), crd);
    }

    /// Routes the scope crd and every lockstep column top at the var through a
    /// Parallelizer. Repeats are left alone: they consume the filtered crd.
    fn lane_filter(&mut self, f: &LaneFilter, scope: usize, crd: Src) -> Src {
        let v = &f.var;
        let cols: Vec<usize> =
            self.top_scope.iter().filter(|((w, _), (s, rep))| w == v && *s == scope && !rep).map(|((_, c), _)| *c).collect();
        let mut inputs = vec![crd];
        let mut outputs = vec![StreamKind::Crd];
        for &c in &cols {
            let (item, port) = self.table.top[&(v.clone(), c)];
            inputs.push(Src::Port { item, port });
            outputs.push(self.table.items[item].outputs[port]);
        }
        let prim = Primitive::Parallelizer { var: self.disp(v), lanes: f.lanes as usize, lane: f.lane as usize, streams: inputs.len() };
        let place = Placement::Merged(cols.clone());
        let d = match &inputs[0] {
            Src::Port { item, .. } => self.table.items[*item].depth,
            _ => self.depth_at(self.region.tree.root, v),
        };
        let it = self.push(format!("Par_{}", self.disp(v)), prim, inputs, Row::Var(v.clone()), place, outputs, d);
        for (k, c) in cols.into_iter().enumerate() {
            self.table.top.insert((v.clone(), c), (it, k + 1));
        }
        Src::Port { item: it, port: 0 }
    }

    fn set_top(&mut self, v: &str, col: usize, at: (usize, usize), scope: usize, repeat: bool) {
        self.table.top.insert((v.to_string(), col), at);
        self.top_scope.insert((v.to_string(), col), (scope, repeat));
    }

    fn sort(&self, vars: &mut [String]) {
        vars.sort_by_key(|v| self.pos[v]);
    }

    fn disp(&self, v: &str) -> String {
        self.region.origin.get(v).cloned().unwrap_or_else(|| v.to_string())
    }

    fn columns(&mut self) {
        let tree = &self.region.tree;
        let mut used: BTreeMap<String, usize> = BTreeMap::new();
        let mut unique = |base: String| {
            let n = used.entry(base.clone()).or_insert(0);
            *n += 1;
            if *n == 1 {
                base
            } else {
                format!("{base}#{}", *n - 1)
            }
        };
        for id in tree.preorder() {
            let col = match tree.node(id) {
                Node::Leaf { .. } => Column { name: unique(self.region.view_of(id).label()), kind: ColumnKind::Leaf(id) },
                Node::Reduce { .. } => Column { name: unique(self.region.node_name(id)), kind: ColumnKind::Reduce(id) },
                _ => continue,
            };
            self.table.columns.push(col);
            self.col_of.insert(id, self.table.columns.len() - 1);
        }
        if !matches!(tree.node(tree.root), Node::Reduce { .. }) {
            self.table.columns.push(Column { name: unique(self.region.output.clone()), kind: ColumnKind::Output });
            self.out_col = Some(self.table.columns.len() - 1);
        }
    }

    /// Column of the nearest enclosing reduction, or the output column.
    fn home_col(&self, id: NodeId) -> usize {
        let mut n = Some(id);
        while let Some(x) = n {
            if let Node::Reduce { .. } = self.region.tree.node(x) {
                return self.col_of[&x];
            }
            n = self.parent[x.0];
        }
        self.out_col.expect("non-reduce root has an output column")
    }

    fn assign_ctx(&mut self, id: NodeId, ctx: Vec<String>) -> Result<(), LoweringError> {
        self.ctx.insert(id, ctx.clone());
        match self.region.tree.node(id).clone() {
            Node::Leaf { .. } => {}
            Node::Map { child, .. } => self.assign_ctx(child, ctx)?,
            Node::Combine { lhs, rhs, .. } => {
                for c in [lhs, rhs] {
                    if self.region.tree.internal_vars(c).is_empty() {
                        self.assign_ctx(c, ctx.clone())?;
                    } else {
                        let limit = self.region.free_vars(c).iter().map(|v| self.pos[v]).max();
                        let prefix = ctx.iter().filter(|v| limit.is_some_and(|m| self.pos[*v] <= m)).cloned().collect();
                        self.assign_ctx(c, prefix)?;
                    }
                }
            }
            Node::Reduce { var, child, .. } => {
                let inner: Vec<String> = ctx.iter().filter(|v| self.pos[*v] > self.pos[&var]).cloned().collect();
                if inner.len() > 1 {
                    return Err(LoweringError::IllegalContext { var: self.disp(&var), inner });
                }
                let mut c = ctx;
                c.push(var);
                self.sort(&mut c);
                self.assign_ctx(child, c)?;
            }
        }
        Ok(())
    }

    fn new_scope(&mut self) -> usize {
        self.next_scope += 1;
        self.next_scope - 1
    }

    fn depth_at(&self, id: NodeId, v: &str) -> u8 {
        self.ctx[&id].iter().position(|x| x == v).expect("var in context") as u8 + 1
    }

    #[allow(clippy::too_many_arguments)]
    fn push(&mut self, name: String, prim: Primitive, inputs: Vec<Src>, row: Row, place: Placement, outputs: Vec<StreamKind>, depth: u8) -> usize {
        let taken = |n: &str, items: &[Item]| items.iter().any(|i| i.name == n);
        let mut unique = name.clone();
        let mut k = 2;
        while taken(&unique, &self.table.items) {
            unique = format!("{name}.{k}");
            k += 1;
        }
        self.table.items.push(Item { name: unique, prim, inputs, row, place, outputs, depth });
        self.table.items.len() - 1
    }

    fn prev_ref(&self, leaf: NodeId, v: &str) -> Src {
        let ctx = &self.ctx[&leaf];
        let at = ctx.iter().position(|x| x == v).expect("var in leaf context");
        if at == 0 {
            Src::Root
        } else {
            Src::Top { var: ctx[at - 1].clone(), col: self.col_of[&leaf] }
        }
    }

    fn payload_kind(&self, col: usize) -> StreamKind {
        match self.table.columns[col].kind {
            ColumnKind::Leaf(_) => StreamKind::Ref,
            _ => StreamKind::Val,
        }
    }

    fn scan_kind(&self, leaf: NodeId, v: &str) -> Result<ScanKind, LoweringError> {
        let view = self.region.view_of(leaf);
        let fmt = &self.region.formats[&view.base];
        let mode = view.index_map.iter().position(|x| x == v).expect("leaf has var");
        let level = fmt.mode_order.iter().position(|&m| m == mode).expect("mode stored");
        let ctx = &self.ctx[&leaf];
        let concordant = |var: &String| {
            let mode = view.index_map.iter().position(|x| x == var).expect("leaf has var");
            let level = fmt.mode_order.iter().position(|&m| m == mode).expect("mode stored");
            ctx.iter().take_while(|x| *x != var).filter(|x| view.index_map.contains(x)).count() == level
        };
        // Level positions and strided offsets do not mix, so a dense leaf
        // traversed out of order is strided at every var.
        if fmt.is_all_dense() && !view.index_map.iter().all(concordant) {
            let stride = fmt.mode_order[level + 1..].iter().map(|&m| fmt.shape[m]).product();
            return Ok(ScanKind::Strided { extent: fmt.shape[mode], stride });
        }
        if concordant(&v.to_string()) {
            return Ok(ScanKind::Level { level });
        }
        Err(LoweringError::NonConcordant { view: view.label(), var: self.disp(v) })
    }

    /// Streams node `id` contributes at row `v`, or None if it is absent there.
    fn level(&mut self, id: NodeId, v: &str, scope: usize) -> Result<Option<StreamSet>, LoweringError> {
        if !self.ctx[&id].iter().any(|x| x == v) {
            return Ok(None);
        }
        self.scope_at.insert((id, v.to_string()), scope);
        let d = self.depth_at(id, v);
        match self.region.tree.node(id).clone() {
            Node::Leaf { .. } => {
                let col = self.col_of[&id];
                let view = self.region.view_of(id).clone();
                let input = self.prev_ref(id, v);
                let cname = self.table.columns[col].name.clone();
                if view.index_map.iter().any(|x| x == v) {
                    let scan = self.scan_kind(id, v)?;
                    let prim = Primitive::LevelScanner { tensor: view.base.clone(), scan };
                    let it = self.push(format!("LS_{cname}{}", self.disp(v)), prim, vec![input], Row::Var(v.into()), Placement::Column(col), vec![StreamKind::Crd, StreamKind::Ref], d);
                    self.set_top(v, col, (it, 1), scope, false);
                    Ok(Some(StreamSet { crd: Src::Port { item: it, port: 0 }, payloads: vec![(col, Src::Port { item: it, port: 1 })] }))
                } else {
                    let ctrl = Src::Scope { scope, var: v.into() };
                    let it = self.push(format!("Rep_{cname}{}", self.disp(v)), Primitive::Repeat, vec![input, ctrl], Row::Var(v.into()), Placement::Column(col), vec![StreamKind::Ref], d);
                    self.set_top(v, col, (it, 0), scope, true);
                    Ok(None)
                }
            }
            Node::Map { child, .. } => self.level(child, v, scope),
            Node::Combine { op, lhs, rhs } => {
                let a = self.level(lhs, v, scope)?;
                let b = self.level(rhs, v, scope)?;
                match (a, b) {
                    (Some(a), Some(b)) => Ok(Some(self.join_scoped(id, op, v, a, b, scope, d))),
                    (Some(a), None) if self.region.is_union(id) => {
                        // The other operand is broadcast over v: union with v's full range.
                        let range = self.range(id, v, d)?;
                        Ok(Some(self.join_scoped(id, op, v, a, range, scope, d)))
                    }
                    (None, Some(b)) if self.region.is_union(id) => {
                        let range = self.range(id, v, d)?;
                        Ok(Some(self.join_scoped(id, op, v, range, b, scope, d)))
                    }
                    (a, b) => Ok(a.or(b)),
                }
            }
            Node::Reduce { op, var: u, child } => {
                if self.pos[v] < self.pos[&u] {
                    return self.level(child, v, scope);
                }
                // v is the var nested inside the reduction: merge inner fibers.
                let inner = self.new_scope();
                for w in [u.as_str(), v] {
                    let set = self.level(child, w, inner)?.expect("child iterates its own vars");
                    self.bind_scope(inner, w, set.crd);
                }
                let val = self.value(child)?;
                let col = self.col_of[&id];
                let prim = Primitive::Red1 { op, block_dim: self.blocked.then(|| u.clone()) };
                let crd = Src::Scope { scope: inner, var: v.into() };
                let it = self.push(format!("Red1_{}", self.disp(&u)), prim, vec![crd, val], Row::Var(v.into()), Placement::Column(col), vec![StreamKind::Crd, StreamKind::Val], d);
                self.set_top(v, col, (it, 1), scope, false);
                Ok(Some(StreamSet { crd: Src::Port { item: it, port: 0 }, payloads: vec![(col, Src::Port { item: it, port: 1 })] }))
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn join_scoped(&mut self, id: NodeId, op: CombineOp, v: &str, a: StreamSet, b: StreamSet, scope: usize, depth: u8) -> StreamSet {
        let set = self.join(id, op, v, a, b, depth);
        for (c, _) in &set.payloads {
            self.top_scope.insert((v.to_string(), *c), (scope, false));
        }
        set
    }

    /// Full range of `v` under the previous var of `id`'s context.
    fn range(&mut self, id: NodeId, v: &str, depth: u8) -> Result<StreamSet, LoweringError> {
        let ctx = self.ctx[&id].clone();
        let at = ctx.iter().position(|x| x == v).expect("var in context");
        let input = match at {
            0 => Src::Root,
            _ => {
                let prev = &ctx[at - 1];
                Src::Scope { scope: self.scope_at[&(id, prev.clone())], var: prev.clone() }
            }
        };
        let extent = self.region.extents[v];
        let col = self.home_col(id);
        let it = self.push(format!("Range_{}", self.disp(v)), Primitive::Range { extent }, vec![input], Row::Var(v.into()), Placement::Column(col), vec![StreamKind::Crd], depth);
        Ok(StreamSet { crd: Src::Port { item: it, port: 0 }, payloads: vec![] })
    }

    fn join(&mut self, id: NodeId, op: CombineOp, v: &str, a: StreamSet, b: StreamSet, depth: u8) -> StreamSet {
        let union = self.region.is_union(id) && op != CombineOp::Mask;
        let prim = if union {
            Primitive::Union { left: a.payloads.len(), right: b.payloads.len() }
        } else {
            Primitive::Intersect { left: a.payloads.len(), right: b.payloads.len() }
        };
        let mut inputs = vec![a.crd];
        inputs.extend(a.payloads.iter().map(|p| p.1.clone()));
        inputs.push(b.crd);
        inputs.extend(b.payloads.iter().map(|p| p.1.clone()));
        let cols: Vec<usize> = a.payloads.iter().chain(&b.payloads).map(|p| p.0).collect();
        let mut outputs = vec![StreamKind::Crd];
        outputs.extend(cols.iter().map(|&c| self.payload_kind(c)));
        let name = format!("{}_{}", if union { "Union" } else { "Intersect" }, self.disp(v));
        let it = self.push(name, prim, inputs, Row::Var(v.into()), Placement::Merged(cols.clone()), outputs, depth);
        let mut payloads = Vec::new();
        for (k, c) in cols.into_iter().enumerate() {
            self.table.top.insert((v.into(), c), (it, k + 1));
            payloads.push((c, Src::Port { item: it, port: k + 1 }));
        }
        StreamSet { crd: Src::Port { item: it, port: 0 }, payloads }
    }

    /// Repeats a child's value over the parent vars it is not iterated under.
    fn aligned(&mut self, parent: NodeId, child: NodeId) -> Result<Src, LoweringError> {
        let mut val = self.value(child)?;
        let pctx = self.ctx[&parent].clone();
        let cctx = self.ctx[&child].clone();
        for w in pctx.iter().filter(|w| !cctx.contains(w)) {
            let scope = self.scope_at[&(parent, w.clone())];
            let ctrl = Src::Scope { scope, var: w.clone() };
            let col = self.home_col(parent);
            let d = self.depth_at(parent, w);
            let it = self.push(format!("Rep_{}{}", self.region.node_name(child), self.disp(w)), Primitive::Repeat, vec![val, ctrl], Row::Var(w.clone()), Placement::Column(col), vec![StreamKind::Val], d);
            val = Src::Port { item: it, port: 0 };
        }
        Ok(val)
    }

    fn value(&mut self, id: NodeId) -> Result<Src, LoweringError> {
        if let Some(v) = self.vals.get(&id) {
            return Ok(v.clone());
        }
        let depth = self.ctx[&id].len() as u8;
        let src = match self.region.tree.node(id).clone() {
            Node::Leaf { .. } => {
                let col = self.col_of[&id];
                let view = self.region.view_of(id).clone();
                let input = match self.ctx[&id].last() {
                    Some(last) => Src::Top { var: last.clone(), col },
                    None => Src::Root,
                };
                let block_dims = if self.blocked { view.storage_vars() } else { vec![] };
                let name = format!("Val_{}", self.table.columns[col].name);
                let it = self.push(name, Primitive::ValArray { tensor: view.base.clone(), block_dims }, vec![input], Row::Val, Placement::Column(col), vec![StreamKind::Val], depth);
                Src::Port { item: it, port: 0 }
            }
            Node::Map { func, child } => {
                let input = self.value(child)?;
                let col = self.home_col(id);
                let it = self.push(format!("Map_{}", func.name()), Primitive::Map { func }, vec![input], Row::Val, Placement::Column(col), vec![StreamKind::Val], depth);
                Src::Port { item: it, port: 0 }
            }
            Node::Combine { op, lhs, rhs } => {
                if op == CombineOp::Mask {
                    self.aligned(id, rhs)?
                } else {
                    let a = self.aligned(id, lhs)?;
                    let b = self.aligned(id, rhs)?;
                    let alu = match op {
                        CombineOp::Mul => AluOp::Mul,
                        CombineOp::Div => AluOp::Div,
                        CombineOp::Add => AluOp::Add,
                        CombineOp::Sub => AluOp::Sub,
                        CombineOp::Mask => unreachable!(),
                    };
                    let col = self.home_col(id);
                    let it = self.push(format!("ALU_{}", alu.symbol()), Primitive::Alu { op: alu }, vec![a, b], Row::Val, Placement::Column(col), vec![StreamKind::Val], depth);
                    Src::Port { item: it, port: 0 }
                }
            }
            Node::Reduce { op, var: u, child } => {
                let post = self.ctx[&id].iter().find(|v| self.pos[*v] > self.pos[&u]).cloned();
                match post {
                    Some(f) => Src::Top { var: f, col: self.col_of[&id] },
                    None => {
                        let inner = self.new_scope();
                        let set = self.level(child, &u, inner)?.expect("child iterates the reduced var");
                        self.bind_scope(inner, &u, set.crd);
                        let val = self.value(child)?;
                        let col = self.col_of[&id];
                        let prim = Primitive::Reduce { op, block_dim: self.blocked.then(|| u.clone()) };
                        let label = if op == ReduceOp::Max { "Max" } else { "Reduce" };
                        let it = self.push(format!("{label}_{}", self.disp(&u)), prim, vec![val], Row::Val, Placement::Column(col), vec![StreamKind::Val], depth);
                        Src::Port { item: it, port: 0 }
                    }
                }
            }
        };
        self.vals.insert(id, src.clone());
        Ok(src)
    }
}

#[cfg(test)]
mod tests;
