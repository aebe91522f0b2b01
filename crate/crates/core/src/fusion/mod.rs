//! Cross-expression fusion: reduction renaming, producer inlining, the partial
//! order graph over index vars, tensor views with cycle resolution, and order
//! enumeration.

pub mod pog;
pub mod tree;

pub use pog::{Edge, OrderCount, PartialOrderGraph, Provenance};
pub use tree::{CombineOp, FusionTree, Node, NodeId, TreeNode, ViewId};

use crate::frontend::{Access, BinOp, EinsumExpr, Expr, ReduceOp, Span};
use crate::tensor::{LevelKind, SparseTensor};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FusionError {
    #[error("`{0}` is read before it is defined")]
    UseBeforeDef(String),
    #[error("scheduled order {order:?} violates {}", edge.as_ref().map_or("the var set".to_string(), |e| format!("edge {e}")))]
    InvalidScheduledOrder { order: Vec<String>, edge: Option<Edge> },
    #[error("partial order graph has a cycle through {0:?}")]
    CyclicGraph(Vec<String>),
    #[error("no legal fused iteration exists: {0}")]
    Unschedulable(String),
    #[error("no format known for tensor `{0}`")]
    UnknownTensor(String),
    #[error("access `{0}` repeats an index")]
    RepeatedIndex(String),
    #[error("mask operand `{0}` must be a stored tensor, not a fused intermediate")]
    ComputedMask(String),
}

/// Storage layout of a tensor as seen by the compiler.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorFormat {
    pub shape: Vec<usize>,
    pub mode_order: Vec<usize>,
    pub kinds: Vec<LevelKind>,
    pub block: Option<Vec<usize>>,
}

impl TensorFormat {
    pub fn of(t: &SparseTensor) -> Self {
        TensorFormat {
            shape: t.shape.clone(),
            mode_order: t.mode_order.clone(),
            kinds: t.kinds(),
            block: t.block_shape().map(|b| b.to_vec()),
        }
    }

    /// All-dense tensors are addressed by strides, so any traversal order works.
    pub fn is_all_dense(&self) -> bool {
        self.block.is_none() && self.kinds.iter().all(|k| *k == LevelKind::Dense)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorView {
    pub base: String,
    /// Primes: equivalent uses share a view id.
    pub view_id: usize,
    /// Index var per logical mode.
    pub index_map: Vec<String>,
    pub required_mode_order: Vec<usize>,
    pub needs_permuted_copy: bool,
}

impl TensorView {
    pub fn label(&self) -> String {
        format!("{}{}", self.base, "'".repeat(self.view_id))
    }

    /// Vars in storage order.
    pub fn storage_vars(&self) -> Vec<String> {
        self.required_mode_order.iter().map(|&m| self.index_map[m].clone()).collect()
    }

    fn canonical_map(&self) -> Vec<String> {
        let mut seen: Vec<&String> = Vec::new();
        self.index_map
            .iter()
            .map(|v| {
                if is_fresh(v) {
                    let k = seen.iter().position(|s| *s == v).unwrap_or_else(|| {
                        seen.push(v);
                        seen.len() - 1
                    });
                    format!("~{k}")
                } else {
                    v.clone()
                }
            })
            .collect()
    }
}

/// Host-side materialization inserted before a region to break an order cycle.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PermutedCopy {
    pub source: String,
    pub name: String,
    pub mode_order: Vec<usize>,
}

/// An expression after reduction renaming: every reduction is explicit and single-var.
#[derive(Clone, Debug, PartialEq)]
pub struct RenamedExpr {
    pub name: String,
    pub output: Vec<String>,
    pub body: Expr,
}

pub fn is_fresh(v: &str) -> bool {
    v.len() > 1 && v.starts_with('u') && v[1..].chars().all(|c| c.is_ascii_digit())
}

/// Natural order on var names so that u2 sorts before u10.
pub fn var_key(v: &str) -> (usize, String) {
    (v.len(), v.to_string())
}

#[derive(Clone, Debug, Default)]
pub struct FreshVars {
    next: usize,
    pub origin: BTreeMap<String, String>,
}

impl FreshVars {
    pub fn fresh(&mut self, origin: &str) -> String {
        let root = self.origin.get(origin).cloned().unwrap_or_else(|| origin.to_string());
        let v = format!("u{}", self.next);
        self.next += 1;
        self.origin.insert(v.clone(), root);
        v
    }

    pub fn count(&self) -> usize {
        self.next
    }
}

fn substitute(e: &Expr, map: &BTreeMap<String, String>) -> Expr {
    let sub = |v: &String| map.get(v).cloned().unwrap_or_else(|| v.clone());
    let acc = |a: &Access| Access { tensor: a.tensor.clone(), indices: a.indices.iter().map(sub).collect(), span: a.span };
    match e {
        Expr::Access(a) => Expr::Access(acc(a)),
        Expr::Binary(op, a, b) => Expr::Binary(*op, Box::new(substitute(a, map)), Box::new(substitute(b, map))),
        Expr::Map(f, a) => Expr::Map(*f, Box::new(substitute(a, map))),
        Expr::Mask(m, a) => Expr::Mask(acc(m), Box::new(substitute(a, map))),
        Expr::MaxAll(a) => Expr::MaxAll(Box::new(substitute(a, map))),
        Expr::Reduce(op, vars, a) => Expr::Reduce(*op, vars.iter().map(sub).collect(), Box::new(substitute(a, map))),
    }
}

fn rename_bound(e: &Expr, fresh: &mut FreshVars, scope: &BTreeMap<String, String>) -> Expr {
    match e {
        Expr::Reduce(op, vars, a) => {
            let mut inner = scope.clone();
            let mut us = Vec::new();
            for v in vars {
                let u = fresh.fresh(v);
                inner.insert(v.clone(), u.clone());
                us.push(u);
            }
            let mut body = rename_bound(a, fresh, &inner);
            for u in us.into_iter().rev() {
                body = Expr::Reduce(*op, vec![u], Box::new(body));
            }
            body
        }
        Expr::Access(_) => substitute(e, scope),
        Expr::Binary(op, a, b) => Expr::Binary(*op, Box::new(rename_bound(a, fresh, scope)), Box::new(rename_bound(b, fresh, scope))),
        Expr::Map(f, a) => Expr::Map(*f, Box::new(rename_bound(a, fresh, scope))),
        Expr::Mask(m, a) => {
            let Expr::Access(m2) = substitute(&Expr::Access(m.clone()), scope) else { unreachable!() };
            Expr::Mask(m2, Box::new(rename_bound(a, fresh, scope)))
        }
        Expr::MaxAll(a) => Expr::MaxAll(Box::new(rename_bound(a, fresh, scope))),
    }
}

fn mentions(e: &Expr, v: &str) -> bool {
    e.free_vars().iter().any(|x| x == v)
}

/// Pushes sums below products, divisions and masks whose other operand lacks the var.
fn push_sums(e: Expr) -> Expr {
    match e {
        Expr::Reduce(op, vars, a) => {
            let body = push_sums(*a);
            sink(op, &vars[0], body)
        }
        Expr::Binary(op, a, b) => Expr::Binary(op, Box::new(push_sums(*a)), Box::new(push_sums(*b))),
        Expr::Map(f, a) => Expr::Map(f, Box::new(push_sums(*a))),
        Expr::Mask(m, a) => Expr::Mask(m, Box::new(push_sums(*a))),
        other => other,
    }
}

fn sink(op: ReduceOp, u: &str, body: Expr) -> Expr {
    if op == ReduceOp::Sum {
        match body {
            Expr::Binary(BinOp::Mul, a, b) => {
                return match (mentions(&a, u), mentions(&b, u)) {
                    (true, false) => Expr::Binary(BinOp::Mul, Box::new(sink(op, u, *a)), b),
                    (false, true) => Expr::Binary(BinOp::Mul, a, Box::new(sink(op, u, *b))),
                    _ => Expr::Reduce(op, vec![u.to_string()], Box::new(Expr::Binary(BinOp::Mul, a, b))),
                };
            }
            Expr::Binary(BinOp::Div, a, b) if !mentions(&b, u) => {
                return Expr::Binary(BinOp::Div, Box::new(sink(op, u, *a)), b);
            }
            Expr::Mask(m, a) if !m.indices.iter().any(|x| x == u) => {
                return Expr::Mask(m, Box::new(sink(op, u, *a)));
            }
            other => return Expr::Reduce(op, vec![u.to_string()], Box::new(other)),
        }
    }
    Expr::Reduce(op, vec![u.to_string()], Box::new(body))
}

/// Replaces every reduction var with a fresh u var, in program order, and factors sums.
pub fn rename_reduction_indices(exprs: &[EinsumExpr], fresh: &mut FreshVars) -> Vec<RenamedExpr> {
    exprs
        .iter()
        .map(|e| RenamedExpr {
            name: e.name().to_string(),
            output: e.output.indices.clone(),
            body: push_sums(rename_bound(&e.normalized_body(), fresh, &BTreeMap::new())),
        })
        .collect()
}

/// Mode-order edges implied by one access of a sparse tensor.
pub fn mode_order_edges(access: &Access, format: &TensorFormat) -> Vec<(String, String)> {
    if format.is_all_dense() {
        return vec![];
    }
    let vars: Vec<&String> = format.mode_order.iter().map(|&m| &access.indices[m]).collect();
    vars.windows(2).map(|w| (w[0].clone(), w[1].clone())).collect()
}

/// Inputs to region fusion.
pub struct RegionSpec<'a> {
    /// Region expressions in program order.
    pub exprs: &'a [EinsumExpr],
    /// The expression whose result the fused kernel produces.
    pub output: &'a str,
    pub formats: &'a BTreeMap<String, TensorFormat>,
    pub nnz: &'a BTreeMap<String, f64>,
    pub extents: &'a BTreeMap<String, usize>,
    /// Scheduled order as written; names may be originals or u vars.
    pub order: Option<&'a [String]>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FusedRegion {
    pub output: String,
    /// Output indices in declared order.
    pub output_vars: Vec<String>,
    pub tree: FusionTree,
    /// One view per leaf occurrence.
    pub views: Vec<TensorView>,
    pub pog: PartialOrderGraph,
    pub fresh_count: usize,
    pub origin: BTreeMap<String, String>,
    pub extents: BTreeMap<String, usize>,
    pub formats: BTreeMap<String, TensorFormat>,
    pub permuted_copies: Vec<PermutedCopy>,
    pub selected_order: Option<Vec<String>>,
}

struct Inliner<'a> {
    renamed: &'a [RenamedExpr],
    formats: &'a BTreeMap<String, TensorFormat>,
    fresh: FreshVars,
    uses: BTreeMap<String, usize>,
    tree: FusionTree,
    views: Vec<TensorView>,
}

impl<'a> Inliner<'a> {
    fn producer(&self, name: &str, before: usize) -> Option<usize> {
        self.renamed[..before].iter().position(|r| r.name == name)
    }

    fn leaf(&mut self, a: &Access) -> Result<NodeId, FusionError> {
        let fmt = self.formats.get(&a.tensor).ok_or_else(|| FusionError::UnknownTensor(a.tensor.clone()))?;
        let distinct: BTreeSet<&String> = a.indices.iter().collect();
        if distinct.len() != a.indices.len() {
            return Err(FusionError::RepeatedIndex(a.tensor.clone()));
        }
        let view = TensorView {
            base: a.tensor.clone(),
            view_id: 0,
            index_map: a.indices.clone(),
            required_mode_order: fmt.mode_order.clone(),
            needs_permuted_copy: false,
        };
        self.views.push(view);
        Ok(self.tree.push(Node::Leaf { view: ViewId(self.views.len() - 1) }, None))
    }

    /// Instantiates producer `p` for an access; later copies get fresh u vars.
    fn instantiate(&mut self, p: usize, indices: &[String]) -> Expr {
        let r = &self.renamed[p];
        let mut map: BTreeMap<String, String> = r.output.iter().cloned().zip(indices.iter().cloned()).collect();
        let n = self.uses.entry(r.name.clone()).or_insert(0);
        if *n > 0 {
            let mut bound = Vec::new();
            collect_bound(&r.body, &mut bound);
            for u in bound {
                let f = self.fresh.fresh(&u);
                map.insert(u, f);
            }
        }
        *n += 1;
        substitute(&r.body, &map)
    }

    fn build(&mut self, e: &Expr, at: usize, label: Option<String>) -> Result<NodeId, FusionError> {
        let id = match e {
            Expr::Access(a) => {
                if let Some(p) = self.producer(&a.tensor, at) {
                    let body = self.instantiate(p, &a.indices);
                    return self.build(&body, p, Some(a.tensor.clone()));
                }
                if self.renamed.iter().any(|r| r.name == a.tensor) {
                    return Err(FusionError::UseBeforeDef(a.tensor.clone()));
                }
                self.leaf(a)?
            }
            Expr::Binary(op, a, b) => {
                let lhs = self.build(a, at, None)?;
                let rhs = self.build(b, at, None)?;
                let op = match op {
                    BinOp::Add => CombineOp::Add,
                    BinOp::Sub => CombineOp::Sub,
                    BinOp::Mul => CombineOp::Mul,
                    BinOp::Div => CombineOp::Div,
                };
                self.tree.push(Node::Combine { op, lhs, rhs }, None)
            }
            Expr::Map(f, a) => {
                let child = self.build(a, at, None)?;
                self.tree.push(Node::Map { func: *f, child }, None)
            }
            Expr::Mask(m, a) => {
                if self.producer(&m.tensor, at).is_some() {
                    return Err(FusionError::ComputedMask(m.tensor.clone()));
                }
                let lhs = self.leaf(m)?;
                let rhs = self.build(a, at, None)?;
                self.tree.push(Node::Combine { op: CombineOp::Mask, lhs, rhs }, None)
            }
            Expr::Reduce(op, vars, a) => {
                let child = self.build(a, at, None)?;
                self.tree.push(Node::Reduce { op: *op, var: vars[0].clone(), child }, None)
            }
            Expr::MaxAll(_) => unreachable!("renamed bodies are normalized"),
        };
        if label.is_some() {
            self.tree.nodes[id.0].label = label;
        }
        Ok(id)
    }
}

fn collect_bound(e: &Expr, out: &mut Vec<String>) {
    match e {
        Expr::Reduce(_, vars, a) => {
            out.extend(vars.iter().cloned());
            collect_bound(a, out);
        }
        Expr::Binary(_, a, b) => {
            collect_bound(a, out);
            collect_bound(b, out);
        }
        Expr::Map(_, a) | Expr::Mask(_, a) | Expr::MaxAll(a) => collect_bound(a, out),
        Expr::Access(_) => {}
    }
}

/// Links every read of an in-region intermediate to a copy of its producer body.
pub fn inline_producers(
    renamed: &[RenamedExpr],
    output: &str,
    formats: &BTreeMap<String, TensorFormat>,
    fresh: FreshVars,
) -> Result<(FusionTree, Vec<TensorView>, FreshVars), FusionError> {
    let at = renamed.iter().position(|r| r.name == output).ok_or_else(|| FusionError::UnknownTensor(output.to_string()))?;
    let mut inl = Inliner { renamed, formats, fresh, uses: BTreeMap::new(), tree: FusionTree::default(), views: vec![] };
    inl.uses.insert(output.to_string(), 1);
    let body = renamed[at].body.clone();
    let root = inl.build(&body, at, Some(output.to_string()))?;
    inl.tree.root = root;
    Ok((inl.tree, inl.views, inl.fresh))
}

impl FusedRegion {
    pub fn view_of(&self, leaf: NodeId) -> &TensorView {
        match self.tree.node(leaf) {
            Node::Leaf { view } => &self.views[view.0],
            _ => panic!("node {leaf:?} is not a leaf"),
        }
    }

    /// Free vars of a subtree in first-appearance order.
    pub fn free_vars(&self, id: NodeId) -> Vec<String> {
        match self.tree.node(id) {
            Node::Leaf { view } => self.views[view.0].index_map.clone(),
            Node::Map { child, .. } => self.free_vars(*child),
            Node::Combine { lhs, rhs, .. } => {
                let mut out = self.free_vars(*lhs);
                for v in self.free_vars(*rhs) {
                    if !out.contains(&v) {
                        out.push(v);
                    }
                }
                out
            }
            Node::Reduce { var, child, .. } => self.free_vars(*child).into_iter().filter(|v| v != var).collect(),
        }
    }

    pub fn all_vars(&self) -> Vec<String> {
        let mut out = self.free_vars(self.tree.root);
        let mut internal: Vec<String> = self.tree.internal_vars(self.tree.root).into_iter().collect();
        internal.sort_by_key(|v| var_key(v));
        out.extend(internal);
        out
    }

    /// Addition and subtraction take the union of coordinates; a broadcast
    /// operand covers the full range of the vars it lacks.
    pub fn is_union(&self, id: NodeId) -> bool {
        matches!(self.tree.node(id), Node::Combine { op: CombineOp::Add | CombineOp::Sub, .. })
    }

    pub fn order(&self) -> &[String] {
        self.selected_order.as_deref().unwrap_or(&[])
    }

    /// Column-friendly name of a node: its label, or an anonymous name.
    pub fn node_name(&self, id: NodeId) -> String {
        self.tree.label(id).map(|s| s.to_string()).unwrap_or_else(|| format!("~t{}", id.0))
    }

    /// Tensors the region reads, after permuted copies.
    pub fn input_tensors(&self) -> Vec<String> {
        let mut out: Vec<String> = self.views.iter().map(|v| v.base.clone()).collect();
        out.sort();
        out.dedup();
        out
    }

    /// Renders the fused region as one explicit Einsum program that parses back.
    pub fn render(&self) -> String {
        let mut s = String::new();
        let mut vars = self.all_vars();
        vars.sort_by_key(|v| var_key(v));
        for v in &vars {
            let _ = writeln!(s, "index {v} = {};", self.extents.get(v).copied().unwrap_or(1));
        }
        let mut bases: Vec<&TensorView> = self.views.iter().collect();
        bases.sort_by(|a, b| a.base.cmp(&b.base));
        bases.dedup_by(|a, b| a.base == b.base);
        for v in bases {
            let shape = &self.formats[&v.base].shape;
            let dims: Vec<String> = shape.iter().map(|n| n.to_string()).collect();
            let _ = writeln!(s, "tensor {}({});", v.base, dims.join(", "));
        }
        let body = self.render_node(self.tree.root);
        let _ = writeln!(s, "{}({}) = {};", self.output, self.output_vars.join(", "), crate::frontend::print_expr(&body));
        s
    }

    pub fn render_node(&self, id: NodeId) -> Expr {
        let span = Span::default();
        match self.tree.node(id) {
            Node::Leaf { view } => {
                let v = &self.views[view.0];
                Expr::Access(Access { tensor: v.base.clone(), indices: v.index_map.clone(), span })
            }
            Node::Map { func, child } => Expr::Map(*func, Box::new(self.render_node(*child))),
            Node::Combine { op, lhs, rhs } => {
                let (a, b) = (self.render_node(*lhs), self.render_node(*rhs));
                match op {
                    CombineOp::Mask => {
                        let Expr::Access(m) = a else { unreachable!("mask operands are leaves") };
                        Expr::Mask(m, Box::new(b))
                    }
                    CombineOp::Mul => Expr::Binary(BinOp::Mul, Box::new(a), Box::new(b)),
                    CombineOp::Div => Expr::Binary(BinOp::Div, Box::new(a), Box::new(b)),
                    CombineOp::Add => Expr::Binary(BinOp::Add, Box::new(a), Box::new(b)),
                    CombineOp::Sub => Expr::Binary(BinOp::Sub, Box::new(a), Box::new(b)),
                }
            }
            Node::Reduce { op, var, child } => Expr::Reduce(*op, vec![var.clone()], Box::new(self.render_node(*child))),
        }
    }
}

/// Assigns primes: views of the same base with equal mode order and canonical
/// index map share an id.
fn assign_view_ids(views: &mut [TensorView]) {
    let mut classes: Vec<(String, Vec<usize>, Vec<String>, usize)> = Vec::new();
    for v in views.iter_mut() {
        let key = (v.base.clone(), v.required_mode_order.clone(), v.canonical_map());
        if let Some(c) = classes.iter().find(|c| c.0 == key.0 && c.1 == key.1 && c.2 == key.2) {
            v.view_id = c.3;
        } else {
            let id = classes.iter().filter(|c| c.0 == v.base).count();
            classes.push((key.0, key.1, key.2, id));
            v.view_id = id;
        }
    }
}

struct PogBuilder<'a> {
    region: &'a mut FusedRegion,
    nnz: &'a BTreeMap<String, f64>,
    legality: Vec<(String, String)>,
}

impl PogBuilder<'_> {
    fn view_edges(&self, skip: Option<usize>) -> Vec<(String, String, usize)> {
        let mut out = Vec::new();
        for (i, v) in self.region.views.iter().enumerate() {
            if v.needs_permuted_copy || Some(i) == skip {
                continue;
            }
            let fmt = &self.region.formats[&v.base];
            if fmt.is_all_dense() {
                continue;
            }
            let vars = v.storage_vars();
            for w in vars.windows(2) {
                out.push((w[0].clone(), w[1].clone(), i));
            }
        }
        out
    }

    fn graph(&self, skip: Option<usize>, extra: &[(String, String)]) -> PartialOrderGraph {
        let mut g = PartialOrderGraph::new();
        for v in self.region.all_vars() {
            g.add_node(&v);
        }
        for (a, b, _) in self.view_edges(skip) {
            g.add_edge(&a, &b, Provenance::ModeOrder);
        }
        for (a, b) in self.legality.iter().chain(extra) {
            g.add_edge(a, b, Provenance::ProducerConsumer);
        }
        g
    }

    fn candidates(&self) -> Vec<usize> {
        let mut c: Vec<usize> = (0..self.region.views.len())
            .filter(|&i| {
                let v = &self.region.views[i];
                !v.needs_permuted_copy && !self.region.formats[&v.base].is_all_dense() && v.index_map.len() > 1
            })
            .collect();
        let nnz = |i: usize| {
            let b = &self.region.views[i].base;
            self.nnz.get(b).copied().unwrap_or_else(|| self.region.formats[b].shape.iter().product::<usize>() as f64)
        };
        c.sort_by(|&a, &b| {
            nnz(a)
                .partial_cmp(&nnz(b))
                .unwrap_or(std::cmp::Ordering::Equal)
                .then_with(|| self.region.views[a].base.cmp(&self.region.views[b].base))
                .then(a.cmp(&b))
        });
        c
    }

    /// Breaks mode-order cycles by marking the cheapest conflicting view for a copy.
    fn resolve_cycles(&mut self) {
        loop {
            let g = self.graph(None, &[]);
            let cyclic: Vec<Vec<String>> = g.sccs().into_iter().filter(|c| c.len() > 1).collect();
            if cyclic.is_empty() {
                return;
            }
            let in_cycle = |a: &str, b: &str| cyclic.iter().any(|c| c.iter().any(|x| x == a) && c.iter().any(|x| x == b));
            let edges = self.view_edges(None);
            let pick = self
                .candidates()
                .into_iter()
                .find(|&i| edges.iter().any(|(a, b, v)| *v == i && in_cycle(a, b)))
                .expect("a mode-order cycle always involves a sparse view");
            self.region.views[pick].needs_permuted_copy = true;
        }
    }

    /// Adds the first option that keeps the graph acyclic, permuting a view if needed.
    fn require(&mut self, options: Vec<Vec<(String, String)>>, what: &str) -> Result<(), FusionError> {
        for opt in &options {
            if self.graph(None, opt).is_acyclic() {
                self.legality.extend(opt.iter().cloned());
                return Ok(());
            }
        }
        for cand in self.candidates() {
            for opt in &options {
                if self.graph(Some(cand), opt).is_acyclic() {
                    self.region.views[cand].needs_permuted_copy = true;
                    self.legality.extend(opt.iter().cloned());
                    return Ok(());
                }
            }
        }
        Err(FusionError::Unschedulable(what.to_string()))
    }

    fn legality_edges(&mut self) -> Result<(), FusionError> {
        let order = self.region.tree.preorder();
        for n in order {
            match self.region.tree.node(n).clone() {
                Node::Reduce { var, .. } => {
                    let free = self.region.free_vars(n);
                    let mut options = Vec::new();
                    for star in free.iter().rev() {
                        options.push(free.iter().filter(|g| *g != star).map(|g| (g.clone(), var.clone())).collect());
                    }
                    options.push(free.iter().map(|g| (g.clone(), var.clone())).collect());
                    self.require(options, &format!("reduction over {var}"))?;
                }
                Node::Combine { lhs, rhs, .. } => {
                    for (c, s) in [(lhs, rhs), (rhs, lhs)] {
                        let internal = self.region.tree.internal_vars(c);
                        if internal.is_empty() {
                            continue;
                        }
                        let fc = self.region.free_vars(c);
                        for b in self.region.free_vars(s).into_iter().filter(|b| !fc.contains(b)) {
                            let append: Vec<(String, String)> = fc.iter().map(|f| (f.clone(), b.clone())).collect();
                            let recompute: Vec<(String, String)> = internal.iter().map(|u| (b.clone(), u.clone())).collect();
                            self.require(vec![append, recompute], &format!("operand sharing {b}"))?;
                        }
                    }
                }
                _ => {}
            }
        }
        Ok(())
    }
}

/// Builds the partial order graph, resolving conflicts with permuted copies.
pub fn manage_views(region: &mut FusedRegion, nnz: &BTreeMap<String, f64>) -> Result<(), FusionError> {
    assign_view_ids(&mut region.views);
    let mut b = PogBuilder { region, nnz, legality: vec![] };
    b.resolve_cycles();
    b.legality_edges()?;
    let g = b.graph(None, &[]);
    let legality = b.legality.clone();
    let first = g.first_order().ok_or_else(|| FusionError::CyclicGraph(g.sccs().into_iter().find(|c| c.len() > 1).unwrap_or_default()))?;
    let pos: BTreeMap<&str, usize> = first.iter().enumerate().map(|(i, v)| (v.as_str(), i)).collect();
    let mut copies: Vec<PermutedCopy> = Vec::new();
    for v in region.views.iter_mut().filter(|v| v.needs_permuted_copy) {
        let mut order: Vec<usize> = (0..v.index_map.len()).collect();
        order.sort_by_key(|&m| pos[v.index_map[m].as_str()]);
        let name = match copies.iter().find(|c| c.source == v.base && c.mode_order == order) {
            Some(c) => c.name.clone(),
            None => {
                let name = format!("{}_p{}", v.base, copies.iter().filter(|c| c.source == v.base).count());
                copies.push(PermutedCopy { source: v.base.clone(), name: name.clone(), mode_order: order.clone() });
                name
            }
        };
        let mut fmt = region.formats[&v.base].clone();
        fmt.mode_order = order.clone();
        region.formats.insert(name.clone(), fmt);
        v.base = name;
        v.required_mode_order = order;
        v.needs_permuted_copy = false;
    }
    region.permuted_copies = copies;
    assign_view_ids(&mut region.views);
    // rebuild with the copies' concordant edges
    let rebuilt = PogBuilder { region, nnz, legality };
    let g = rebuilt.graph(None, &[]);
    debug_assert!(g.is_acyclic());
    region.pog = g;
    Ok(())
}

/// Enumerates linear extensions of the region's graph, lexicographically.
pub fn enumerate_orders(pog: &PartialOrderGraph, cap: usize) -> Result<(Vec<Vec<String>>, OrderCount), FusionError> {
    if !pog.is_acyclic() {
        return Err(FusionError::CyclicGraph(pog.sccs().into_iter().find(|c| c.len() > 1).unwrap_or_default()));
    }
    Ok(pog.enumerate(cap))
}

/// Maps a written order onto the region's vars; u vars sort by their origin's slot.
pub fn resolve_order(region: &FusedRegion, written: &[String]) -> Option<Vec<String>> {
    let mut keyed = Vec::new();
    for v in region.all_vars() {
        let slot = written.iter().position(|w| *w == v).or_else(|| region.origin.get(&v).and_then(|o| written.iter().position(|w| w == o)))?;
        keyed.push((slot, var_key(&v), v));
    }
    keyed.sort();
    Some(keyed.into_iter().map(|(_, _, v)| v).collect())
}

/// Runs renaming, inlining, view management and order selection.
pub fn fuse_region(spec: &RegionSpec) -> Result<FusedRegion, FusionError> {
    let mut fresh = FreshVars::default();
    let renamed = rename_reduction_indices(spec.exprs, &mut fresh);
    let (tree, views, fresh) = inline_producers(&renamed, spec.output, spec.formats, fresh)?;
    let out_expr = spec.exprs.iter().find(|e| e.name() == spec.output).expect("output checked by inlining");
    let mut extents = spec.extents.clone();
    for (u, o) in &fresh.origin {
        if let Some(&n) = spec.extents.get(o) {
            extents.insert(u.clone(), n);
        }
    }
    let mut region = FusedRegion {
        output: spec.output.to_string(),
        output_vars: out_expr.output.indices.clone(),
        tree,
        views,
        pog: PartialOrderGraph::new(),
        fresh_count: fresh.count(),
        origin: fresh.origin.clone(),
        extents,
        formats: spec.formats.clone(),
        permuted_copies: vec![],
        selected_order: None,
    };
    manage_views(&mut region, spec.nnz)?;
    let order = match spec.order.and_then(|w| resolve_order(&region, w)) {
        Some(order) => {
            region.pog.check_order(&order).map_err(|edge| FusionError::InvalidScheduledOrder { order: order.clone(), edge })?;
            order
        }
        None => region.pog.first_order().expect("acyclic graph has an order"),
    };
    region.selected_order = Some(order);
    Ok(region)
}

/// Adds dataflow-order edges pinning each contraction to its locally cheapest
/// order, as ranked by expected iteration counts.
pub fn pin_local_orders(region: &FusedRegion, densities: &BTreeMap<String, f64>) -> PartialOrderGraph {
    let mut g = region.pog.clone();
    for n in region.tree.preorder() {
        let Node::Reduce { var, .. } = region.tree.node(n) else { continue };
        let mut local = region.free_vars(n);
        local.push(var.clone());
        local.sort_by_key(|v| var_key(v));
        let leaves = region.tree.leaves(n);
        let density = |v: &str| {
            leaves
                .iter()
                .map(|l| region.view_of(*l))
                .filter(|view| view.index_map.iter().any(|x| x == v))
                .map(|view| densities.get(&view.base).copied().unwrap_or(1.0))
                .fold(1.0f64, f64::min)
        };
        let mut best: Option<(f64, Vec<String>)> = None;
        for perm in permutations(&local) {
            let ok = perm.windows(2).all(|w| !g.has_path(&w[1], &w[0]));
            if !ok {
                continue;
            }
            let mut work = 0.0;
            let mut span = 1.0;
            for v in &perm {
                span *= region.extents.get(v).copied().unwrap_or(1) as f64 * density(v);
                work += span;
            }
            if best.as_ref().is_none_or(|(w, _)| work < *w - 1e-12) {
                best = Some((work, perm));
            }
        }
        if let Some((_, perm)) = best {
            let edges: Vec<(String, String)> = perm.windows(2).map(|w| (w[0].clone(), w[1].clone())).collect();
            if g.accepts(&edges) {
                for (a, b) in edges {
                    g.add_edge(&a, &b, Provenance::DataflowOrder);
                }
            }
        }
    }
    g
}

fn permutations(items: &[String]) -> Vec<Vec<String>> {
    if items.len() <= 1 {
        return vec![items.to_vec()];
    }
    let mut out = Vec::new();
    for i in 0..items.len() {
        let mut rest = items.to_vec();
        let head = rest.remove(i);
        for mut p in permutations(&rest) {
            p.insert(0, head.clone());
            out.push(p);
        }
    }
    out
}

#[cfg(test)]
mod tests;
