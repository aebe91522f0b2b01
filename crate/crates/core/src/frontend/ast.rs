use crate::tensor::LevelKind;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

/// Source position, 1-based.
#[derive(Clone, Copy, Debug, Default, Serialize, Deserialize)]
pub struct Span {
    pub line: usize,
    pub col: usize,
}

// Spans never take part in structural equality; round-trip tests compare programs
// printed from different sources.
impl PartialEq for Span {
    fn eq(&self, _: &Self) -> bool {
        true
    }
}

impl fmt::Display for Span {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.line, self.col)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IndexDecl {
    pub name: String,
    pub extent: usize,
    pub span: Span,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Dim {
    Index(String),
    Extent(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Role {
    Input,
    Output,
    Intermediate,
}

impl Role {
    pub fn keyword(self) -> &'static str {
        match self {
            Role::Input => "input",
            Role::Output => "output",
            Role::Intermediate => "intermediate",
        }
    }
}

/// One entry of a level chain: the storage kind of logical mode `mode`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelSpec {
    pub kind: LevelKind,
    pub mode: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorDecl {
    pub name: String,
    pub dims: Vec<Dim>,
    /// Level chain in storage order; empty means the default for the role.
    pub levels: Vec<LevelSpec>,
    /// Explicit storage order overriding the chain order.
    pub order: Option<Vec<usize>>,
    pub role: Option<Role>,
    pub span: Span,
}

impl TensorDecl {
    pub fn order(&self) -> usize {
        self.dims.len()
    }

    /// Storage order and level kinds indexed by storage level.
    pub fn storage(&self) -> (Vec<usize>, Vec<LevelKind>) {
        if self.levels.is_empty() {
            let order = self.order.clone().unwrap_or_else(|| (0..self.dims.len()).collect());
            return (order, vec![LevelKind::Compressed; self.dims.len()]);
        }
        let chain: Vec<usize> = self.levels.iter().map(|l| l.mode).collect();
        let order = self.order.clone().unwrap_or(chain);
        let kinds = order
            .iter()
            .map(|m| self.levels.iter().find(|l| l.mode == *m).map_or(LevelKind::Compressed, |l| l.kind))
            .collect();
        (order, kinds)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Access {
    pub tensor: String,
    pub indices: Vec<String>,
    pub span: Span,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
}

impl BinOp {
    pub fn symbol(self) -> &'static str {
        match self {
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
            BinOp::Div => "/",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum MapFn {
    Relu,
    Exp,
    Gelu,
    Scale(f64),
}

impl MapFn {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            MapFn::Relu => x.max(0.0),
            MapFn::Exp => x.exp(),
            MapFn::Gelu => 0.5 * x * (1.0 + (0.797_884_560_802_865_4 * (x + 0.044715 * x * x * x)).tanh()),
            MapFn::Scale(c) => c * x,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            MapFn::Relu => "relu",
            MapFn::Exp => "exp",
            MapFn::Gelu => "gelu",
            MapFn::Scale(_) => "scale",
        }
    }
}

impl fmt::Display for MapFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MapFn::Scale(c) => write!(f, "scale({c:?})"),
            other => f.write_str(other.name()),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ReduceOp {
    Sum,
    Max,
}

impl ReduceOp {
    pub fn keyword(self) -> &'static str {
        match self {
            ReduceOp::Sum => "sum",
            ReduceOp::Max => "max",
        }
    }

    pub fn identity(self) -> f64 {
        0.0
    }

    pub fn combine(self, a: f64, b: f64) -> f64 {
        match self {
            ReduceOp::Sum => a + b,
            ReduceOp::Max => a.max(b),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Expr {
    Access(Access),
    Binary(BinOp, Box<Expr>, Box<Expr>),
    Map(MapFn, Box<Expr>),
    /// Keeps the body where the mask tensor stores a coordinate.
    Mask(Access, Box<Expr>),
    /// Explicit reduction over the listed vars.
    Reduce(ReduceOp, Vec<String>, Box<Expr>),
    /// `max(E)`: reduces every var of E that the output does not carry with max.
    MaxAll(Box<Expr>),
}

impl Expr {
    /// Free vars in first-appearance order.
    pub fn free_vars(&self) -> Vec<String> {
        let mut out = Vec::new();
        self.collect_free(&mut out);
        out
    }

    fn collect_free(&self, out: &mut Vec<String>) {
        let push = |out: &mut Vec<String>, v: &String| {
            if !out.contains(v) {
                out.push(v.clone());
            }
        };
        match self {
            Expr::Access(a) => a.indices.iter().for_each(|v| push(out, v)),
            Expr::Binary(_, a, b) => {
                a.collect_free(out);
                b.collect_free(out);
            }
            Expr::Map(_, a) | Expr::MaxAll(a) => a.collect_free(out),
            Expr::Mask(m, a) => {
                m.indices.iter().for_each(|v| push(out, v));
                a.collect_free(out);
            }
            Expr::Reduce(_, vars, a) => {
                let mut inner = Vec::new();
                a.collect_free(&mut inner);
                inner.iter().filter(|v| !vars.contains(v)).for_each(|v| push(out, v));
            }
        }
    }

    pub fn accesses(&self) -> Vec<&Access> {
        let mut out = Vec::new();
        self.visit_accesses(&mut |a| out.push(a));
        out
    }

    pub fn visit_accesses<'a>(&'a self, f: &mut dyn FnMut(&'a Access)) {
        match self {
            Expr::Access(a) => f(a),
            Expr::Binary(_, a, b) => {
                a.visit_accesses(f);
                b.visit_accesses(f);
            }
            Expr::Map(_, a) | Expr::MaxAll(a) | Expr::Reduce(_, _, a) => a.visit_accesses(f),
            Expr::Mask(m, a) => {
                f(m);
                a.visit_accesses(f);
            }
        }
    }

    fn mentions(&self, var: &str) -> bool {
        self.free_vars().iter().any(|v| v == var)
    }

    /// Makes every reduction explicit. Vars under `max(E)` that the output lacks are
    /// max-reduced there; the remaining implicit vars are summed at the lowest common
    /// ancestor of their occurrences.
    pub fn normalized(&self, output: &[String]) -> Expr {
        let lowered = self.lower_max_all(output);
        let mut implicit: Vec<String> = lowered.free_vars().into_iter().filter(|v| !output.contains(v)).collect();
        implicit.dedup();
        let mut e = lowered;
        for v in implicit {
            e = e.place_sum(&v);
        }
        e
    }

    fn lower_max_all(&self, output: &[String]) -> Expr {
        match self {
            Expr::MaxAll(a) => {
                let inner = a.lower_max_all(output);
                let vars: Vec<String> = inner.free_vars().into_iter().filter(|v| !output.contains(v)).collect();
                if vars.is_empty() {
                    inner
                } else {
                    Expr::Reduce(ReduceOp::Max, vars, Box::new(inner))
                }
            }
            Expr::Access(_) => self.clone(),
            Expr::Binary(op, a, b) => Expr::Binary(*op, Box::new(a.lower_max_all(output)), Box::new(b.lower_max_all(output))),
            Expr::Map(f, a) => Expr::Map(*f, Box::new(a.lower_max_all(output))),
            Expr::Mask(m, a) => Expr::Mask(m.clone(), Box::new(a.lower_max_all(output))),
            Expr::Reduce(op, vars, a) => {
                // vars bound here are not implicit inside
                let mut out: Vec<String> = output.to_vec();
                out.extend(vars.iter().cloned());
                Expr::Reduce(*op, vars.clone(), Box::new(a.lower_max_all(&out)))
            }
        }
    }

    /// Wraps the lowest subtree containing every free occurrence of `v` in a sum.
    fn place_sum(&self, v: &str) -> Expr {
        let wrap = |e: &Expr| Expr::Reduce(ReduceOp::Sum, vec![v.to_string()], Box::new(e.clone()));
        match self {
            Expr::Binary(op, a, b) => match (a.mentions(v), b.mentions(v)) {
                (true, false) => Expr::Binary(*op, Box::new(a.place_sum(v)), b.clone()),
                (false, true) => Expr::Binary(*op, a.clone(), Box::new(b.place_sum(v))),
                _ => wrap(self),
            },
            Expr::Map(f, a) if a.mentions(v) => Expr::Map(*f, Box::new(a.place_sum(v))),
            Expr::Reduce(op, vars, a) if a.mentions(v) => Expr::Reduce(*op, vars.clone(), Box::new(a.place_sum(v))),
            Expr::Mask(m, a) if !m.indices.iter().any(|x| x == v) => Expr::Mask(m.clone(), Box::new(a.place_sum(v))),
            _ => wrap(self),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EinsumExpr {
    pub output: Access,
    pub body: Expr,
    pub span: Span,
}

impl EinsumExpr {
    pub fn name(&self) -> &str {
        &self.output.tensor
    }

    /// Body with every reduction explicit.
    pub fn normalized_body(&self) -> Expr {
        self.body.normalized(&self.output.indices)
    }

    /// Vars reduced anywhere in the body, in first-encounter order.
    pub fn reduction_vars(&self) -> Vec<String> {
        let mut out = Vec::new();
        collect_reduce_vars(&self.normalized_body(), &mut out);
        out
    }
}

fn collect_reduce_vars(e: &Expr, out: &mut Vec<String>) {
    match e {
        Expr::Reduce(_, vars, a) => {
            for v in vars {
                if !out.contains(v) {
                    out.push(v.clone());
                }
            }
            collect_reduce_vars(a, out);
        }
        Expr::Binary(_, a, b) => {
            collect_reduce_vars(a, out);
            collect_reduce_vars(b, out);
        }
        Expr::Map(_, a) | Expr::MaxAll(a) | Expr::Mask(_, a) => collect_reduce_vars(a, out),
        Expr::Access(_) => {}
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rate {
    pub a: (String, String),
    pub b: (String, String),
    pub rate: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Directive {
    Order(Vec<String>),
    Parallelize(String, u32),
    Block(Vec<usize>),
    Density(String, f64),
    Rate(Rate),
    OrdersCap(usize),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Reshape {
    pub output: String,
    pub input: String,
    pub span: Span,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Item {
    Expr(EinsumExpr),
    Fuse { exprs: Vec<EinsumExpr>, directives: Vec<Directive>, span: Span },
    Reshape(Reshape),
}

pub const DEFAULT_ORDER_CAP: usize = 10_000;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    /// Expression ids per region, in program order.
    pub regions: Vec<Vec<usize>>,
    /// Per-region dataflow order, as written (names may be original or u vars).
    pub orders: Vec<Option<Vec<String>>>,
    pub parallelize: Vec<(String, u32)>,
    pub block: Option<Vec<usize>>,
    pub order_cap: usize,
    pub densities: BTreeMap<String, f64>,
    pub rates: Vec<Rate>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EinsumProgram {
    pub indices: Vec<IndexDecl>,
    pub tensors: Vec<TensorDecl>,
    pub items: Vec<Item>,
    pub directives: Vec<Directive>,
}

impl EinsumProgram {
    pub fn expressions(&self) -> Vec<&EinsumExpr> {
        let mut out = Vec::new();
        for item in &self.items {
            match item {
                Item::Expr(e) => out.push(e),
                Item::Fuse { exprs, .. } => out.extend(exprs.iter()),
                Item::Reshape(_) => {}
            }
        }
        out
    }

    pub fn reshapes(&self) -> Vec<&Reshape> {
        self.items
            .iter()
            .filter_map(|i| match i {
                Item::Reshape(r) => Some(r),
                _ => None,
            })
            .collect()
    }

    pub fn tensor(&self, name: &str) -> Option<&TensorDecl> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn index_extent(&self, name: &str) -> Option<usize> {
        self.indices.iter().find(|i| i.name == name).map(|i| i.extent)
    }

    /// Logical shape of a declared tensor.
    pub fn shape_of(&self, name: &str) -> Option<Vec<usize>> {
        let decl = self.tensor(name)?;
        decl.dims
            .iter()
            .map(|d| match d {
                Dim::Extent(n) => Some(*n),
                Dim::Index(i) => self.index_extent(i),
            })
            .collect()
    }

    /// Names written by some expression or reshape.
    pub fn written(&self) -> BTreeSet<String> {
        let mut out: BTreeSet<String> = self.expressions().iter().map(|e| e.name().to_string()).collect();
        out.extend(self.reshapes().iter().map(|r| r.output.clone()));
        out
    }

    /// Names read by some expression or reshape.
    pub fn read(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        for e in self.expressions() {
            e.body.visit_accesses(&mut |a| {
                out.insert(a.tensor.clone());
            });
        }
        out.extend(self.reshapes().iter().map(|r| r.input.clone()));
        out
    }

    pub fn inputs(&self) -> Vec<String> {
        let written = self.written();
        self.tensors.iter().filter(|t| !written.contains(&t.name)).map(|t| t.name.clone()).collect()
    }

    /// Written tensors nobody reads, plus tensors declared as outputs.
    pub fn outputs(&self) -> Vec<String> {
        let read = self.read();
        let mut out: Vec<String> = Vec::new();
        for e in self.expressions() {
            let declared_out = self.tensor(e.name()).and_then(|t| t.role) == Some(Role::Output);
            if declared_out || !read.contains(e.name()) {
                out.push(e.name().to_string());
            }
        }
        for r in self.reshapes() {
            if !read.contains(&r.output) {
                out.push(r.output.clone());
            }
        }
        out
    }

    /// Regions and per-region directives derived from the item structure.
    pub fn schedule(&self) -> Schedule {
        let mut s = Schedule { order_cap: DEFAULT_ORDER_CAP, ..Default::default() };
        let mut next = 0usize;
        let apply = |s: &mut Schedule, d: &Directive, region: Option<usize>| match d {
            Directive::Order(vars) => {
                if let Some(r) = region {
                    s.orders[r] = Some(vars.clone());
                }
            }
            Directive::Parallelize(v, f) => s.parallelize.push((v.clone(), *f)),
            Directive::Block(b) => s.block = Some(b.clone()),
            Directive::Density(t, d) => {
                s.densities.insert(t.clone(), *d);
            }
            Directive::Rate(r) => s.rates.push(r.clone()),
            Directive::OrdersCap(n) => s.order_cap = *n,
        };
        for item in &self.items {
            match item {
                Item::Expr(_) => {
                    s.regions.push(vec![next]);
                    s.orders.push(None);
                    next += 1;
                }
                Item::Fuse { exprs, directives, .. } => {
                    s.regions.push((next..next + exprs.len()).collect());
                    s.orders.push(None);
                    next += exprs.len();
                    let r = s.regions.len() - 1;
                    for d in directives {
                        apply(&mut s, d, Some(r));
                    }
                }
                Item::Reshape(_) => {}
            }
        }
        // A top-level order applies to every region it can be resolved against;
        // resolution happens in the fusion engine, so it is recorded for all regions
        // lacking their own.
        for d in &self.directives {
            match d {
                Directive::Order(vars) => {
                    for o in s.orders.iter_mut().filter(|o| o.is_none()) {
                        *o = Some(vars.clone());
                    }
                }
                other => apply(&mut s, other, None),
            }
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn acc(t: &str, ix: &[&str]) -> Expr {
        Expr::Access(Access { tensor: t.into(), indices: ix.iter().map(|s| s.to_string()).collect(), span: Span::default() })
    }

    fn mul(a: Expr, b: Expr) -> Expr {
        Expr::Binary(BinOp::Mul, Box::new(a), Box::new(b))
    }

    #[test]
    fn sums_land_at_lowest_common_ancestor() {
        let body = mul(mul(acc("A", &["i", "l"]), acc("X", &["l", "m"])), acc("W", &["m", "j"]));
        let n = body.normalized(&["i".into(), "j".into()]);
        let Expr::Reduce(ReduceOp::Sum, outer, inner) = n else { panic!("expected outer sum") };
        assert_eq!(outer, vec!["m".to_string()]);
        let Expr::Binary(BinOp::Mul, left, _) = *inner else { panic!() };
        assert!(matches!(*left, Expr::Reduce(ReduceOp::Sum, ref v, _) if v == &vec!["l".to_string()]));
    }

    #[test]
    fn max_all_reduces_missing_vars() {
        let body = Expr::MaxAll(Box::new(acc("S", &["i", "j"])));
        let n = body.normalized(&["i".into()]);
        assert!(matches!(n, Expr::Reduce(ReduceOp::Max, ref v, _) if v == &vec!["j".to_string()]));
    }

    #[test]
    fn sum_stays_inside_map() {
        let body = Expr::Map(MapFn::Relu, Box::new(mul(acc("A", &["i", "k"]), acc("B", &["k"]))));
        let n = body.normalized(&["i".into()]);
        assert!(matches!(n, Expr::Map(MapFn::Relu, ref a) if matches!(**a, Expr::Reduce(..))));
    }
}
