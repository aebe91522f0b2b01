use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fmt::Write as _;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Provenance {
    ModeOrder,
    DataflowOrder,
    ProducerConsumer,
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Edge {
    pub from: String,
    pub to: String,
    pub provenance: Provenance,
}

impl fmt::Display for Edge {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}->{}", self.from, self.to)
    }
}

/// Exact when the enumeration finished below the cap.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum OrderCount {
    Exact(u128),
    AtLeast(u128),
}

impl fmt::Display for OrderCount {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OrderCount::Exact(n) => write!(f, "{n}"),
            OrderCount::AtLeast(n) => write!(f, ">= {n}"),
        }
    }
}

/// Outer-before-inner constraints over index vars.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PartialOrderGraph {
    nodes: BTreeSet<String>,
    edges: Vec<Edge>,
}

impl PartialOrderGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_node(&mut self, v: &str) {
        self.nodes.insert(v.to_string());
    }

    pub fn nodes(&self) -> impl Iterator<Item = &String> {
        self.nodes.iter()
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn contains(&self, v: &str) -> bool {
        self.nodes.contains(v)
    }

    /// Adds an edge unless the same (from, to) pair already exists. Self loops are ignored.
    pub fn add_edge(&mut self, from: &str, to: &str, provenance: Provenance) {
        if from == to {
            return;
        }
        self.add_node(from);
        self.add_node(to);
        if !self.edges.iter().any(|e| e.from == from && e.to == to) {
            self.edges.push(Edge { from: from.into(), to: to.into(), provenance });
        }
    }

    pub fn remove_edges(&mut self, pred: impl Fn(&Edge) -> bool) {
        self.edges.retain(|e| !pred(e));
    }

    fn successors(&self) -> BTreeMap<&str, Vec<&str>> {
        let mut succ: BTreeMap<&str, Vec<&str>> = self.nodes.iter().map(|n| (n.as_str(), Vec::new())).collect();
        for e in &self.edges {
            succ.entry(e.from.as_str()).or_default().push(e.to.as_str());
        }
        succ
    }

    pub fn has_path(&self, from: &str, to: &str) -> bool {
        let succ = self.successors();
        let mut stack = vec![from];
        let mut seen = BTreeSet::new();
        while let Some(n) = stack.pop() {
            if n == to {
                return true;
            }
            if seen.insert(n) {
                stack.extend(succ.get(n).into_iter().flatten().copied());
            }
        }
        false
    }

    pub fn is_acyclic(&self) -> bool {
        self.sccs().iter().all(|c| c.len() == 1)
    }

    /// True when adding all of `extra` keeps the graph acyclic.
    pub fn accepts(&self, extra: &[(String, String)]) -> bool {
        let mut g = self.clone();
        for (a, b) in extra {
            if a == b {
                return false;
            }
            g.add_edge(a, b, Provenance::ProducerConsumer);
        }
        g.is_acyclic()
    }

    /// Strongly connected components (Tarjan), each sorted by name.
    pub fn sccs(&self) -> Vec<Vec<String>> {
        struct St<'a> {
            succ: BTreeMap<&'a str, Vec<&'a str>>,
            index: BTreeMap<&'a str, usize>,
            low: BTreeMap<&'a str, usize>,
            on: BTreeSet<&'a str>,
            stack: Vec<&'a str>,
            next: usize,
            out: Vec<Vec<String>>,
        }
        fn visit<'a>(s: &mut St<'a>, v: &'a str) {
            s.index.insert(v, s.next);
            s.low.insert(v, s.next);
            s.next += 1;
            s.stack.push(v);
            s.on.insert(v);
            let succ = s.succ.get(v).cloned().unwrap_or_default();
            for w in succ {
                if !s.index.contains_key(w) {
                    visit(s, w);
                    let lw = s.low[w];
                    let lv = s.low[v];
                    s.low.insert(v, lv.min(lw));
                } else if s.on.contains(w) {
                    let iw = s.index[w];
                    let lv = s.low[v];
                    s.low.insert(v, lv.min(iw));
                }
            }
            if s.low[v] == s.index[v] {
                let mut comp = Vec::new();
                loop {
                    let w = s.stack.pop().expect("tarjan stack");
                    s.on.remove(w);
                    comp.push(w.to_string());
                    if w == v {
                        break;
                    }
                }
                comp.sort();
                s.out.push(comp);
            }
        }
        let mut s = St { succ: self.successors(), index: BTreeMap::new(), low: BTreeMap::new(), on: BTreeSet::new(), stack: vec![], next: 0, out: vec![] };
        for n in &self.nodes {
            if !s.index.contains_key(n.as_str()) {
                visit(&mut s, n);
            }
        }
        s.out
    }

    /// First edge the order violates, if any. Every node must appear exactly once.
    pub fn check_order(&self, order: &[String]) -> Result<(), Option<Edge>> {
        let pos: BTreeMap<&str, usize> = order.iter().enumerate().map(|(i, v)| (v.as_str(), i)).collect();
        if pos.len() != order.len() || order.len() != self.nodes.len() || self.nodes.iter().any(|n| !pos.contains_key(n.as_str())) {
            return Err(None);
        }
        match self.edges.iter().find(|e| pos[e.from.as_str()] > pos[e.to.as_str()]) {
            Some(e) => Err(Some(e.clone())),
            None => Ok(()),
        }
    }

    pub fn is_linear_extension(&self, order: &[String]) -> bool {
        self.check_order(order).is_ok()
    }

    fn index_masks(&self) -> (Vec<String>, Vec<u64>) {
        let names: Vec<String> = self.nodes.iter().cloned().collect();
        let idx: BTreeMap<&str, usize> = names.iter().enumerate().map(|(i, n)| (n.as_str(), i)).collect();
        let mut preds = vec![0u64; names.len()];
        for e in &self.edges {
            preds[idx[e.to.as_str()]] |= 1 << idx[e.from.as_str()];
        }
        (names, preds)
    }

    /// Linear extensions in lexicographic order of var names, at most `cap`.
    pub fn enumerate(&self, cap: usize) -> (Vec<Vec<String>>, OrderCount) {
        let (names, preds) = self.index_masks();
        let n = names.len();
        assert!(n < 64, "too many index vars for enumeration");
        let mut out = Vec::new();
        let mut cur = Vec::with_capacity(n);
        fn rec(n: usize, preds: &[u64], placed: u64, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>, cap: usize) -> bool {
            if cur.len() == n {
                out.push(cur.clone());
                return out.len() < cap;
            }
            for v in 0..n {
                if placed & (1 << v) == 0 && preds[v] & !placed == 0 {
                    cur.push(v);
                    let go_on = rec(n, preds, placed | (1 << v), cur, out, cap);
                    cur.pop();
                    if !go_on {
                        return false;
                    }
                }
            }
            true
        }
        let mut raw = Vec::new();
        let finished = cap > 0 && rec(n, &preds, 0, &mut cur, &mut raw, cap);
        out.extend(raw.into_iter().map(|o| o.into_iter().map(|i| names[i].clone()).collect::<Vec<_>>()));
        let count = if finished { OrderCount::Exact(out.len() as u128) } else { OrderCount::AtLeast(out.len() as u128) };
        (out, count)
    }

    /// Lexicographically first linear extension.
    pub fn first_order(&self) -> Option<Vec<String>> {
        self.enumerate(1).0.into_iter().next()
    }

    /// Exact number of linear extensions by dynamic programming over subsets.
    pub fn count_linear_extensions(&self) -> Option<u128> {
        let (_, preds) = self.index_masks();
        let n = preds.len();
        if n > 24 {
            return None;
        }
        let mut ways = vec![0u128; 1 << n];
        ways[0] = 1;
        for mask in 0..(1usize << n) {
            let w = ways[mask];
            if w == 0 {
                continue;
            }
            for (v, &p) in preds.iter().enumerate() {
                if mask & (1 << v) == 0 && (p as usize) & !mask == 0 {
                    ways[mask | (1 << v)] += w;
                }
            }
        }
        Some(ways[(1 << n) - 1])
    }

    pub fn to_dot(&self, name: &str) -> String {
        let mut s = format!("digraph \"{name}\" {{\n");
        for n in &self.nodes {
            let _ = writeln!(s, "  \"{n}\";");
        }
        for e in &self.edges {
            let style = match e.provenance {
                Provenance::ModeOrder => "solid",
                Provenance::DataflowOrder => "dashed",
                Provenance::ProducerConsumer => "bold",
            };
            let _ = writeln!(s, "  \"{}\" -> \"{}\" [style={style}, label=\"{:?}\"];", e.from, e.to, e.provenance);
        }
        s.push_str("}\n");
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn graph(nodes: &[&str], edges: &[(&str, &str)]) -> PartialOrderGraph {
        let mut g = PartialOrderGraph::new();
        nodes.iter().for_each(|n| g.add_node(n));
        edges.iter().for_each(|(a, b)| g.add_edge(a, b, Provenance::ModeOrder));
        g
    }

    fn s(v: &[&str]) -> Vec<String> {
        v.iter().map(|x| x.to_string()).collect()
    }

    #[test]
    fn forced_chain() {
        let g = graph(&["i", "j", "k"], &[("i", "k"), ("k", "j")]);
        assert_eq!(g.enumerate(10), (vec![s(&["i", "k", "j"])], OrderCount::Exact(1)));
    }

    #[test]
    fn two_orders() {
        let g = graph(&["i", "j", "k"], &[("i", "k"), ("i", "j")]);
        assert_eq!(g.enumerate(10), (vec![s(&["i", "j", "k"]), s(&["i", "k", "j"])], OrderCount::Exact(2)));
    }

    #[test]
    fn capped_free_graph() {
        let g = graph(&["a", "b", "c", "d"], &[]);
        let (orders, count) = g.enumerate(10);
        assert_eq!(orders.len(), 10);
        assert_eq!(count, OrderCount::AtLeast(10));
        assert_eq!(g.count_linear_extensions(), Some(24));
        assert_eq!(g.enumerate(24).1, OrderCount::AtLeast(24));
        assert_eq!(g.enumerate(25).1, OrderCount::Exact(24));
    }

    #[test]
    fn cycle_detection_and_check() {
        let mut g = graph(&["i", "j"], &[("i", "j")]);
        assert!(g.is_acyclic());
        assert_eq!(g.check_order(&s(&["j", "i"])).unwrap_err().unwrap().to_string(), "i->j");
        g.add_edge("j", "i", Provenance::ModeOrder);
        assert!(!g.is_acyclic());
        assert_eq!(g.sccs().iter().filter(|c| c.len() > 1).count(), 1);
    }
}
