//! Cycle-level simulator for dataflow graphs.
//!
//! Every node fires at most once per cycle, popping at most one token from each
//! input port. A node fires only after its previous results have left its output
//! buffers, and each output port pushes one token per cycle into bounded channels.
//! Pushes become visible to consumers on the next cycle.

mod node;
pub mod value;

use crate::graph::{DataflowGraph, GraphError, Primitive};
use crate::tensor::{LevelFormat, SparseTensor, TensorError};
use node::{Fired, Io, State};
use serde::Serialize;
use std::collections::{BTreeMap, HashMap, VecDeque};
use std::sync::Arc;
use thiserror::Error;
pub use value::{Block, Token, Value};

#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error("deadlock at cycle {cycle}; unfinished nodes: {}", stalled.join(", "))]
    Deadlock { cycle: u64, stalled: Vec<String> },
    #[error("malformed stream into {node} port {port} at token {index}: {msg}")]
    MalformedStream { node: String, port: usize, index: u64, msg: String },
    #[error("{node}: reference {reference} out of bounds")]
    RefOutOfBounds { node: String, reference: u32 },
    #[error("{node}: control stream outlived its data stream")]
    RepeatUnderflow { node: String },
    #[error("no input tensor named {0}")]
    MissingTensor(String),
    #[error("tensor {tensor} does not match the graph: {msg}")]
    FormatMismatch { tensor: String, msg: String },
    #[error("simulation exceeded {0} cycles")]
    CycleLimit(u64),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("assembled output is invalid: {0}")]
    Output(#[from] TensorError),
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SimConfig {
    /// Capacity of every channel, in tokens.
    pub channel_depth: usize,
    /// Cycles a memory node stalls per fiber or value-run fetch.
    pub mem_latency: u64,
    /// Bytes per cycle shared by all memory nodes; unlimited when `None`.
    pub mem_bandwidth: Option<u64>,
    pub element_bytes: u64,
    pub index_bytes: u64,
    pub max_cycles: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig { channel_depth: 4, mem_latency: 0, mem_bandwidth: None, element_bytes: 8, index_bytes: 4, max_cycles: 50_000_000 }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct NodeStats {
    pub fires: u64,
    pub tokens_out: u64,
    pub flops: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SimReport {
    #[serde(skip)]
    pub outputs: BTreeMap<String, SparseTensor>,
    pub cycles: u64,
    pub flops: u64,
    /// Compulsory traffic: every stored position is charged on its first fetch.
    pub bytes_read: u64,
    pub bytes_written: u64,
    pub per_node: BTreeMap<String, NodeStats>,
}

pub(crate) struct Chan {
    pub q: VecDeque<Token>,
    staged: Vec<Token>,
    start_len: usize,
    pub popped: u64,
    checker: Checker,
}

/// Validates the stop-token grammar of one channel as tokens are pushed.
struct Checker {
    depth: u8,
    open: u8,
    closed: bool,
    data0: usize,
    done: bool,
}

impl Checker {
    fn new(depth: u8) -> Self {
        Checker { depth, open: 0, closed: false, data0: 0, done: false }
    }

    fn check(&mut self, t: &Token) -> Result<(), String> {
        if self.done {
            return Err(format!("{t:?} after Done"));
        }
        let d = self.depth;
        match t {
            Token::Done => {
                if d == 0 && self.data0 != 1 {
                    return Err("scalar stream must carry exactly one element".into());
                }
                if d > 0 && !self.closed {
                    return Err("Done before the root fiber closed".into());
                }
                self.done = true;
            }
            Token::Stop(k) => {
                if *k >= d || self.closed {
                    return Err(format!("Stop({k}) invalid in a depth-{d} stream"));
                }
                let level = d - k;
                if self.open > level {
                    return Err(format!("Stop({k}) while a deeper fiber is open"));
                }
                self.open = level - 1;
                self.closed = self.open == 0;
            }
            _ if d == 0 => {
                self.data0 += 1;
                if self.data0 > 1 {
                    return Err("scalar stream carries more than one element".into());
                }
            }
            _ => {
                if self.closed {
                    return Err("element after the root fiber closed".into());
                }
                self.open = d;
            }
        }
        Ok(())
    }
}

struct Proc {
    state: State,
    ins: Vec<usize>,
    outs: Vec<Vec<usize>>,
    buffers: Vec<VecDeque<Token>>,
    stall: u64,
    finished: bool,
    stats: NodeStats,
}

/// Runs `graph` over `inputs` (keyed by tensor name) to completion.
pub fn simulate(graph: &DataflowGraph, inputs: &BTreeMap<String, SparseTensor>, cfg: &SimConfig) -> Result<SimReport, SimError> {
    graph.validate()?;
    let shared: BTreeMap<String, Arc<SparseTensor>> = inputs.iter().map(|(k, v)| (k.clone(), Arc::new(v.clone()))).collect();
    let mut chans: Vec<Chan> = graph
        .channels
        .iter()
        .map(|c| Chan { q: VecDeque::new(), staged: vec![], start_len: 0, popped: 0, checker: Checker::new(c.depth) })
        .collect();
    let mut procs = Vec::with_capacity(graph.nodes.len());
    for (id, n) in graph.nodes.iter().enumerate() {
        let n_in = n.kind.input_kinds().len();
        let n_out = n.kind.output_kinds().len();
        let mut ins = vec![usize::MAX; n_in];
        let mut outs = vec![vec![]; n_out];
        for (ci, c) in graph.channels.iter().enumerate() {
            if c.to.node == id {
                ins[c.to.port] = ci;
            }
            if c.from.node == id {
                outs[c.from.port].push(ci);
            }
        }
        procs.push(Proc {
            state: State::new(&n.kind, &shared)?,
            ins,
            outs,
            buffers: vec![VecDeque::new(); n_out],
            stall: 0,
            finished: false,
            stats: NodeStats::default(),
        });
    }
    let writers: Vec<usize> = (0..graph.nodes.len()).filter(|&i| graph.nodes[i].kind.is_writer()).collect();
    let depth = cfg.channel_depth.max(1);
    let (mut flops, mut bytes_read, mut bytes_written) = (0u64, 0u64, 0u64);
    // Bytes the memory system still owes; memory nodes wait while it exceeds one cycle's worth.
    let mut debt = 0u64;
    let mut seen = HashMap::new();
    let mut cycle = 0u64;
    let mut last_writer = 0u64;
    loop {
        cycle += 1;
        if cycle > cfg.max_cycles {
            return Err(SimError::CycleLimit(cfg.max_cycles));
        }
        let mut progress = false;
        if let Some(bw) = cfg.mem_bandwidth {
            if debt > 0 {
                debt = debt.saturating_sub(bw.max(1));
                progress = true;
            }
        }
        for (id, p) in procs.iter_mut().enumerate() {
            if p.stall > 0 {
                p.stall -= 1;
                progress = true;
                continue;
            }
            let mem = p.state.touches_memory();
            let throttled = mem && cfg.mem_bandwidth.is_some_and(|bw| debt >= bw.max(1));
            if !p.finished && !throttled && p.buffers.iter().all(|b| b.is_empty()) {
                let mut io = Io { chans: &mut chans, ins: &p.ins, outs: &mut p.buffers, name: &graph.nodes[id].name, fired: Fired::default(), seen: &mut seen };
                node::fire(&graph.nodes[id].kind, &mut p.state, &mut io, cfg)?;
                let f = io.fired;
                if f.progressed {
                    progress = true;
                    p.stats.fires += 1;
                }
                p.stats.flops += f.flops;
                flops += f.flops;
                bytes_read += f.bytes_read;
                bytes_written += f.bytes_written;
                if mem && cfg.mem_bandwidth.is_some() {
                    debt += f.bytes_read + f.bytes_written;
                }
                p.stall = f.stall;
                if f.finished {
                    p.finished = true;
                    if graph.nodes[id].kind.is_writer() {
                        last_writer = cycle;
                    }
                }
            }
            if p.stall > 0 {
                continue;
            }
            for (port, buf) in p.buffers.iter_mut().enumerate() {
                let Some(t) = buf.front() else { continue };
                let targets = &p.outs[port];
                if !targets.iter().all(|&c| chans[c].start_len + chans[c].staged.len() < depth) {
                    continue;
                }
                for &c in targets {
                    let ch = &mut chans[c];
                    ch.checker.check(t).map_err(|msg| {
                        let to = graph.channels[c].to;
                        SimError::MalformedStream { node: graph.nodes[to.node].name.clone(), port: to.port, index: ch.popped + ch.q.len() as u64, msg }
                    })?;
                    ch.staged.push(t.clone());
                }
                buf.pop_front();
                p.stats.tokens_out += 1;
                progress = true;
            }
        }
        for ch in chans.iter_mut() {
            ch.q.extend(ch.staged.drain(..));
            ch.start_len = ch.q.len();
        }
        if writers.iter().all(|&w| procs[w].finished) {
            break;
        }
        if !progress {
            if std::env::var("SIM_DEBUG").is_ok() {
                for (c, ch) in chans.iter().enumerate() {
                    let gc = &graph.channels[c];
                    eprintln!("{} -> {}: {:?}", graph.nodes[gc.from.node].name, graph.nodes[gc.to.node].name, ch.q);
                }
                for (i, p) in procs.iter().enumerate() {
                    if p.buffers.iter().any(|b| !b.is_empty()) {
                        eprintln!("buf {}: {:?}", graph.nodes[i].name, p.buffers);
                    }
                }
            }
            let stalled = procs.iter().enumerate().filter(|(_, p)| !p.finished).map(|(i, _)| graph.nodes[i].name.clone()).collect();
            return Err(SimError::Deadlock { cycle, stalled });
        }
    }
    let outputs = assemble(graph, &procs)?;
    let per_node = graph.nodes.iter().zip(procs).map(|(n, p)| (n.name.clone(), p.stats)).collect();
    Ok(SimReport { outputs, cycles: last_writer, flops, bytes_read, bytes_written, per_node })
}

fn assemble(graph: &DataflowGraph, procs: &[Proc]) -> Result<BTreeMap<String, SparseTensor>, SimError> {
    let mut out = BTreeMap::new();
    for b in &graph.outputs {
        let mut levels = vec![];
        let mut lw: Vec<(usize, &Proc)> = graph
            .nodes
            .iter()
            .zip(procs)
            .filter_map(|(n, p)| match &n.kind {
                Primitive::LevelWriter { tensor, level } if *tensor == b.tensor => Some((*level, p)),
                _ => None,
            })
            .collect();
        lw.sort_by_key(|(l, _)| *l);
        for (_, p) in lw {
            if let State::LevelWriter { segments, coordinates } = &p.state {
                levels.push(LevelFormat::Compressed { segments: segments.clone(), coordinates: coordinates.clone() });
            }
        }
        let vals = graph.nodes.iter().zip(procs).find_map(|(n, p)| match (&n.kind, &p.state) {
            (Primitive::ValWriter { tensor }, State::ValWriter { values }) if *tensor == b.tensor => Some(values),
            _ => None,
        });
        let vals = vals.ok_or_else(|| SimError::FormatMismatch { tensor: b.tensor.clone(), msg: "no value writer".into() })?;
        let values: Vec<f64> = match &b.block {
            None => vals.iter().map(|v| v.to_layout(&[], &[])[0]).collect(),
            Some(block) => {
                let storage_shape: Vec<usize> = b.mode_order.iter().map(|&m| block[m]).collect();
                levels.push(LevelFormat::DenseBlockLeaf { block_shape: block.clone() });
                vals.iter().flat_map(|v| v.to_layout(&b.block_dims, &storage_shape)).collect()
            }
        };
        let t = SparseTensor { name: b.tensor.clone(), shape: b.shape.clone(), mode_order: b.mode_order.clone(), levels, values, fill: 0.0 };
        t.check()?;
        out.insert(b.tensor.clone(), t);
    }
    Ok(out)
}

#[cfg(test)]
mod tests;
