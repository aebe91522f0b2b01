use super::value::{Block, Token, Value};
use super::{Chan, SimConfig, SimError};
use crate::frontend::ReduceOp;
use crate::graph::{Primitive, ScanKind};
use crate::tensor::{LevelFormat, SparseTensor};
use std::collections::{BTreeMap, HashMap, VecDeque};
use std::sync::Arc;

/// Work a single firing performed.
#[derive(Default)]
pub(crate) struct Fired {
    pub progressed: bool,
    pub flops: u64,
    pub bytes_read: u64,
    pub bytes_written: u64,
    pub stall: u64,
    pub finished: bool,
}

pub(crate) struct Io<'a> {
    pub chans: &'a mut [Chan],
    pub ins: &'a [usize],
    pub outs: &'a mut [VecDeque<Token>],
    pub name: &'a str,
    pub fired: Fired,
    /// Positions already fetched, per (tensor, level); leaves use `usize::MAX`.
    pub seen: &'a mut HashMap<(String, usize), Vec<bool>>,
}

impl Io<'_> {
    /// True the first time `pos` of (tensor, level) is fetched in this run.
    fn first_fetch(&mut self, tensor: &str, level: usize, pos: usize, len: usize) -> bool {
        let bits = self.seen.entry((tensor.to_string(), level)).or_insert_with(|| vec![false; len]);
        !std::mem::replace(&mut bits[pos], true)
    }

    fn peek(&self, port: usize) -> Option<&Token> {
        self.chans[self.ins[port]].q.front()
    }

    fn pop(&mut self, port: usize) -> Token {
        self.fired.progressed = true;
        let ch = &mut self.chans[self.ins[port]];
        ch.popped += 1;
        ch.q.pop_front().expect("peeked before popping")
    }

    fn emit(&mut self, port: usize, t: Token) {
        self.fired.progressed = true;
        self.outs[port].push_back(t);
    }

    fn all_present(&self, ports: impl IntoIterator<Item = usize>) -> bool {
        ports.into_iter().all(|p| self.peek(p).is_some())
    }

    fn malformed(&self, port: usize, msg: impl Into<String>) -> SimError {
        SimError::MalformedStream { node: self.name.to_string(), port, index: self.chans[self.ins[port]].popped, msg: msg.into() }
    }
}

#[derive(Clone, Debug)]
pub(crate) enum Decision {
    Pass,
    Drop,
    Stop(u8),
    Done,
}

#[derive(Clone, Debug)]
pub(crate) enum SerDecision {
    Pass(usize),
    All(Token),
}

pub(crate) enum State {
    Root { sent: bool },
    Scanner { tensor: Arc<SparseTensor>, parents: usize },
    ValArray { tensor: Arc<SparseTensor>, after_stop: bool },
    Repeat { cur: Option<Token> },
    Join,
    Stateless,
    Reduce { acc: Option<Value> },
    Red1 { acc: BTreeMap<u32, Value> },
    CoordDrop { queues: Vec<VecDeque<Decision>>, main_done: bool },
    LevelWriter { segments: Vec<u32>, coordinates: Vec<u32> },
    ValWriter { values: Vec<Value> },
    Parallelizer,
    Serializer { queues: Vec<VecDeque<SerDecision>>, done: Vec<bool>, open: Vec<u64> },
}

impl State {
    pub fn new(prim: &Primitive, inputs: &BTreeMap<String, Arc<SparseTensor>>) -> Result<State, SimError> {
        let tensor = |name: &String| inputs.get(name).cloned().ok_or_else(|| SimError::MissingTensor(name.clone()));
        Ok(match prim {
            Primitive::Root => State::Root { sent: false },
            Primitive::LevelScanner { tensor: name, scan } => {
                let t = tensor(name)?;
                let parents = match scan {
                    ScanKind::Level { level } => {
                        if *level >= t.levels.len() || t.levels[*level].kind().is_none() {
                            return Err(SimError::FormatMismatch { tensor: name.clone(), msg: format!("no coordinate level {level}") });
                        }
                        let mut p = 1usize;
                        for l in &t.levels[..*level] {
                            p = match l {
                                LevelFormat::Dense { size } => p * size,
                                LevelFormat::Compressed { coordinates, .. } => coordinates.len(),
                                _ => p,
                            };
                        }
                        p
                    }
                    ScanKind::Strided { .. } => usize::MAX,
                };
                State::Scanner { tensor: t, parents }
            }
            Primitive::ValArray { tensor: name, .. } => State::ValArray { tensor: tensor(name)?, after_stop: true },
            Primitive::Repeat => State::Repeat { cur: None },
            Primitive::Range { .. } => State::Stateless,
            Primitive::Intersect { .. } | Primitive::Union { .. } => State::Join,
            Primitive::Alu { .. } | Primitive::Map { .. } | Primitive::ValDrop => State::Stateless,
            Primitive::Reduce { .. } => State::Reduce { acc: None },
            Primitive::Red1 { .. } => State::Red1 { acc: BTreeMap::new() },
            Primitive::CoordDrop { inner } => State::CoordDrop { queues: vec![VecDeque::new(); inner + 1], main_done: false },
            Primitive::LevelWriter { .. } => State::LevelWriter { segments: vec![0], coordinates: vec![] },
            Primitive::ValWriter { .. } => State::ValWriter { values: vec![] },
            Primitive::Parallelizer { .. } => State::Parallelizer,
            Primitive::Serializer { depths, .. } => {
                State::Serializer { queues: vec![VecDeque::new(); depths.len()], done: vec![false; depths.len()], open: vec![0; depths.len()] }
            }
        })
    }

    pub fn touches_memory(&self) -> bool {
        matches!(self, State::Scanner { .. } | State::ValArray { .. } | State::LevelWriter { .. } | State::ValWriter { .. })
    }
}

fn scan_fiber(tensor: &SparseTensor, scan: &ScanKind, p: u32, parents: usize, cfg: &SimConfig, name: &str) -> Result<(Vec<(u32, u32)>, u64), SimError> {
    let oob = || SimError::RefOutOfBounds { node: name.to_string(), reference: p };
    match scan {
        ScanKind::Strided { extent, stride } => Ok(((0..*extent as u32).map(|c| (c, p + c * *stride as u32)).collect(), 0)),
        ScanKind::Level { level } => {
            if p as usize >= parents {
                return Err(oob());
            }
            let lvl = &tensor.levels[*level];
            let fiber: Vec<(u32, u32)> = lvl.fiber(p as usize).into_iter().map(|(c, q)| (c, q as u32)).collect();
            let bytes = match lvl {
                LevelFormat::Compressed { .. } => (1 + fiber.len() as u64) * cfg.index_bytes,
                LevelFormat::Coordinate { .. } => fiber.len() as u64 * cfg.index_bytes,
                _ => 0,
            };
            Ok((fiber, bytes))
        }
    }
}

fn reduce_local(v: Value, dim: &Option<String>, op: ReduceOp, flops: &mut u64) -> Value {
    match dim {
        Some(d) => {
            let (r, f) = v.reduce_dim(d, op);
            *flops += f;
            r
        }
        None => v,
    }
}

fn stop_level(t: &Token) -> Option<u8> {
    match t {
        Token::Stop(k) => Some(*k),
        _ => None,
    }
}

/// Fires a node once: at most one pop per input port; results land in the
/// node's output buffers.
pub(crate) fn fire(prim: &Primitive, st: &mut State, io: &mut Io, cfg: &SimConfig) -> Result<(), SimError> {
    match (prim, st) {
        (Primitive::Root, State::Root { sent }) => {
            if !*sent {
                *sent = true;
                io.emit(0, Token::Ref(0));
                io.emit(0, Token::Done);
                io.fired.finished = true;
            }
        }
        (Primitive::Range { extent }, State::Stateless) => {
            let Some(head) = io.peek(0).cloned() else { return Ok(()) };
            io.pop(0);
            match head {
                Token::Stop(k) => io.emit(0, Token::Stop(k + 1)),
                Token::Done => {
                    io.emit(0, Token::Done);
                    io.fired.finished = true;
                }
                _ => {
                    for c in 0..*extent as u32 {
                        io.emit(0, Token::Crd(c));
                    }
                    io.emit(0, Token::Stop(0));
                }
            }
        }
        (Primitive::LevelScanner { scan, tensor: name }, State::Scanner { tensor, parents }) => {
            let Some(head) = io.peek(0).cloned() else { return Ok(()) };
            io.pop(0);
            match head {
                Token::Ref(p) => {
                    let (fiber, bytes) = scan_fiber(tensor, scan, p, *parents, cfg, io.name)?;
                    if let ScanKind::Level { level } = scan {
                        if bytes > 0 && io.first_fetch(name, *level, p as usize, *parents) {
                            io.fired.bytes_read += bytes;
                        }
                    }
                    io.fired.stall = cfg.mem_latency;
                    for (c, q) in fiber {
                        io.emit(0, Token::Crd(c));
                        io.emit(1, Token::Ref(q));
                    }
                    io.emit(0, Token::Stop(0));
                    io.emit(1, Token::Stop(0));
                }
                Token::Null => {
                    io.emit(0, Token::Stop(0));
                    io.emit(1, Token::Stop(0));
                }
                Token::Stop(k) => {
                    io.emit(0, Token::Stop(k + 1));
                    io.emit(1, Token::Stop(k + 1));
                }
                Token::Done => {
                    io.emit(0, Token::Done);
                    io.emit(1, Token::Done);
                    io.fired.finished = true;
                }
                other => return Err(io.malformed(0, format!("scanner expects refs, got {other:?}"))),
            }
        }
        (Primitive::ValArray { block_dims, tensor: name }, State::ValArray { tensor, after_stop }) => {
            let Some(head) = io.peek(0).cloned() else { return Ok(()) };
            io.pop(0);
            match head {
                Token::Ref(p) => {
                    let vol = tensor.block_volume();
                    let p = p as usize;
                    if p >= tensor.leaf_positions() {
                        return Err(SimError::RefOutOfBounds { node: io.name.to_string(), reference: p as u32 });
                    }
                    let v = match tensor.block_shape() {
                        None => Value::Scalar(tensor.values[p]),
                        Some(bs) => {
                            let shape = tensor.mode_order.iter().map(|&m| bs[m]).collect();
                            Value::Block(Arc::new(Block { dims: block_dims.clone(), shape, data: tensor.values[p * vol..(p + 1) * vol].to_vec() }))
                        }
                    };
                    if io.first_fetch(name, usize::MAX, p, tensor.leaf_positions()) {
                        io.fired.bytes_read += vol as u64 * cfg.element_bytes;
                    }
                    if *after_stop {
                        io.fired.stall = cfg.mem_latency;
                    }
                    *after_stop = false;
                    io.emit(0, Token::Val(v));
                }
                Token::Null => io.emit(0, Token::Val(Value::zero())),
                Token::Stop(k) => {
                    *after_stop = true;
                    io.emit(0, Token::Stop(k));
                }
                Token::Done => {
                    io.emit(0, Token::Done);
                    io.fired.finished = true;
                }
                other => return Err(io.malformed(0, format!("value array expects refs, got {other:?}"))),
            }
        }
        (Primitive::Repeat, State::Repeat { cur }) => {
            if cur.is_none() {
                match io.peek(0).cloned() {
                    None => return Ok(()),
                    Some(t) if t.is_data() => {
                        io.pop(0);
                        *cur = Some(t);
                    }
                    Some(Token::Stop(k)) => {
                        match io.peek(1) {
                            None => return Ok(()),
                            Some(Token::Stop(c)) if *c == k + 1 => {}
                            Some(other) => return Err(io.malformed(1, format!("repeat control {other:?} against data Stop({k})"))),
                        }
                        io.pop(0);
                        io.pop(1);
                        io.emit(0, Token::Stop(k + 1));
                        return Ok(());
                    }
                    Some(_) => {
                        match io.peek(1) {
                            None => return Ok(()),
                            Some(Token::Done) => {}
                            Some(_) => return Err(SimError::RepeatUnderflow { node: io.name.to_string() }),
                        }
                        io.pop(0);
                        io.pop(1);
                        io.emit(0, Token::Done);
                        io.fired.finished = true;
                        return Ok(());
                    }
                }
            }
            match io.peek(1).cloned() {
                None => {}
                Some(Token::Crd(_)) => {
                    io.pop(1);
                    io.emit(0, cur.clone().expect("data element held"));
                }
                Some(Token::Stop(0)) => {
                    io.pop(1);
                    io.emit(0, Token::Stop(0));
                    *cur = None;
                }
                Some(other) => return Err(io.malformed(1, format!("repeat control {other:?} while an element is pending"))),
            }
        }
        (Primitive::Intersect { left, right } | Primitive::Union { left, right }, State::Join) => {
            let union = matches!(prim, Primitive::Union { .. });
            let (l, r) = (*left, *right);
            let a_ports: Vec<usize> = (0..=l).collect();
            let b_ports: Vec<usize> = (l + 1..=l + 1 + r).collect();
            let (Some(ha), Some(hb)) = (io.peek(0).cloned(), io.peek(l + 1).cloned()) else { return Ok(()) };
            let take = |io: &mut Io, ports: &[usize]| -> Option<Vec<Token>> {
                if !io.all_present(ports.iter().copied()) {
                    return None;
                }
                Some(ports.iter().map(|&p| io.pop(p)).collect())
            };
            let emit_side = |io: &mut Io, crd: Token, a: Option<&[Token]>, b: Option<&[Token]>| {
                io.emit(0, crd);
                for k in 0..l {
                    io.emit(1 + k, a.map_or(Token::Null, |a| a[k].clone()));
                }
                for k in 0..r {
                    io.emit(1 + l + k, b.map_or(Token::Null, |b| b[k].clone()));
                }
            };
            match (&ha, &hb) {
                (Token::Crd(a), Token::Crd(b)) if a == b => {
                    if !io.all_present(a_ports.iter().chain(&b_ports).copied()) {
                        return Ok(());
                    }
                    let ta = take(io, &a_ports).expect("present");
                    let tb = take(io, &b_ports).expect("present");
                    emit_side(io, ha.clone(), Some(&ta[1..]), Some(&tb[1..]));
                }
                (Token::Crd(a), other) if !matches!(other, Token::Crd(b) if b < a) => {
                    let Some(ta) = take(io, &a_ports) else { return Ok(()) };
                    if union {
                        emit_side(io, ha.clone(), Some(&ta[1..]), None);
                    }
                }
                (_, Token::Crd(_)) => {
                    let Some(tb) = take(io, &b_ports) else { return Ok(()) };
                    if union {
                        emit_side(io, hb.clone(), None, Some(&tb[1..]));
                    }
                }
                (Token::Stop(x), Token::Stop(y)) if x == y => {
                    if !io.all_present(a_ports.iter().chain(&b_ports).copied()) {
                        return Ok(());
                    }
                    take(io, &a_ports);
                    take(io, &b_ports);
                    for p in 0..=l + r {
                        io.emit(p, Token::Stop(*x));
                    }
                }
                (Token::Done, Token::Done) => {
                    if !io.all_present(a_ports.iter().chain(&b_ports).copied()) {
                        return Ok(());
                    }
                    take(io, &a_ports);
                    take(io, &b_ports);
                    for p in 0..=l + r {
                        io.emit(p, Token::Done);
                    }
                    io.fired.finished = true;
                }
                _ => return Err(io.malformed(0, format!("misaligned join inputs {ha:?} / {hb:?}"))),
            }
        }
        (Primitive::Alu { op }, State::Stateless) => {
            let (Some(a), Some(b)) = (io.peek(0).cloned(), io.peek(1).cloned()) else { return Ok(()) };
            io.pop(0);
            io.pop(1);
            match (a.value(), b.value()) {
                (Some(x), Some(y)) => {
                    let v = x.alu(&y, *op);
                    io.fired.flops += v.volume();
                    io.emit(0, Token::Val(v));
                }
                _ if a == b && !a.is_data() => {
                    io.fired.finished = a == Token::Done;
                    io.emit(0, a);
                }
                _ => return Err(io.malformed(1, format!("ALU operands out of step: {a:?} / {b:?}"))),
            }
        }
        (Primitive::Map { func }, State::Stateless) => {
            let Some(t) = io.peek(0).cloned() else { return Ok(()) };
            io.pop(0);
            match t.value() {
                Some(v) => {
                    let v = v.map(*func);
                    io.fired.flops += v.volume();
                    io.emit(0, Token::Val(v));
                }
                None => {
                    io.fired.finished = t == Token::Done;
                    io.emit(0, t);
                }
            }
        }
        (Primitive::ValDrop, State::Stateless) => {
            let (Some(c), Some(v)) = (io.peek(0).cloned(), io.peek(1).cloned()) else { return Ok(()) };
            io.pop(0);
            io.pop(1);
            match (&c, v.value()) {
                (Token::Crd(_), Some(val)) => {
                    if !val.is_zero() {
                        io.emit(0, c);
                        io.emit(1, Token::Val(val));
                    }
                }
                _ if c == v && !c.is_data() => {
                    io.fired.finished = c == Token::Done;
                    io.emit(0, c.clone());
                    io.emit(1, v);
                }
                _ => return Err(io.malformed(1, format!("value drop inputs out of step: {c:?} / {v:?}"))),
            }
        }
        (Primitive::Reduce { op, block_dim }, State::Reduce { acc }) => {
            let Some(t) = io.peek(0).cloned() else { return Ok(()) };
            io.pop(0);
            match t {
                Token::Stop(0) => {
                    let v = acc.take().unwrap_or_else(Value::zero);
                    io.emit(0, Token::Val(v));
                }
                Token::Stop(k) => io.emit(0, Token::Stop(k - 1)),
                Token::Done => {
                    io.emit(0, Token::Done);
                    io.fired.finished = true;
                }
                other => {
                    let v = reduce_local(other.value().expect("data token"), block_dim, *op, &mut io.fired.flops);
                    *acc = Some(match acc.take() {
                        None => v,
                        Some(a) => {
                            let r = a.combine(&v, *op);
                            if *op == ReduceOp::Sum {
                                io.fired.flops += r.volume();
                            }
                            r
                        }
                    });
                }
            }
        }
        (Primitive::Red1 { op, block_dim }, State::Red1 { acc }) => {
            let (Some(c), Some(v)) = (io.peek(0).cloned(), io.peek(1).cloned()) else { return Ok(()) };
            io.pop(0);
            io.pop(1);
            match (c, v) {
                (Token::Crd(c), v) if v.is_data() => {
                    let v = reduce_local(v.value().expect("data"), block_dim, *op, &mut io.fired.flops);
                    match acc.remove(&c) {
                        None => {
                            acc.insert(c, v);
                        }
                        Some(a) => {
                            let r = a.combine(&v, *op);
                            if *op == ReduceOp::Sum {
                                io.fired.flops += r.volume();
                            }
                            acc.insert(c, r);
                        }
                    }
                }
                (Token::Stop(0), Token::Stop(0)) => {}
                (Token::Stop(1), Token::Stop(1)) => {
                    for (c, v) in std::mem::take(acc) {
                        io.emit(0, Token::Crd(c));
                        io.emit(1, Token::Val(v));
                    }
                    io.emit(0, Token::Stop(0));
                    io.emit(1, Token::Stop(0));
                }
                (Token::Stop(k), Token::Stop(j)) if k == j => {
                    io.emit(0, Token::Stop(k - 1));
                    io.emit(1, Token::Stop(k - 1));
                }
                (Token::Done, Token::Done) => {
                    io.emit(0, Token::Done);
                    io.emit(1, Token::Done);
                    io.fired.finished = true;
                }
                (c, v) => return Err(io.malformed(0, format!("reducer inputs out of step: {c:?} / {v:?}"))),
            }
        }
        (Primitive::CoordDrop { inner }, State::CoordDrop { queues, main_done }) => {
            let inner = *inner;
            // Relative depth of each deeper stream below the main one.
            let rel = |j: usize| if j <= inner { j as u8 } else { inner as u8 };
            if !*main_done && queues[0].is_empty() {
                if let Some(head) = io.peek(0).cloned() {
                    match head {
                        Token::Crd(_) => {
                            if let Some(next) = io.peek(1) {
                                let empty = *next == Token::Stop(0);
                                io.pop(0);
                                if !empty {
                                    io.emit(0, head);
                                }
                                let d = if empty { Decision::Drop } else { Decision::Pass };
                                queues.iter_mut().for_each(|q| q.push_back(d.clone()));
                            }
                        }
                        Token::Stop(s) => {
                            io.pop(0);
                            io.emit(0, head);
                            for (j, q) in queues.iter_mut().enumerate() {
                                q.push_back(Decision::Stop(rel(j + 1) + s));
                            }
                        }
                        Token::Done => {
                            io.pop(0);
                            io.emit(0, head);
                            *main_done = true;
                            queues.iter_mut().for_each(|q| q.push_back(Decision::Done));
                        }
                        other => return Err(io.malformed(0, format!("coordinate drop expects crds, got {other:?}"))),
                    }
                }
            }
            for j in 1..=inner + 1 {
                let Some(d) = queues[j - 1].front().cloned() else { continue };
                let Some(t) = io.peek(j).cloned() else { continue };
                let term = rel(j) - 1;
                io.pop(j);
                match d {
                    Decision::Pass => {
                        let end = t == Token::Stop(term);
                        io.emit(j, t);
                        if end {
                            queues[j - 1].pop_front();
                        }
                    }
                    Decision::Drop | Decision::Stop(_) | Decision::Done => {
                        let want = match d {
                            Decision::Drop => Token::Stop(term),
                            Decision::Stop(l) => Token::Stop(l),
                            _ => Token::Done,
                        };
                        if t != want {
                            return Err(io.malformed(j, format!("expected {want:?}, got {t:?}")));
                        }
                        if !matches!(d, Decision::Drop) {
                            io.emit(j, t);
                        }
                        queues[j - 1].pop_front();
                    }
                }
            }
            io.fired.finished = *main_done && queues.iter().all(|q| q.is_empty());
        }
        (Primitive::LevelWriter { .. }, State::LevelWriter { segments, coordinates }) => {
            let Some(t) = io.peek(0).cloned() else { return Ok(()) };
            io.pop(0);
            match t {
                Token::Crd(c) => {
                    coordinates.push(c);
                    io.fired.bytes_written += cfg.index_bytes;
                }
                Token::Stop(0) => {
                    segments.push(coordinates.len() as u32);
                    io.fired.bytes_written += cfg.index_bytes;
                }
                Token::Stop(_) => {}
                Token::Done => io.fired.finished = true,
                other => return Err(io.malformed(0, format!("level writer expects crds, got {other:?}"))),
            }
        }
        (Primitive::ValWriter { .. }, State::ValWriter { values }) => {
            let Some(t) = io.peek(0).cloned() else { return Ok(()) };
            io.pop(0);
            match t {
                Token::Stop(_) => {}
                Token::Done => io.fired.finished = true,
                other => {
                    let v = other.value().ok_or_else(|| io.malformed(0, format!("value writer got {other:?}")))?;
                    io.fired.bytes_written += v.bytes(cfg.element_bytes);
                    values.push(v);
                }
            }
        }
        (Primitive::Parallelizer { lanes, lane, streams, .. }, State::Parallelizer) => {
            if !io.all_present(0..*streams) {
                return Ok(());
            }
            let head = io.peek(0).cloned().expect("present");
            let toks: Vec<Token> = (0..*streams).map(|p| io.pop(p)).collect();
            match head {
                Token::Crd(c) => {
                    if c as usize % *lanes == *lane {
                        toks.into_iter().enumerate().for_each(|(p, t)| io.emit(p, t));
                    }
                }
                Token::Stop(_) | Token::Done => {
                    io.fired.finished = head == Token::Done;
                    toks.into_iter().enumerate().for_each(|(p, t)| io.emit(p, t));
                }
                other => return Err(io.malformed(0, format!("parallelizer expects crds, got {other:?}"))),
            }
        }
        (Primitive::Serializer { lanes, depths, cut }, State::Serializer { queues, done, open }) => {
            let (lanes, cut) = (*lanes, *cut);
            let n = depths.len();
            let port = |lane: usize, s: usize| lane * n + s;
            let level: Vec<usize> = (0..n).filter(|&s| depths[s] == cut).collect();
            let all_lanes = |s: usize| (0..lanes).map(move |l| port(l, s));
            // An outer stream may only move on once the level stream has closed
            // the fiber its previous element opened.
            let outer: Vec<usize> = (0..n).filter(|&s| depths[s] < cut && !done[s] && open[s] == 0).collect();
            for s in outer {
                if io.all_present(all_lanes(s)) {
                    let t = io.pop(port(0, s));
                    if t.is_data() {
                        open[s] += 1;
                    }
                    for l in 1..lanes {
                        io.pop(port(l, s));
                    }
                    done[s] = t == Token::Done;
                    io.emit(s, t);
                }
            }
            // The level stream merges lanes by coordinate. It waits for the
            // previous element's subtrees so downstream consumers never see it
            // run ahead.
            let driver = level.first().copied().filter(|&s| !done[s]);
            if let Some(d0) = driver.filter(|&d0| queues.iter().all(|q| q.is_empty()) && io.all_present(all_lanes(d0))) {
                let heads: Vec<Token> = (0..lanes).map(|l| io.peek(port(l, d0)).cloned().expect("present")).collect();
                let pick = heads.iter().enumerate().filter_map(|(l, t)| match t {
                    Token::Crd(c) => Some((*c, l)),
                    _ => None,
                }).min();
                if let Some((_, lane)) = pick {
                    if io.all_present(level.iter().map(|&s| port(lane, s))) {
                        for &s in &level {
                            let t = io.pop(port(lane, s));
                            io.emit(s, t);
                        }
                        for s in (0..n).filter(|&s| depths[s] > cut) {
                            queues[s].push_back(SerDecision::Pass(lane));
                        }
                    }
                } else if io.all_present(level.iter().flat_map(|&s| all_lanes(s))) {
                    let head = heads[0].clone();
                    for &s in &level {
                        let t = io.pop(port(0, s));
                        for l in 1..lanes {
                            let other = io.pop(port(l, s));
                            if other != t {
                                return Err(io.malformed(port(l, s), format!("lane {l} has {other:?}, expected {t:?}")));
                            }
                        }
                        done[s] = t == Token::Done;
                        io.emit(s, t);
                    }
                    if let Some(k) = stop_level(&head) {
                        for s in (0..n).filter(|&s| depths[s] < cut && k + depths[s] + 1 >= cut) {
                            open[s] = open[s].saturating_sub(1);
                        }
                    }
                    for s in (0..n).filter(|&s| depths[s] > cut) {
                        let t = match stop_level(&head) {
                            Some(k) => Token::Stop(depths[s] - cut + k),
                            None => Token::Done,
                        };
                        queues[s].push_back(SerDecision::All(t));
                    }
                }
            }
            for s in (0..n).filter(|&s| depths[s] > cut) {
                let term = depths[s] - cut - 1;
                match queues[s].front().cloned() {
                    Some(SerDecision::Pass(lane)) => {
                        if let Some(t) = io.peek(port(lane, s)).cloned() {
                            io.pop(port(lane, s));
                            if t == Token::Stop(term) {
                                queues[s].pop_front();
                            }
                            io.emit(s, t);
                        }
                    }
                    Some(SerDecision::All(want)) if io.all_present(all_lanes(s)) => {
                        for l in 0..lanes {
                            let t = io.pop(port(l, s));
                            if t != want {
                                return Err(io.malformed(port(l, s), format!("lane {l} has {t:?}, expected {want:?}")));
                            }
                        }
                        done[s] = want == Token::Done;
                        queues[s].pop_front();
                        io.emit(s, want);
                    }
                    _ => {}
                }
            }
            io.fired.finished = done.iter().all(|d| *d);
        }
        (p, _) => unreachable!("state does not match primitive {p:?}"),
    }
    Ok(())
}
