//! Whole-program compilation and execution. Regions are fused, lowered and
//! validated in program order; intermediates crossing a region boundary are
//! written by one kernel and rescanned by the next.

use crate::frontend::{infer_intermediates, print_program, validate, var_extents, EinsumExpr, EinsumProgram, Item, Reshape, Severity};
use crate::fusion::{fuse_region, FusedRegion, FusionError, RegionSpec, TensorFormat};
use crate::graph::{DataflowGraph, GraphError};
use crate::optimizer::{block_extents, block_formats, parallelize, uniform_block, OptimizeError};
use crate::sim::{simulate, SimConfig, SimError, SimReport};
use crate::table::LoweringError;
use crate::tensor::{LevelKind, SparseTensor, TensorError};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::{BTreeMap, BTreeSet};
use thiserror::Error;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Granularity {
    /// Every expression is its own kernel.
    Unfused,
    /// The program's own `fuse` regions.
    Partial,
    /// Everything between reshapes fuses into one region.
    Full,
}

impl Granularity {
    pub const ALL: [Granularity; 3] = [Granularity::Unfused, Granularity::Partial, Granularity::Full];

    pub fn name(self) -> &'static str {
        match self {
            Granularity::Unfused => "unfused",
            Granularity::Partial => "partial",
            Granularity::Full => "full",
        }
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid program:\n{0}")]
    Invalid(String),
    #[error("no binding for input tensor {0}")]
    MissingInput(String),
    #[error("input {tensor} has shape {found:?}, declared {expected:?}")]
    ShapeMismatch { tensor: String, expected: Vec<usize>, found: Vec<usize> },
    #[error("kernel {kernel}: {source}")]
    Fusion { kernel: String, source: FusionError },
    #[error("kernel {kernel}: {source}")]
    Lowering { kernel: String, source: LoweringError },
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Optimize(#[from] OptimizeError),
    #[error("kernel {kernel}: {source}")]
    Sim { kernel: String, source: SimError },
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct CompileOptions {
    /// None keeps the program's own regions.
    pub granularity: Option<Granularity>,
    /// Order applied to every kernel it resolves against; overrides the program.
    pub order: Option<Vec<String>>,
    /// Per-kernel orders, by kernel index; these win over everything else.
    pub kernel_orders: BTreeMap<usize, Vec<String>>,
    pub parallelize: Option<Vec<(String, u32)>>,
    pub block: Option<Vec<usize>>,
}

/// One fused kernel: the expressions it covers and its lowered graph.
#[derive(Clone, Debug)]
pub struct Kernel {
    pub output: String,
    pub exprs: Vec<usize>,
    pub region: FusedRegion,
    pub graph: DataflowGraph,
    pub splits: Vec<(String, u32)>,
}

#[derive(Clone, Debug)]
pub enum Step {
    Kernel(usize),
    Reshape(Reshape),
}

#[derive(Clone, Debug)]
pub struct CompiledProgram {
    pub program: EinsumProgram,
    pub granularity: Granularity,
    pub kernels: Vec<Kernel>,
    pub steps: Vec<Step>,
    /// Intermediates written to memory between kernels.
    pub materialized: Vec<String>,
    pub block: Option<usize>,
    /// Formats of every tensor as the kernels see them.
    pub formats: BTreeMap<String, TensorFormat>,
    pub dsl_hash: String,
    pub schedule_hash: String,
}

#[derive(Clone, Debug)]
pub struct ExecutionReport {
    /// Program outputs at element granularity.
    pub outputs: BTreeMap<String, SparseTensor>,
    /// Every tensor bound during the run, as stored.
    pub tensors: BTreeMap<String, SparseTensor>,
    pub kernels: Vec<(String, SimReport)>,
    pub cycles: u64,
    pub flops: u64,
    pub bytes_read: u64,
    pub bytes_written: u64,
}

fn short_hash(bytes: &[u8]) -> String {
    hex::encode(&Sha256::digest(bytes)[..8])
}

/// Expression groups between reshapes, per granularity.
fn groups(p: &EinsumProgram, g: Granularity) -> Vec<Vec<usize>> {
    let mut out: Vec<Vec<usize>> = Vec::new();
    let mut next = 0;
    let mut open = false;
    for item in &p.items {
        match item {
            Item::Reshape(_) => open = false,
            Item::Expr(_) | Item::Fuse { .. } => {
                let n = if let Item::Fuse { exprs, .. } = item { exprs.len() } else { 1 };
                let ids: Vec<usize> = (next..next + n).collect();
                next += n;
                match g {
                    Granularity::Unfused => out.extend(ids.into_iter().map(|i| vec![i])),
                    Granularity::Partial => out.push(ids),
                    Granularity::Full if open => out.last_mut().expect("open group").extend(ids),
                    Granularity::Full => out.push(ids),
                }
                open = true;
            }
        }
    }
    out
}

/// Tensor format of a kernel's written output.
fn written_format(graph: &DataflowGraph) -> TensorFormat {
    let b = &graph.outputs[0];
    TensorFormat { shape: b.shape.clone(), mode_order: b.mode_order.clone(), kinds: vec![LevelKind::Compressed; b.shape.len()], block: b.block.clone() }
}

pub fn compile(program: &EinsumProgram, opts: &CompileOptions) -> Result<CompiledProgram, PipelineError> {
    let errors: Vec<String> = validate(program).into_iter().filter(|d| d.severity == Severity::Error).map(|d| format!("{}:{}: {}", d.span.line, d.span.col, d.message)).collect();
    if !errors.is_empty() {
        return Err(PipelineError::Invalid(errors.join("\n")));
    }
    let p = infer_intermediates(program);
    let schedule = p.schedule();
    let granularity = opts.granularity.unwrap_or(Granularity::Partial);
    let block_shape = opts.block.clone().or_else(|| schedule.block.clone());
    let block = match &block_shape {
        Some(b) => uniform_block(b)?,
        None => None,
    };
    let mut extents = var_extents(&p);
    let exprs: Vec<EinsumExpr> = p.expressions().into_iter().cloned().collect();
    let mut formats = BTreeMap::new();
    for t in &p.tensors {
        let (mode_order, kinds) = t.storage();
        let shape = p.shape_of(&t.name).unwrap_or_default();
        formats.insert(t.name.clone(), TensorFormat { shape, mode_order, kinds, block: None });
    }
    if let Some(b) = block {
        extents = block_extents(&extents, b)?;
        formats = block_formats(&formats, b);
    }
    let nnz: BTreeMap<String, f64> = formats
        .iter()
        .map(|(k, f)| (k.clone(), f.shape.iter().product::<usize>() as f64 * schedule.densities.get(k).copied().unwrap_or(1.0)))
        .collect();
    let splits = opts.parallelize.clone().unwrap_or_else(|| schedule.parallelize.clone());
    let mut used_splits = BTreeSet::new();
    // Which schedule region each expression came from, for its written order.
    let mut region_of = BTreeMap::new();
    for (r, ids) in schedule.regions.iter().enumerate() {
        for &i in ids {
            region_of.insert(i, r);
        }
    }
    let readers = |name: &str, outside: &[usize]| -> bool {
        exprs.iter().enumerate().any(|(i, e)| {
            if outside.contains(&i) {
                return false;
            }
            let mut hit = false;
            e.body.visit_accesses(&mut |a| hit |= a.tensor == name);
            hit
        }) || p.reshapes().iter().any(|r| r.input == name)
    };
    let outputs: BTreeSet<String> = p.outputs().into_iter().collect();
    let group_list = groups(&p, granularity);
    let mut kernels: Vec<Kernel> = Vec::new();
    let mut kernel_steps: Vec<Vec<usize>> = Vec::new();
    let mut materialized = Vec::new();
    for ids in &group_list {
        let mut steps = Vec::new();
        for &e in ids {
            let name = exprs[e].name().to_string();
            if !(outputs.contains(&name) || readers(&name, ids)) {
                continue;
            }
            let k = kernels.len();
            let members: Vec<usize> = ids.iter().copied().filter(|&i| i <= e).collect();
            let region_exprs: Vec<EinsumExpr> = members.iter().map(|&i| exprs[i].clone()).collect();
            let exact = schedule.regions.get(region_of[&e]).is_some_and(|r| *r == members);
            let (written, strict) = match (opts.kernel_orders.get(&k), &opts.order) {
                (Some(o), _) => (Some(o.clone()), true),
                (None, Some(o)) => (Some(o.clone()), members == *ids),
                (None, None) => (schedule.orders[region_of[&e]].clone(), exact),
            };
            let spec = RegionSpec { exprs: &region_exprs, output: &name, formats: &formats, nnz: &nnz, extents: &extents, order: written.as_deref() };
            let fused = match fuse_region(&spec) {
                Err(FusionError::InvalidScheduledOrder { .. }) if !strict => fuse_region(&RegionSpec { order: None, ..spec }),
                other => other,
            }
            .map_err(|source| PipelineError::Fusion { kernel: name.clone(), source })?;
            let mut own = Vec::new();
            for (var, f) in &splits {
                if fused.output_vars.contains(var) {
                    own.push((var.clone(), *f));
                    used_splits.insert(var.clone());
                }
            }
            let graph = parallelize(&fused, &own).map_err(|e| match e {
                OptimizeError::Lowering(source) => PipelineError::Lowering { kernel: name.clone(), source },
                other => PipelineError::Optimize(other),
            })?;
            graph.validate()?;
            if !outputs.contains(&name) || readers(&name, ids) {
                materialized.push(name.clone());
            }
            formats.insert(name.clone(), written_format(&graph));
            kernels.push(Kernel { output: name, exprs: members, region: fused, graph, splits: own });
            steps.push(k);
        }
        kernel_steps.push(steps);
    }
    if let Some((var, _)) = splits.iter().find(|(v, _)| !used_splits.contains(v) && !extents.contains_key(v)) {
        return Err(OptimizeError::UnknownIndexVar(var.clone()).into());
    }
    // Reshapes run before the first group starting at or after them.
    let mut pending: Vec<(usize, &Reshape)> = Vec::new();
    let mut seen = 0;
    for item in &p.items {
        match item {
            Item::Reshape(r) => pending.push((seen, r)),
            Item::Expr(_) => seen += 1,
            Item::Fuse { exprs, .. } => seen += exprs.len(),
        }
    }
    let mut steps = Vec::new();
    let mut pending = pending.into_iter().peekable();
    for (ids, ks) in group_list.iter().zip(&kernel_steps) {
        while let Some((_, r)) = pending.next_if(|(at, _)| *at <= ids[0]) {
            steps.push(Step::Reshape(r.clone()));
        }
        steps.extend(ks.iter().map(|&k| Step::Kernel(k)));
    }
    steps.extend(pending.map(|(_, r)| Step::Reshape(r.clone())));
    for r in p.reshapes() {
        if let Some(t) = p.tensor(&r.output) {
            let (mode_order, kinds) = t.storage();
            let f = TensorFormat { shape: p.shape_of(&r.output).unwrap_or_default(), mode_order, kinds, block: None };
            let f = match block {
                Some(b) => block_formats(&BTreeMap::from([(r.output.clone(), f)]), b).remove(&r.output).expect("inserted"),
                None => f,
            };
            formats.insert(r.output.clone(), f);
        }
    }
    let dsl_hash = short_hash(print_program(&p).as_bytes());
    let schedule_hash = short_hash(serde_json::to_string(&(granularity, &schedule, opts)).unwrap_or_default().as_bytes());
    Ok(CompiledProgram { program: p, granularity, kernels, steps, materialized, block, formats, dsl_hash, schedule_hash })
}

/// Re-encodes `t` into `fmt`, blocking if the format asks for it.
fn encode(name: &str, t: &SparseTensor, fmt: &TensorFormat) -> Result<SparseTensor, PipelineError> {
    if t.shape != fmt.shape {
        return Err(PipelineError::ShapeMismatch { tensor: name.to_string(), expected: fmt.shape.clone(), found: t.shape.clone() });
    }
    let entries = match t.block_shape() {
        Some(_) => t.entries().into_iter().filter(|(_, v)| *v != 0.0).collect(),
        None => t.entries(),
    };
    match &fmt.block {
        None => {
            if t.block_shape().is_none() && t.mode_order == fmt.mode_order && t.kinds() == fmt.kinds {
                let mut same = t.clone();
                same.name = name.to_string();
                return Ok(same);
            }
            Ok(SparseTensor::from_coo(name, &entries, &fmt.shape, &fmt.kinds, &fmt.mode_order)?)
        }
        Some(b) => {
            if t.block_shape() == Some(b.as_slice()) && t.mode_order == fmt.mode_order {
                return Ok(t.clone());
            }
            let kinds = vec![LevelKind::Compressed; fmt.shape.len()];
            Ok(SparseTensor::from_coo(name, &entries, &fmt.shape, &kinds, &fmt.mode_order)?.block(b)?)
        }
    }
}

/// Element-granularity view of a possibly blocked tensor.
pub fn unblocked(t: &SparseTensor) -> Result<SparseTensor, TensorError> {
    match t.block_shape() {
        Some(_) => t.unblock(&vec![LevelKind::Compressed; t.order()]),
        None => Ok(t.clone()),
    }
}

fn reshape(t: &SparseTensor, name: &str, fmt: &TensorFormat) -> Result<SparseTensor, PipelineError> {
    let flat = unblocked(t)?;
    let old = &flat.shape;
    let mut entries = Vec::new();
    for (c, v) in flat.entries() {
        let mut lin = 0usize;
        for (x, n) in c.iter().zip(old) {
            lin = lin * n + *x as usize;
        }
        let mut out = vec![0u32; fmt.shape.len()];
        for k in (0..fmt.shape.len()).rev() {
            out[k] = (lin % fmt.shape[k]) as u32;
            lin /= fmt.shape[k];
        }
        entries.push((out, v));
    }
    let plain = TensorFormat { block: None, ..fmt.clone() };
    let t = SparseTensor::from_coo(name, &entries, &fmt.shape, &plain.kinds, &plain.mode_order)?;
    encode(name, &t, fmt)
}

pub fn execute(c: &CompiledProgram, inputs: &BTreeMap<String, SparseTensor>, cfg: &SimConfig) -> Result<ExecutionReport, PipelineError> {
    let mut env = BTreeMap::new();
    for name in c.program.inputs() {
        let t = inputs.get(&name).ok_or_else(|| PipelineError::MissingInput(name.clone()))?;
        env.insert(name.clone(), encode(&name, t, &c.formats[&name])?);
    }
    let mut rep = ExecutionReport { outputs: BTreeMap::new(), tensors: BTreeMap::new(), kernels: vec![], cycles: 0, flops: 0, bytes_read: 0, bytes_written: 0 };
    for step in &c.steps {
        match step {
            Step::Kernel(k) => {
                let kernel = &c.kernels[*k];
                for pc in &kernel.region.permuted_copies {
                    let copy = env[&pc.source].permute_modes(&pc.mode_order)?;
                    env.insert(pc.name.clone(), SparseTensor { name: pc.name.clone(), ..copy });
                }
                let r = simulate(&kernel.graph, &env, cfg).map_err(|source| PipelineError::Sim { kernel: kernel.output.clone(), source })?;
                rep.cycles += r.cycles;
                rep.flops += r.flops;
                rep.bytes_read += r.bytes_read;
                rep.bytes_written += r.bytes_written;
                env.extend(r.outputs.clone());
                rep.kernels.push((kernel.output.clone(), r));
            }
            Step::Reshape(r) => {
                let src = env.get(&r.input).ok_or_else(|| PipelineError::MissingInput(r.input.clone()))?;
                let t = reshape(src, &r.output, &c.formats[&r.output])?;
                env.insert(r.output.clone(), t);
            }
        }
    }
    for name in c.program.outputs() {
        if let Some(t) = env.get(&name) {
            rep.outputs.insert(name.clone(), unblocked(t)?);
        }
    }
    rep.tensors = env;
    Ok(rep)
}
