//! Order sweeps: compile one kernel under each legal order and rank them.

use super::{estimate, CostEstimate, HeuristicInput};
use crate::frontend::EinsumProgram;
use crate::fusion::{enumerate_orders, pin_local_orders, OrderCount};
use crate::pipeline::{compile, execute, CompileOptions, PipelineError};
use crate::sim::SimConfig;
use crate::tensor::SparseTensor;
use serde::Serialize;
use std::collections::BTreeMap;

#[derive(Clone, Debug, Serialize)]
pub struct Measured {
    pub cycles: u64,
    pub flops: u64,
    pub bytes_read: u64,
    pub bytes_written: u64,
}

#[derive(Clone, Debug, Serialize)]
pub struct SweepEntry {
    pub order: Vec<String>,
    pub estimate: Option<CostEstimate>,
    pub measured: Option<Measured>,
    /// Why this order could not be compiled or run.
    pub error: Option<String>,
}

impl SweepEntry {
    /// Ranking key: measured cycles when simulated, else estimated stream
    /// length plus FLOPs.
    pub fn cost(&self) -> f64 {
        match (&self.measured, &self.estimate) {
            (Some(m), _) => m.cycles as f64,
            (None, Some(e)) => e.iterations + e.flops,
            _ => f64::INFINITY,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SweepRequest<'a> {
    /// Kernel to sweep, by output name; the last kernel when None.
    pub kernel: Option<&'a str>,
    pub cap: usize,
    /// Enumerate only orders that keep each contraction's locally cheapest order.
    pub constrained: bool,
    /// Simulate every order on these inputs.
    pub simulate: Option<(&'a BTreeMap<String, SparseTensor>, &'a SimConfig)>,
}

#[derive(Clone, Debug, Serialize)]
pub struct SweepResult {
    pub kernel: String,
    pub count: OrderCount,
    /// Entries sorted cheapest first; failures last.
    pub entries: Vec<SweepEntry>,
}

pub fn sweep_orders(program: &EinsumProgram, opts: &CompileOptions, heuristic: &HeuristicInput, req: &SweepRequest) -> Result<SweepResult, PipelineError> {
    let base = compile(program, opts)?;
    let k = match req.kernel {
        Some(name) => base.kernels.iter().position(|kn| kn.output == name).ok_or_else(|| PipelineError::MissingInput(name.to_string()))?,
        None => base.kernels.len().saturating_sub(1),
    };
    let region = &base.kernels[k].region;
    let pog = if req.constrained { pin_local_orders(region, &heuristic.densities) } else { region.pog.clone() };
    let (orders, count) = enumerate_orders(&pog, req.cap).map_err(|source| PipelineError::Fusion { kernel: region.output.clone(), source })?;
    let mut entries = Vec::with_capacity(orders.len());
    for order in orders {
        let mut o = opts.clone();
        o.kernel_orders.insert(k, order.clone());
        let mut entry = SweepEntry { order, estimate: None, measured: None, error: None };
        match compile(program, &o) {
            Ok(c) => {
                match estimate(&c, heuristic) {
                    Ok(e) => entry.estimate = Some(e),
                    Err(e) => entry.error = Some(e.to_string()),
                }
                if let Some((inputs, cfg)) = req.simulate {
                    match execute(&c, inputs, cfg) {
                        Ok(r) => entry.measured = Some(Measured { cycles: r.cycles, flops: r.flops, bytes_read: r.bytes_read, bytes_written: r.bytes_written }),
                        Err(e) => entry.error = Some(e.to_string()),
                    }
                }
            }
            Err(e) => entry.error = Some(e.to_string()),
        }
        entries.push(entry);
    }
    entries.sort_by(|a, b| a.cost().total_cmp(&b.cost()));
    Ok(SweepResult { kernel: region.output.clone(), count, entries })
}
