//! Graph-level transformations and the analytic cost model.

mod blocking;
mod estimate;
mod sweep;

pub use blocking::{block_extents, block_formats, block_inputs, uniform_block};
pub use estimate::{estimate, estimate_region, CostEstimate, ExprCost, HeuristicInput};
pub use sweep::{sweep_orders, Measured, SweepEntry, SweepRequest, SweepResult};

use crate::fusion::{FusedRegion, FusionError};
use crate::graph::DataflowGraph;
use crate::table::{build_lane_table, build_table, generate_graph, generate_parallel_graph, LaneFilter, LoweringError};
use crate::tensor::TensorError;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum OptimizeError {
    #[error("no index var named {0}")]
    UnknownIndexVar(String),
    #[error("parallel factor for {0} must be at least 1")]
    ZeroFactor(String),
    #[error("extent {extent} of {var} is not divisible by block {block}")]
    IndivisibleExtent { var: String, extent: usize, block: usize },
    #[error("incompatible block shapes: {0}")]
    IncompatibleBlocks(String),
    #[error(transparent)]
    Lowering(#[from] LoweringError),
    #[error(transparent)]
    Fusion(#[from] FusionError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Maps a user-facing var name onto the region's var.
fn region_var(region: &FusedRegion, name: &str) -> Option<String> {
    let all = region.all_vars();
    if all.iter().any(|v| v == name) {
        return Some(name.to_string());
    }
    all.into_iter().find(|v| region.origin.get(v).is_some_and(|o| o == name))
}

/// Lowers `region` with its output vars split across lanes. Each entry of
/// `splits` is applied in order, so later entries nest inside earlier ones.
/// Factor-1 splits are dropped, leaving the plain graph.
pub fn parallelize(region: &FusedRegion, splits: &[(String, u32)]) -> Result<DataflowGraph, OptimizeError> {
    let mut resolved = Vec::new();
    for (name, factor) in splits {
        let var = region_var(region, name).ok_or_else(|| OptimizeError::UnknownIndexVar(name.clone()))?;
        match factor {
            0 => return Err(OptimizeError::ZeroFactor(name.clone())),
            1 => {}
            &f => resolved.push((var, f)),
        }
    }
    if resolved.is_empty() {
        return Ok(generate_graph(&build_table(region)?)?);
    }
    let total: u32 = resolved.iter().map(|s| s.1).product();
    let mut tables = Vec::with_capacity(total as usize);
    for lane in 0..total {
        let mut rest = lane;
        let mut filters = Vec::with_capacity(resolved.len());
        for (var, lanes) in resolved.iter().rev() {
            filters.push(LaneFilter { var: var.clone(), lanes: *lanes, lane: rest % lanes });
            rest /= lanes;
        }
        tables.push(build_lane_table(region, &filters)?);
    }
    Ok(generate_parallel_graph(&tables, &resolved)?)
}
