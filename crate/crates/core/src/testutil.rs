use crate::frontend::{infer_intermediates, parse_program, var_extents, EinsumExpr};
use crate::fusion::{fuse_region, FusedRegion, FusionError, RegionSpec, TensorFormat};
use std::collections::BTreeMap;

/// Fuses every expression of `src` into one region producing `output`.
pub fn fuse_src(src: &str, output: &str, order: Option<&[&str]>) -> Result<FusedRegion, FusionError> {
    let p = infer_intermediates(&parse_program(src).unwrap());
    let mut formats = BTreeMap::new();
    for t in &p.tensors {
        let (mode_order, kinds) = t.storage();
        formats.insert(t.name.clone(), TensorFormat { shape: p.shape_of(&t.name).unwrap(), mode_order, kinds, block: None });
    }
    let exprs: Vec<EinsumExpr> = p.expressions().into_iter().cloned().collect();
    let order: Option<Vec<String>> = order.map(|o| o.iter().map(|s| s.to_string()).collect());
    let extents = var_extents(&p);
    fuse_region(&RegionSpec { exprs: &exprs, output, formats: &formats, nnz: &BTreeMap::new(), extents: &extents, order: order.as_deref() })
}

/// Random inputs for every tensor `src` reads, in declared formats.
pub fn random_inputs(src: &str, density: f64, seed: u64) -> BTreeMap<String, crate::tensor::SparseTensor> {
    use rand::{Rng, SeedableRng};
    let p = infer_intermediates(&parse_program(src).unwrap());
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut out = BTreeMap::new();
    for name in p.inputs() {
        let decl = p.tensor(&name).unwrap();
        let shape = p.shape_of(&name).unwrap();
        let (mode_order, kinds) = decl.storage();
        let mut entries = vec![];
        crate::tensor::for_each_coord(&shape, |c| {
            if rng.gen_bool(density) {
                entries.push((c.iter().map(|&x| x as u32).collect(), rng.gen_range(1..10) as f64 * if rng.gen_bool(0.3) { -1.0 } else { 1.0 }));
            }
        });
        out.insert(name.clone(), crate::tensor::SparseTensor::from_coo(&name, &entries, &shape, &kinds, &mode_order).unwrap());
    }
    out
}

/// Fuses, lowers and simulates `src`, returning the simulated and oracle values of `output`.
pub fn run_vs_oracle(
    src: &str,
    output: &str,
    order: Option<&[&str]>,
    inputs: &BTreeMap<String, crate::tensor::SparseTensor>,
    cfg: &crate::sim::SimConfig,
) -> (crate::tensor::DenseTensor, crate::tensor::DenseTensor, crate::sim::SimReport) {
    let region = fuse_src(src, output, order).unwrap();
    let table = crate::table::build_table(&region).unwrap();
    let graph = crate::table::generate_graph(&table).unwrap();
    let report = crate::sim::simulate(&graph, inputs, cfg).unwrap();
    let p = infer_intermediates(&parse_program(src).unwrap());
    let oracle = crate::oracle::evaluate_program(&p, inputs).unwrap();
    (report.outputs[output].to_dense(), oracle[output].values(), report)
}

/// Like [`run_vs_oracle`] but with the region split into lanes.
pub fn run_parallel(
    src: &str,
    output: &str,
    order: Option<&[&str]>,
    splits: &[(&str, u32)],
    inputs: &BTreeMap<String, crate::tensor::SparseTensor>,
    cfg: &crate::sim::SimConfig,
) -> (crate::graph::DataflowGraph, crate::sim::SimReport) {
    use crate::table::{build_lane_table, generate_parallel_graph, LaneFilter};
    let region = fuse_src(src, output, order).unwrap();
    let resolve = |v: &str| region.origin.iter().find(|(_, o)| *o == v).map(|(k, _)| k.clone()).unwrap_or_else(|| v.to_string());
    let splits: Vec<(String, u32)> = splits.iter().map(|(v, n)| (resolve(v), *n)).collect();
    let total: u32 = splits.iter().map(|s| s.1).product();
    let mut tables = vec![];
    for lane in 0..total {
        let mut rest = lane;
        let mut filters = vec![];
        for (var, lanes) in splits.iter().rev() {
            filters.push(LaneFilter { var: var.clone(), lanes: *lanes, lane: rest % lanes });
            rest /= lanes;
        }
        tables.push(build_lane_table(&region, &filters).unwrap());
    }
    let graph = generate_parallel_graph(&tables, &splits).unwrap();
    let report = crate::sim::simulate(&graph, inputs, cfg).unwrap();
    (graph, report)
}
