//! One PASS/FAIL line per acceptance criterion.
//!
//! Goldens live in tests/golden; set UPDATE_GOLDENS=1 to rewrite them.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sparsefuse::bench::{self, agrees};
use sparsefuse::frontend::{infer_intermediates, parse_program};
use sparsefuse::fusion::{enumerate_orders, pin_local_orders};
use sparsefuse::graph::Primitive;
use sparsefuse::optimizer::{estimate, sweep_orders, HeuristicInput, SweepRequest};
use sparsefuse::oracle::evaluate_program;
use sparsefuse::pipeline::{compile, execute, CompileOptions, CompiledProgram, ExecutionReport, Granularity};
use sparsefuse::sim::SimConfig;
use sparsefuse::table::build_table;
use sparsefuse::tensor::{LevelKind, SparseTensor};
use std::collections::BTreeMap;
use std::path::PathBuf;
use std::time::Instant;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

/// Criteria that cannot be met at desk scale; each has a ledger entry.
const KNOWN_UNATTAINABLE: &[usize] = &[];

const ORDERS_PER_PROGRAM: usize = 24;

fn run(c: &CompiledProgram, inputs: &BTreeMap<String, SparseTensor>, cfg: &SimConfig) -> Result<ExecutionReport, String> {
    execute(c, inputs, cfg).map_err(|e| e.to_string())
}

fn compile_with(src: &str, opts: &CompileOptions) -> Result<CompiledProgram, String> {
    let p = parse_program(src).map_err(|e| e.to_string())?;
    compile(&p, opts).map_err(|e| e.to_string())
}

fn full_with_order(src: &str, order: &[&str]) -> Result<CompiledProgram, String> {
    compile_with(src, &CompileOptions { granularity: Some(Granularity::Full), order: Some(order.iter().map(|s| s.to_string()).collect()), ..Default::default() })
}

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn golden(name: &str, got: &str) -> Result<(), String> {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name);
    if std::env::var_os("UPDATE_GOLDENS").is_some() {
        std::fs::create_dir_all(path.parent().unwrap()).unwrap();
        std::fs::write(&path, got).unwrap();
    }
    let want = std::fs::read_to_string(&path).map_err(|e| format!("{}: {e}", path.display()))?;
    check(want == got, || format!("{name} differs from golden:\n{got}"))
}

/// Orders spread across a compiled program's kernels, at most `cap` in total.
/// Each entry maps one kernel to one of its enumerated orders.
fn order_variants(c: &CompiledProgram, cap: usize) -> Result<Vec<BTreeMap<usize, Vec<String>>>, String> {
    let mut per_kernel = Vec::new();
    for k in &c.kernels {
        let (orders, _) = enumerate_orders(&k.region.pog, cap).map_err(|e| e.to_string())?;
        per_kernel.push(orders);
    }
    let mut out = Vec::new();
    let mut depth = 0;
    while out.len() < cap {
        let mut any = false;
        for (k, orders) in per_kernel.iter().enumerate() {
            if let Some(o) = orders.get(depth) {
                any = true;
                if out.len() < cap {
                    out.push(BTreeMap::from([(k, o.clone())]));
                }
            }
        }
        if !any {
            break;
        }
        depth += 1;
    }
    Ok(out)
}

fn oracle_equivalence() -> Outcome {
    let cfg = SimConfig::default();
    let mut runs = 0;
    let mut failures = Vec::new();
    for b in bench::suite() {
        let p = b.program().map_err(|e| e.to_string())?;
        let inputs = b.generate(11).map_err(|e| e.to_string())?;
        let oracle = evaluate_program(&infer_intermediates(&p), &inputs).map_err(|e| e.to_string())?;
        for g in Granularity::ALL {
            let base = CompileOptions { granularity: Some(g), ..Default::default() };
            let c = compile(&p, &base).map_err(|e| format!("{} {}: {e}", b.name, g.name()))?;
            for kernel_orders in order_variants(&c, ORDERS_PER_PROGRAM)? {
                let opts = CompileOptions { kernel_orders: kernel_orders.clone(), ..base.clone() };
                let result = compile(&p, &opts).map_err(|e| e.to_string()).and_then(|c| run(&c, &inputs, &cfg));
                runs += 1;
                match result {
                    Ok(r) => {
                        for (name, t) in &r.outputs {
                            if !agrees(&t.to_dense(), &oracle[name].values(), 1e-9) {
                                failures.push(format!("{} {} {kernel_orders:?}: {name} mismatch", b.name, g.name()));
                            }
                        }
                    }
                    Err(e) => failures.push(format!("{} {} {kernel_orders:?}: {e}", b.name, g.name())),
                }
            }
        }
    }
    check(failures.is_empty(), || format!("{} of {runs} runs failed: {}", failures.len(), failures.join("; ")))?;
    Ok(format!("{runs} program x granularity x order runs match the oracle"))
}

/// A random tensor built level by level so coordinate levels hold one child per parent.
fn random_tensor(rng: &mut ChaCha8Rng, id: usize) -> (String, SparseTensor) {
    let order = rng.gen_range(1..=4);
    let shape: Vec<usize> = (0..order).map(|_| rng.gen_range(1..=5)).collect();
    let mut mode_order: Vec<usize> = (0..order).collect();
    for i in (1..order).rev() {
        mode_order.swap(i, rng.gen_range(0..=i));
    }
    let kinds: Vec<LevelKind> = (0..order)
        .map(|l| match rng.gen_range(0..3) {
            0 => LevelKind::Dense,
            1 => LevelKind::Compressed,
            _ if l == 0 => LevelKind::Compressed,
            _ => LevelKind::Coordinate,
        })
        .collect();
    let density = [0.01, 0.1, 0.3, 0.6, 1.0][rng.gen_range(0..5)];
    let mut prefixes: Vec<Vec<u32>> = vec![vec![]];
    for (l, kind) in kinds.iter().enumerate() {
        let extent = shape[mode_order[l]] as u32;
        let mut next = Vec::new();
        for p in &prefixes {
            let picks: Vec<u32> = match kind {
                LevelKind::Dense => (0..extent).collect(),
                LevelKind::Compressed => {
                    let mut picks: Vec<u32> = (0..extent).filter(|_| rng.gen_bool(density)).collect();
                    // A coordinate level above needs every position to reach a leaf.
                    if picks.is_empty() && kinds[..l].contains(&LevelKind::Coordinate) {
                        picks.push(rng.gen_range(0..extent));
                    }
                    picks
                }
                LevelKind::Coordinate => vec![rng.gen_range(0..extent)],
            };
            next.extend(picks.into_iter().map(|c| [p.clone(), vec![c]].concat()));
        }
        prefixes = next;
    }
    let entries: Vec<(Vec<u32>, f64)> = prefixes
        .into_iter()
        .map(|storage| {
            let mut logical = vec![0u32; order];
            for (l, c) in storage.into_iter().enumerate() {
                logical[mode_order[l]] = c;
            }
            (logical, rng.gen_range(1..100) as f64 / 8.0)
        })
        .collect();
    let vars: Vec<String> = (0..order).map(|m| format!("a{m}")).collect();
    let levels: Vec<String> = (0..order).map(|l| format!("{}({})", kinds[l].keyword(), vars[mode_order[l]])).collect();
    let mut src = String::new();
    for (m, v) in vars.iter().enumerate() {
        src.push_str(&format!("index {v} = {};\n", shape[m]));
    }
    let idx = vars.join(",");
    src.push_str(&format!("tensor X({idx}): {};\nY({idx}) = X({idx});\n", levels.join("->")));
    let t = SparseTensor::from_coo("X", &entries, &shape, &kinds, &mode_order).unwrap_or_else(|e| panic!("tensor {id}: {e}\n{src}"));
    (src, t)
}

fn round_trip() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let cfg = SimConfig::default();
    for id in 0..1000 {
        let (src, x) = random_tensor(&mut rng, id);
        let c = compile_with(&src, &CompileOptions::default()).map_err(|e| format!("tensor {id}: {e}\n{src}"))?;
        let r = run(&c, &BTreeMap::from([("X".to_string(), x.clone())]), &cfg).map_err(|e| format!("tensor {id}: {e}\n{src}"))?;
        let y = &r.outputs["Y"];
        let mut want = x.entries();
        let mut got = y.entries();
        want.sort_by(|a, b| a.0.cmp(&b.0));
        got.sort_by(|a, b| a.0.cmp(&b.0));
        check(want == got, || format!("tensor {id} not reconstructed\n{src}"))?;
    }
    Ok("1000 random tensors reconstructed exactly".into())
}

const SPMV_CSC: &str = "index i = 2; index j = 3;\ntensor B(i,j): dense(j)->compressed(i);\ntensor c(j): dense(j);\nx(i) = B(i,j) * c(j);\n";
const SPMM: &str = "index i = 4; index k = 4; index j = 3;\ntensor A(i,k): dense(i)->compressed(k);\ntensor X(k,j): dense(k)->dense(j);\nT(i,j) = A(i,k) * X(k,j);\n";
const SAGE_TWO_STEP: &str = "index i = 4; index l = 4; index m = 3; index j = 2;\n\
    tensor A(i,l): dense(i)->compressed(l);\ntensor X(l,m): dense(l)->compressed(m);\ntensor W(m,j): dense(m)->compressed(j);\n\
    fuse {\n T0(i,m) = A(i,l) * X(l,m);\n T(i,j) = T0(i,m) * W(m,j);\n}\n";

fn counts_text(c: &CompiledProgram) -> String {
    c.kernels[0].graph.class_counts().into_iter().map(|(k, n)| format!("{k} {n}\n")).collect()
}

fn structural_goldens() -> Outcome {
    let spmv = full_with_order(SPMV_CSC, &["j", "i"])?;
    let g = &spmv.kernels[0].graph;
    golden("spmv_ji.counts", &counts_text(&spmv))?;
    golden("spmv_ji.dot", &g.to_dot())?;
    let inter = g.find("Intersect_j").ok_or("no Intersect_j")?;
    let into_inter = g.channels.iter().filter(|ch| ch.to.node == inter).count();
    check(into_inter == 4, || format!("Intersect_j has {into_inter} in-edges"))?;

    let spmm = full_with_order(SPMM, &["i", "k", "j"])?;
    golden("spmm_ikj.counts", &counts_text(&spmm))?;
    golden("spmm_ikj.dot", &spmm.kernels[0].graph.to_dot())?;
    let table = build_table(&spmm.kernels[0].region).map_err(|e| e.to_string())?;
    golden("spmm_ikj.table", &table.dump_text())?;

    let sage = full_with_order(SAGE_TWO_STEP, &["i", "l", "m", "j"])?;
    let t = build_table(&sage.kernels[0].region).map_err(|e| e.to_string())?;
    let cells = t.cells();
    let cell = |row: &str, col: &str| cells.get(&(row.to_string(), col.to_string())).cloned().unwrap_or_default();
    check(cell("l", "A|X") == ["Intersect_l"], || format!("l,A|X = {:?}", cell("l", "A|X")))?;
    check(cell("m", "T0|W") == ["Intersect_m", "Red1_l[crd0]"], || format!("m,T0|W = {:?}", cell("m", "T0|W")))?;
    check(cell("m", "T0") == ["Red1_l"], || format!("m,T0 = {:?}", cell("m", "T0")))?;
    check(cell("j", "T").ends_with(&["Red1_m".to_string(), "Red1_m[crd0]".to_string()]), || format!("j,T = {:?}", cell("j", "T")))?;
    golden("graphsage_neighbor.table", &t.dump_text())?;
    Ok("SpMV j->i and SpMM i->k->j graphs, SpMM and GraphSAGE tables match goldens".into())
}

fn factored_witness() -> Outcome {
    let c = compile_with(bench::SAGE_NEIGHBOR, &CompileOptions { granularity: Some(Granularity::Full), ..Default::default() })?;
    let g = &c.kernels[0].graph;
    let mut witness = None;
    for (i, n) in g.nodes.iter().enumerate() {
        if n.kind.class() == "Red1" {
            for ch in g.consumers_of(i, 0) {
                if matches!(g.nodes[ch.to.node].kind, Primitive::Intersect { .. }) {
                    witness = Some(format!("{} crd0 -> {}", n.name, g.nodes[ch.to.node].name));
                }
            }
        }
        if let Primitive::Intersect { left, right } = n.kind {
            check(left + right <= 2, || format!("{} joins {} operands", n.name, left + right))?;
        }
    }
    witness.ok_or_else(|| "no reducer crd0 feeds an intersect".to_string())
}

fn pct(est: f64, sim: u64) -> f64 {
    100.0 * (est - sim as f64) / (sim as f64).max(1.0)
}

const DENSE_CHAIN: &str = "index i = 4; index k = 5; index j = 3; index l = 2;\n\
    tensor A(i,k): dense(i)->dense(k);\ntensor B(k,j): dense(k)->dense(j);\ntensor C(j,l): dense(j)->dense(l);\n\
    fuse {\n T(i,j) = A(i,k) * B(k,j);\n D(i,l) = T(i,j) * C(j,l);\n}\n";

fn heuristic_accuracy() -> Outcome {
    let cfg = SimConfig::default();
    let mut lines = Vec::new();
    for name in ["gcn", "graphsage"] {
        let b = bench::find(name).ok_or(name)?;
        let p = b.program().map_err(|e| e.to_string())?;
        let inputs = b.generate(5).map_err(|e| e.to_string())?;
        let h = HeuristicInput::measured(&inputs);
        for g in Granularity::ALL {
            let c = compile(&p, &CompileOptions { granularity: Some(g), ..Default::default() }).map_err(|e| e.to_string())?;
            let e = estimate(&c, &h).map_err(|e| e.to_string())?;
            let r = run(&c, &inputs, &cfg)?;
            let fe = pct(e.flops, r.flops);
            let be = pct(e.bytes(), r.bytes_read + r.bytes_written);
            check(fe.abs() <= 15.0 && be.abs() <= 25.0, || format!("{name} {}: flops {fe:.1}% bytes {be:.1}%", g.name()))?;
            lines.push(format!("{name}/{} {fe:+.1}%/{be:+.1}%", g.name()));
        }
    }
    let p = parse_program(DENSE_CHAIN).map_err(|e| e.to_string())?;
    let inputs = bench::generate_inputs(&p, &[], 5).map_err(|e| e.to_string())?;
    let h = HeuristicInput::measured(&inputs);
    for g in Granularity::ALL {
        let c = compile(&p, &CompileOptions { granularity: Some(g), ..Default::default() }).map_err(|e| e.to_string())?;
        let e = estimate(&c, &h).map_err(|e| e.to_string())?;
        let r = run(&c, &inputs, &cfg)?;
        let exact = e.flops == r.flops as f64 && e.bytes() == (r.bytes_read + r.bytes_written) as f64;
        check(exact, || format!("dense {}: estimate {}/{} vs simulated {}/{}", g.name(), e.flops, e.bytes(), r.flops, r.bytes_read + r.bytes_written))?;
    }
    Ok(format!("flops/bytes error {}; dense chain exact", lines.join(", ")))
}

fn order_sensitivity() -> Outcome {
    let b = bench::find("nested_matmul").ok_or("no nested_matmul")?;
    let p = b.program().map_err(|e| e.to_string())?;
    let inputs = b.generate(1).map_err(|e| e.to_string())?;
    let cfg = SimConfig::default();
    let h = HeuristicInput::measured(&inputs);
    let opts = CompileOptions { granularity: Some(Granularity::Full), ..Default::default() };
    let req = SweepRequest { kernel: None, cap: ORDERS_PER_PROGRAM, constrained: false, simulate: Some((&inputs, &cfg)) };
    let res = sweep_orders(&p, &opts, &h, &req).map_err(|e| e.to_string())?;
    let cycles: Vec<u64> = res.entries.iter().filter_map(|e| e.measured.as_ref().map(|m| m.cycles)).collect();
    check(cycles.len() == res.entries.len() && cycles.len() > 1, || format!("{} of {} orders simulated", cycles.len(), res.entries.len()))?;
    let (lo, hi) = (*cycles.iter().min().unwrap(), *cycles.iter().max().unwrap());
    let ratio = hi as f64 / lo as f64;
    check(ratio >= 2.0, || format!("worst/best = {hi}/{lo} = {ratio:.2}"))?;
    Ok(format!("{} orders, worst/best cycles {hi}/{lo} = {ratio:.2}", cycles.len()))
}

fn order_pruning() -> Outcome {
    let b = bench::find("graphsage").ok_or("no graphsage")?;
    let p = b.program().map_err(|e| e.to_string())?;
    let inputs = b.generate(1).map_err(|e| e.to_string())?;
    let h = HeuristicInput::measured(&inputs);
    let c = compile(&p, &CompileOptions { granularity: Some(Granularity::Full), ..Default::default() }).map_err(|e| e.to_string())?;
    let region = &c.kernels.last().ok_or("no kernels")?.region;
    let free = region.pog.count_linear_extensions().ok_or("unconstrained count not exact")?;
    let pinned = pin_local_orders(region, &h.densities).count_linear_extensions().ok_or("constrained count not exact")?;
    check(pinned < free, || format!("constrained {pinned} vs unconstrained {free}"))?;
    Ok(format!("{} orders: unconstrained {free}, constrained {pinned}", region.output))
}

/// Attention order with the output var `d` hoisted as far out as the fusion constraints allow.
const ATTENTION_ORDER: &[&str] = &["i", "u3", "d", "u0", "u1", "u2", "u4", "u5", "u6", "u7"];

fn attention(block: Option<usize>, splits: &[(&str, u32)], order: Option<&[&str]>) -> Result<ExecutionReport, String> {
    let b = bench::find("attention").ok_or("no attention")?;
    let p = b.program().map_err(|e| e.to_string())?;
    let inputs = b.generate(3).map_err(|e| e.to_string())?;
    let opts = CompileOptions {
        block: block.map(|f| vec![f, f]),
        parallelize: (!splits.is_empty()).then(|| splits.iter().map(|(v, f)| (v.to_string(), *f)).collect()),
        order: order.map(|o| o.iter().map(|s| s.to_string()).collect()),
        ..Default::default()
    };
    let c = compile(&p, &opts).map_err(|e| e.to_string())?;
    run(&c, &inputs, &SimConfig::default())
}

fn parallel_scaling() -> Outcome {
    let base = attention(None, &[], Some(ATTENTION_ORDER))?;
    let single = attention(None, &[("i", 4)], Some(ATTENTION_ORDER))?;
    let nested = attention(None, &[("i", 4), ("d", 4)], Some(ATTENTION_ORDER))?;
    let o = base.outputs["O"].to_dense();
    for (what, r) in [("i4", &single), ("i4xd4", &nested)] {
        check(agrees(&r.outputs["O"].to_dense(), &o, 1e-9), || format!("{what} output differs"))?;
    }
    check(2 * single.cycles <= base.cycles, || format!("i4 {} vs base {}", single.cycles, base.cycles))?;
    check(nested.cycles < single.cycles, || format!("i4xd4 {} vs i4 {}", nested.cycles, single.cycles))?;
    Ok(format!("cycles base {} -> i4 {} -> i4xd4 {}", base.cycles, single.cycles, nested.cycles))
}

fn blocking_benefit() -> Outcome {
    let base = attention(None, &[], None)?;
    let o = base.outputs["O"].to_dense();
    let mut cycles = vec![base.cycles];
    for f in [2, 4] {
        let r = attention(Some(f), &[], None)?;
        check(agrees(&r.outputs["O"].to_dense(), &o, 1e-9), || format!("block {f} output differs"))?;
        check(r.cycles < *cycles.last().unwrap(), || format!("block {f}: {} cycles after {:?}", r.cycles, cycles))?;
        cycles.push(r.cycles);
    }
    Ok(format!("cycles for blocks 1/2/4: {cycles:?}"))
}

fn fusion_bytes() -> Outcome {
    let b = bench::find("gcn").ok_or("no gcn")?;
    let p = b.program().map_err(|e| e.to_string())?;
    let inputs = b.generate(5).map_err(|e| e.to_string())?;
    let cfg = SimConfig::default();
    let mut reps = BTreeMap::new();
    for g in Granularity::ALL {
        let c = compile(&p, &CompileOptions { granularity: Some(g), ..Default::default() }).map_err(|e| e.to_string())?;
        reps.insert(g, run(&c, &inputs, &cfg)?);
    }
    let (un, part, full) = (&reps[&Granularity::Unfused], &reps[&Granularity::Partial], &reps[&Granularity::Full]);
    check(part.bytes_written < un.bytes_written, || format!("written partial {} vs unfused {}", part.bytes_written, un.bytes_written))?;
    check(full.flops >= part.flops, || format!("flops full {} vs partial {}", full.flops, part.flops))?;
    Ok(format!("bytes written unfused {} > partial {}; flops full {} >= partial {}", un.bytes_written, part.bytes_written, full.flops, part.flops))
}

fn cli(args: &[&str]) -> Result<String, String> {
    let out = std::process::Command::new(env!("CARGO_BIN_EXE_sparsefuse")).args(args).output().map_err(|e| e.to_string())?;
    check(out.status.success(), || format!("{args:?}: {}", String::from_utf8_lossy(&out.stderr)))?;
    Ok(String::from_utf8_lossy(&out.stdout).into_owned())
}

/// Drops the single timestamp header line.
fn without_stamp(report: &str) -> String {
    report.lines().filter(|l| !l.starts_with("# generated at")).collect::<Vec<_>>().join("\n")
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let programs = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../programs");
    let out = dir.path().join("spmv");
    let s = |p: &PathBuf| p.to_string_lossy().into_owned();
    cli(&["compile", &s(&programs.join("spmv.ein")), "-o", &s(&out)])?;
    let bind_b = format!("B={}", s(&programs.join("B.coo")));
    let bind_c = format!("c={}", s(&programs.join("c.coo")));
    let mut reports = Vec::new();
    for depth in ["1", "4", "4", "256"] {
        cli(&["run", &s(&out), "--bind", &bind_b, "--bind", &bind_c, "--channel-depth", depth])?;
        let hash = std::fs::read_to_string(out.join("current")).map_err(|e| e.to_string())?;
        let sdir = out.join(hash.trim());
        let report = std::fs::read_to_string(sdir.join("report.txt")).map_err(|e| e.to_string())?;
        let x = std::fs::read_to_string(sdir.join("outputs/x.coo")).map_err(|e| e.to_string())?;
        reports.push((depth, without_stamp(&report), x));
    }
    check(reports[1].1 == reports[2].1, || "two runs at depth 4 differ".into())?;
    check(reports[1].1.contains("flops: 4"), || format!("tiny SpMV report:\n{}", reports[1].1))?;
    check(reports.iter().all(|r| r.2 == reports[0].2), || "outputs differ across channel depths".into())?;
    let nested = s(&programs.join("nested_matmul.ein"));
    let sweep = ["sweep", nested.as_str(), "--orders-cap", "24", "--simulate", "--density", "A=0.15"];
    check(cli(&sweep)? == cli(&sweep)?, || "sweep output differs between runs".into())?;

    let mut compared = 0;
    for b in bench::suite() {
        let p = b.program().map_err(|e| e.to_string())?;
        let inputs = b.generate(9).map_err(|e| e.to_string())?;
        let c = compile(&p, &CompileOptions::default()).map_err(|e| e.to_string())?;
        let mut seen: Option<BTreeMap<String, String>> = None;
        for depth in [1, 4, 256] {
            let r = run(&c, &inputs, &SimConfig { channel_depth: depth, ..SimConfig::default() })?;
            let outs: BTreeMap<String, String> = r.outputs.iter().map(|(k, t)| (k.clone(), t.to_coo_text())).collect();
            if let Some(prev) = &seen {
                check(prev == &outs, || format!("{} outputs change at channel depth {depth}", b.name))?;
            }
            seen = Some(outs);
        }
        compared += 1;
    }
    Ok(format!("run and sweep reports repeat byte for byte; {compared} programs identical at channel depths 1/4/256"))
}

fn main() {
    let criteria: [Criterion; 11] = [
        ("oracle equivalence", oracle_equivalence),
        ("scan/write round trip", round_trip),
        ("structural goldens", structural_goldens),
        ("factored iteration witness", factored_witness),
        ("heuristic accuracy", heuristic_accuracy),
        ("dataflow order sensitivity", order_sensitivity),
        ("order space pruning", order_pruning),
        ("parallelization scaling", parallel_scaling),
        ("blocking benefit", blocking_benefit),
        ("fusion byte reduction", fusion_bytes),
        ("determinism", determinism),
    ];
    let mut unexpected = Vec::new();
    for (i, (name, f)) in criteria.iter().enumerate() {
        let n = i + 1;
        let t = Instant::now();
        let outcome = f();
        let secs = t.elapsed().as_secs_f64();
        match &outcome {
            Ok(detail) => println!("PASS {n:2} {name}: {detail} ({secs:.1}s)"),
            Err(why) => println!("FAIL {n:2} {name}: {why} ({secs:.1}s)"),
        }
        if outcome.is_err() && !KNOWN_UNATTAINABLE.contains(&n) {
            unexpected.push(n);
        }
    }
    if !unexpected.is_empty() {
        eprintln!("criteria failed: {unexpected:?}");
        std::process::exit(1);
    }
}
