use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sparsefuse::bench;
use sparsefuse::frontend::{parse_program, EinsumProgram};
use sparsefuse::graph::DataflowGraph;
use sparsefuse::optimizer::{estimate, sweep_orders, HeuristicInput, SweepRequest};
use sparsefuse::oracle::evaluate_program;
use sparsefuse::pipeline::{compile, execute, CompileOptions, CompiledProgram, ExecutionReport, Granularity, PipelineError};
use sparsefuse::sim::SimConfig;
use sparsefuse::table::build_table;
use sparsefuse::tensor::{load_tensor, store_tensor, SparseTensor};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "sparsefuse", version, about = "Fuse, lower and simulate sparse tensor programs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compile a program into dataflow graphs under OUT/<schedule-hash>/.
    Compile {
        program: PathBuf,
        #[command(flatten)]
        schedule: ScheduleArgs,
        #[arg(short = 'o', long = "out")]
        out: PathBuf,
    },
    /// Simulate a compiled program on bound inputs.
    Run {
        dir: PathBuf,
        /// NAME=path.coo
        #[arg(long = "bind", value_parser = parse_binding)]
        bind: Vec<(String, PathBuf)>,
        #[arg(long, default_value_t = 4)]
        channel_depth: usize,
        #[arg(long, default_value_t = 0)]
        mem_latency: u64,
    },
    /// Analytical cost estimate from declared densities.
    Estimate {
        program: PathBuf,
        #[command(flatten)]
        schedule: ScheduleArgs,
        /// NAME=density
        #[arg(long = "density", value_parser = parse_density)]
        density: Vec<(String, f64)>,
        /// A.k:B.k=0.5
        #[arg(long = "rate")]
        rate: Vec<String>,
    },
    /// Enumerate dataflow orders of one kernel and rank them.
    Sweep {
        program: PathBuf,
        #[command(flatten)]
        schedule: ScheduleArgs,
        #[arg(long, default_value_t = 24)]
        orders_cap: usize,
        /// Simulate each order on seeded random inputs.
        #[arg(long)]
        simulate: bool,
        /// Keep each contraction's locally cheapest order.
        #[arg(long)]
        constrained: bool,
        /// Kernel to sweep, by output tensor; defaults to the last.
        #[arg(long)]
        kernel: Option<String>,
        /// NAME=density, used for estimates and random inputs.
        #[arg(long = "density", value_parser = parse_density)]
        density: Vec<(String, f64)>,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Dump graphs or fusion tables of a compiled program.
    Export {
        dir: PathBuf,
        #[arg(long, conflicts_with = "table")]
        dot: bool,
        #[arg(long)]
        table: bool,
    },
    /// Check the bundled suite against the dense oracle.
    Selftest,
}

#[derive(Args, Clone, Default, Serialize, Deserialize)]
struct ScheduleArgs {
    /// Dataflow order, comma separated.
    #[arg(long, value_delimiter = ',')]
    order: Option<Vec<String>>,
    /// auto keeps the program's regions; none, partial or full override them.
    #[arg(long, default_value = "auto")]
    fuse: String,
    /// var:factor, repeatable.
    #[arg(long = "par", value_parser = parse_split)]
    par: Vec<(String, u32)>,
    /// Uniform block shape such as 2x2.
    #[arg(long)]
    block: Option<String>,
}

#[derive(Debug)]
enum CliError {
    /// Problems with the user's program, inputs or flags.
    Diagnostic(String),
    Internal(String),
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Graph(_) | PipelineError::Sim { .. } => CliError::Internal(e.to_string()),
            _ => CliError::Diagnostic(e.to_string()),
        }
    }
}

fn diag(e: impl std::fmt::Display) -> CliError {
    CliError::Diagnostic(e.to_string())
}

fn parse_binding(s: &str) -> Result<(String, PathBuf), String> {
    let (n, p) = s.split_once('=').ok_or("expected NAME=path")?;
    Ok((n.to_string(), PathBuf::from(p)))
}

fn parse_density(s: &str) -> Result<(String, f64), String> {
    let (n, d) = s.split_once('=').ok_or("expected NAME=density")?;
    let d: f64 = d.parse().map_err(|e| format!("{e}"))?;
    if !(0.0..=1.0).contains(&d) {
        return Err(format!("density {d} outside [0, 1]"));
    }
    Ok((n.to_string(), d))
}

fn parse_split(s: &str) -> Result<(String, u32), String> {
    let (v, f) = s.split_once(':').ok_or("expected var:factor")?;
    let f: u32 = f.parse().map_err(|e| format!("{e}"))?;
    if f == 0 {
        return Err("factor must be positive".into());
    }
    Ok((v.to_string(), f))
}

impl ScheduleArgs {
    fn options(&self) -> Result<CompileOptions, CliError> {
        let granularity = match self.fuse.as_str() {
            "auto" => None,
            "none" | "unfused" => Some(Granularity::Unfused),
            "partial" => Some(Granularity::Partial),
            "full" => Some(Granularity::Full),
            other => return Err(diag(format!("unknown --fuse mode `{other}`"))),
        };
        let block = match &self.block {
            Some(b) => Some(b.split('x').map(|d| d.parse::<usize>()).collect::<Result<Vec<_>, _>>().map_err(|e| diag(format!("bad --block `{b}`: {e}")))?),
            None => None,
        };
        Ok(CompileOptions {
            granularity,
            order: self.order.clone(),
            kernel_orders: BTreeMap::new(),
            parallelize: if self.par.is_empty() { None } else { Some(self.par.clone()) },
            block,
        })
    }
}

fn read_program(path: &Path) -> Result<(String, EinsumProgram), CliError> {
    let src = std::fs::read_to_string(path).map_err(|e| diag(format!("{}: {e}", path.display())))?;
    let p = parse_program(&src).map_err(|e| diag(format!("{}: {e}", path.display())))?;
    Ok((src, p))
}

/// What `compile` leaves beside the graphs so `run` and `export` can rebuild the program.
#[derive(Serialize, Deserialize)]
struct Manifest {
    program: String,
    dsl_hash: String,
    schedule_hash: String,
    schedule: ScheduleArgs,
    graphs: Vec<String>,
}

const MANIFEST: &str = "manifest.json";
const SOURCE: &str = "program.ein";
const CURRENT: &str = "current";

fn write(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|e| diag(format!("{}: {e}", path.display())))
}

fn cmd_compile(program: &Path, schedule: &ScheduleArgs, out: &Path) -> Result<(), CliError> {
    let (src, p) = read_program(program)?;
    let c = compile(&p, &schedule.options()?)?;
    let dir = out.join(&c.schedule_hash);
    std::fs::create_dir_all(&dir).map_err(|e| diag(format!("{}: {e}", dir.display())))?;
    let mut graphs = Vec::new();
    for (k, kernel) in c.kernels.iter().enumerate() {
        let name = format!("region-{k}.graph");
        write(&dir.join(&name), &kernel.graph.to_json())?;
        graphs.push(name);
    }
    write(&dir.join(SOURCE), &src)?;
    let name = program.file_stem().map_or("program".to_string(), |s| s.to_string_lossy().into_owned());
    let manifest = Manifest { program: name, dsl_hash: c.dsl_hash.clone(), schedule_hash: c.schedule_hash.clone(), schedule: schedule.clone(), graphs };
    write(&dir.join(MANIFEST), &serde_json::to_string_pretty(&manifest).expect("manifest serializes"))?;
    write(&out.join(CURRENT), &format!("{}\n", c.schedule_hash))?;
    println!("compiled {} kernel(s) into {}", c.kernels.len(), dir.display());
    Ok(())
}

/// Accepts either the compile output directory or one schedule directory inside it.
fn schedule_dir(dir: &Path) -> Result<PathBuf, CliError> {
    if dir.join(MANIFEST).exists() {
        return Ok(dir.to_path_buf());
    }
    let current = dir.join(CURRENT);
    let hash = std::fs::read_to_string(&current).map_err(|_| diag(format!("{} holds no compiled program", dir.display())))?;
    Ok(dir.join(hash.trim()))
}

fn load_compiled(dir: &Path) -> Result<(PathBuf, Manifest, CompiledProgram), CliError> {
    let sdir = schedule_dir(dir)?;
    let text = std::fs::read_to_string(sdir.join(MANIFEST)).map_err(|e| diag(format!("{}: {e}", sdir.display())))?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| diag(format!("bad manifest: {e}")))?;
    let (_, p) = read_program(&sdir.join(SOURCE))?;
    let c = compile(&p, &manifest.schedule.options()?)?;
    if c.schedule_hash != manifest.schedule_hash {
        return Err(CliError::Internal(format!("recompiled schedule hash {} differs from {}", c.schedule_hash, manifest.schedule_hash)));
    }
    for name in &manifest.graphs {
        let g = std::fs::read_to_string(sdir.join(name)).map_err(|e| diag(format!("{name}: {e}")))?;
        DataflowGraph::from_json(&g).map_err(|e| diag(format!("{name}: {e}")))?;
    }
    Ok((sdir, manifest, c))
}

fn report_text(manifest: &Manifest, r: &ExecutionReport) -> String {
    let mut s = String::new();
    let stamp = std::time::SystemTime::now().duration_since(std::time::UNIX_EPOCH).map_or(0, |d| d.as_secs());
    let _ = writeln!(s, "# generated at unix time {stamp}");
    let _ = writeln!(s, "program: {}", manifest.program);
    let _ = writeln!(s, "dsl_hash: {}", manifest.dsl_hash);
    let _ = writeln!(s, "schedule_hash: {}", manifest.schedule_hash);
    let _ = writeln!(s, "cycles: {}", r.cycles);
    let _ = writeln!(s, "flops: {}", r.flops);
    let _ = writeln!(s, "bytes_read: {}", r.bytes_read);
    let _ = writeln!(s, "bytes_written: {}", r.bytes_written);
    for (k, (name, sim)) in r.kernels.iter().enumerate() {
        let _ = writeln!(s, "kernel {k} ({name}): cycles={} flops={} bytes_read={} bytes_written={}", sim.cycles, sim.flops, sim.bytes_read, sim.bytes_written);
        let _ = writeln!(s, "per_node:");
        for (node, st) in &sim.per_node {
            let _ = writeln!(s, "  {node}: fires={} tokens_out={} flops={}", st.fires, st.tokens_out, st.flops);
        }
    }
    s
}

fn cmd_run(dir: &Path, bind: &[(String, PathBuf)], cfg: &SimConfig) -> Result<(), CliError> {
    let (sdir, manifest, c) = load_compiled(dir)?;
    let mut inputs = BTreeMap::new();
    for (name, path) in bind {
        let decl = c.program.tensor(name).ok_or_else(|| diag(format!("--bind {name}: no such tensor")))?;
        let (mode_order, kinds) = decl.storage();
        inputs.insert(name.clone(), load_tensor(path, name, &kinds, &mode_order).map_err(diag)?);
    }
    let r = execute(&c, &inputs, cfg)?;
    let outs = sdir.join("outputs");
    std::fs::create_dir_all(&outs).map_err(|e| diag(format!("{}: {e}", outs.display())))?;
    for (name, t) in &r.outputs {
        store_tensor(t, &outs.join(format!("{name}.coo"))).map_err(diag)?;
    }
    let text = report_text(&manifest, &r);
    write(&sdir.join("report.txt"), &text)?;
    print!("{text}");
    Ok(())
}

fn densities(pairs: &[(String, f64)]) -> HeuristicInput {
    pairs.iter().fold(HeuristicInput::default(), |h, (n, d)| h.with(n, *d))
}

fn cmd_estimate(program: &Path, schedule: &ScheduleArgs, density: &[(String, f64)], rates: &[String]) -> Result<(), CliError> {
    let (_, p) = read_program(program)?;
    let c = compile(&p, &schedule.options()?)?;
    let e = estimate(&c, &densities(density)).map_err(diag)?;
    for r in rates {
        // Accepted for compatibility; the model treats supports as independent.
        println!("# rate {r} ignored: supports are modeled as independent");
    }
    println!("{:<12} {:>14} {:>14} {:>14} {:>14} {:>10}", "expression", "flops", "bytes_read", "bytes_written", "iterations", "density");
    for x in &e.per_expression {
        println!("{:<12} {:>14.1} {:>14.1} {:>14.1} {:>14.1} {:>10.4}", x.output, x.flops, x.bytes_read, x.bytes_written, x.iterations, x.density);
    }
    println!("{:<12} {:>14.1} {:>14.1} {:>14.1} {:>14.1}", "total", e.flops, e.bytes_read, e.bytes_written, e.iterations);
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_sweep(program: &Path, schedule: &ScheduleArgs, cap: usize, simulate: bool, constrained: bool, kernel: Option<&str>, density: &[(String, f64)], seed: u64) -> Result<(), CliError> {
    let (_, p) = read_program(program)?;
    let opts = schedule.options()?;
    let mut heuristic = densities(density);
    let inputs;
    let cfg = SimConfig::default();
    let sim = if simulate {
        let gens: Vec<(&str, bench::InputGen)> = density.iter().map(|(n, d)| (n.as_str(), bench::InputGen::Uniform(*d))).collect();
        inputs = bench::generate_inputs(&sparsefuse::frontend::infer_intermediates(&p), &gens, seed).map_err(diag)?;
        heuristic = HeuristicInput::measured(&inputs);
        Some((&inputs, &cfg))
    } else {
        None
    };
    let req = SweepRequest { kernel, cap, constrained, simulate: sim };
    let res = sweep_orders(&p, &opts, &heuristic, &req)?;
    println!("kernel {}: {} legal order(s), showing {}", res.kernel, res.count, res.entries.len());
    println!("{:<4} {:<40} {:>12} {:>12} {:>12}", "rank", "order", "flops", "bytes", "cycles");
    for (i, e) in res.entries.iter().enumerate() {
        let order = e.order.join(",");
        if let Some(err) = &e.error {
            println!("{:<4} {:<40} error: {err}", i + 1, order);
            continue;
        }
        let (flops, bytes, cycles) = match (&e.measured, &e.estimate) {
            (Some(m), _) => (m.flops as f64, (m.bytes_read + m.bytes_written) as f64, m.cycles.to_string()),
            (None, Some(est)) => (est.flops, est.bytes(), "-".to_string()),
            _ => (0.0, 0.0, "-".to_string()),
        };
        println!("{:<4} {:<40} {:>12.0} {:>12.0} {:>12}", i + 1, order, flops, bytes, cycles);
    }
    let cycles: Vec<u64> = res.entries.iter().filter_map(|e| e.measured.as_ref().map(|m| m.cycles)).collect();
    if let (Some(lo), Some(hi)) = (cycles.iter().min(), cycles.iter().max()) {
        println!("max/min cycles: {:.2}", *hi as f64 / (*lo).max(1) as f64);
    }
    Ok(())
}

fn cmd_export(dir: &Path, dot: bool, table: bool) -> Result<(), CliError> {
    let (_, _, c) = load_compiled(dir)?;
    for (k, kernel) in c.kernels.iter().enumerate() {
        if table {
            let t = build_table(&kernel.region).map_err(diag)?;
            println!("# region {k}: {}", kernel.output);
            println!("{}", t.dump_text());
        } else if dot {
            print!("{}", kernel.graph.to_dot());
        } else {
            println!("{}", kernel.graph.to_json());
        }
    }
    Ok(())
}

fn cmd_selftest() -> Result<(), CliError> {
    let mut failures = 0;
    for b in bench::suite() {
        let p = b.program().map_err(|e| CliError::Internal(e.to_string()))?;
        let inputs: BTreeMap<String, SparseTensor> = b.generate(7).map_err(|e| CliError::Internal(e.to_string()))?;
        let oracle = evaluate_program(&sparsefuse::frontend::infer_intermediates(&p), &inputs).map_err(|e| CliError::Internal(e.to_string()))?;
        for g in Granularity::ALL {
            let opts = CompileOptions { granularity: Some(g), ..Default::default() };
            let ok = compile(&p, &opts).and_then(|c| execute(&c, &inputs, &SimConfig::default())).map(|r| {
                r.outputs.iter().all(|(name, t)| oracle.get(name).is_some_and(|o| bench::agrees(&t.to_dense(), &o.values(), 1e-9)))
            });
            let status = match ok {
                Ok(true) => "PASS".to_string(),
                Ok(false) => "FAIL mismatch".to_string(),
                Err(e) => format!("FAIL {e}"),
            };
            if !status.starts_with("PASS") {
                failures += 1;
            }
            println!("{status} {} {}", b.name, g.name());
        }
    }
    if failures > 0 {
        return Err(diag(format!("{failures} selftest case(s) failed")));
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Compile { program, schedule, out } => cmd_compile(&program, &schedule, &out),
        Command::Run { dir, bind, channel_depth, mem_latency } => {
            if channel_depth == 0 {
                return Err(diag("--channel-depth must be positive"));
            }
            let cfg = SimConfig { channel_depth, mem_latency, ..SimConfig::default() };
            cmd_run(&dir, &bind, &cfg)
        }
        Command::Estimate { program, schedule, density, rate } => cmd_estimate(&program, &schedule, &density, &rate),
        Command::Sweep { program, schedule, orders_cap, simulate, constrained, kernel, density, seed } => {
            cmd_sweep(&program, &schedule, orders_cap, simulate, constrained, kernel.as_deref(), &density, seed)
        }
        Command::Export { dir, dot, table } => cmd_export(&dir, dot, table),
        Command::Selftest => cmd_selftest(),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Diagnostic(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(CliError::Internal(m)) => {
            eprintln!("internal error: {m}");
            ExitCode::from(2)
        }
    }
}
