use sparsefuse::bench::{agrees, suite};
use sparsefuse::oracle::evaluate_program;
use sparsefuse::pipeline::{compile, execute, CompileOptions, Granularity};
use sparsefuse::sim::SimConfig;

#[test]
fn suite_matches_oracle_at_every_granularity() {
    for b in suite() {
        let p = b.program().unwrap();
        let inputs = b.generate(1).unwrap();
        let oracle = evaluate_program(&sparsefuse::frontend::infer_intermediates(&p), &inputs).unwrap();
        for g in Granularity::ALL {
            let opts = CompileOptions { granularity: Some(g), ..Default::default() };
            let c = compile(&p, &opts).unwrap_or_else(|e| panic!("{} {}: {e}", b.name, g.name()));
            let rep = execute(&c, &inputs, &SimConfig::default()).unwrap_or_else(|e| panic!("{} {}: {e}", b.name, g.name()));
            for (name, t) in &rep.outputs {
                assert!(agrees(&t.to_dense(), &oracle[name].values(), 1e-9), "{} {} {name}", b.name, g.name());
            }
            eprintln!("{:14} {:8} kernels {:2} cycles {:7} flops {:7} read {:7} written {:6}", b.name, g.name(), c.kernels.len(), rep.cycles, rep.flops, rep.bytes_read, rep.bytes_written);
        }
    }
}

fn attention_run(block: Option<usize>, par: Option<Vec<(String, u32)>>) -> (sparsefuse::pipeline::ExecutionReport, sparsefuse::tensor::DenseTensor) {
    let b = sparsefuse::bench::find("attention").unwrap();
    let p = b.program().unwrap();
    let inputs = b.generate(3).unwrap();
    let opts = CompileOptions { block: block.map(|f| vec![f, f]), parallelize: par, ..Default::default() };
    let c = compile(&p, &opts).unwrap();
    let rep = execute(&c, &inputs, &SimConfig::default()).unwrap_or_else(|e| panic!("{e:?}"));
    let o = rep.outputs["O"].to_dense();
    (rep, o)
}

#[test]
fn blocked_and_parallel_attention() {
    let (base, o) = attention_run(None, None);
    for f in [2, 4] {
        let (r, ob) = attention_run(Some(f), None);
        assert!(agrees(&ob, &o, 1e-9), "block {f}");
        eprintln!("block {f}: cycles {} flops {}", r.cycles, r.flops);
    }
    for splits in [vec![("i".to_string(), 4)], vec![("i".to_string(), 4), ("d".to_string(), 2)], vec![("i".to_string(), 4), ("d".to_string(), 4)]] {
        let (r, op) = attention_run(None, Some(splits.clone()));
        assert!(agrees(&op, &o, 1e-9));
        eprintln!("{splits:?}: cycles {} vs {}", r.cycles, base.cycles);
    }
}
