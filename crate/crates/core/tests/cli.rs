use std::path::PathBuf;
use std::process::{Command, Output};

fn sparsefuse(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sparsefuse")).args(args).output().expect("binary runs")
}

fn programs() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../programs")
}

fn path(p: PathBuf) -> String {
    p.to_string_lossy().into_owned()
}

#[test]
fn spmv_compile_run_export() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("spmv");
    let r = sparsefuse(&["compile", &path(programs().join("spmv.ein")), "-o", &path(out.clone())]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    let hash = std::fs::read_to_string(out.join("current")).unwrap();
    let graphs: Vec<_> = std::fs::read_dir(out.join(hash.trim())).unwrap().filter_map(|e| e.ok()).filter(|e| e.file_name().to_string_lossy().ends_with(".graph")).collect();
    assert_eq!(graphs.len(), 1);

    let b = format!("B={}", path(programs().join("B.coo")));
    let c = format!("c={}", path(programs().join("c.coo")));
    let r = sparsefuse(&["run", &path(out.clone()), "--bind", &b, "--bind", &c]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    let report = String::from_utf8_lossy(&r.stdout);
    assert!(report.contains("\nflops: 4\n"), "{report}");
    let x = std::fs::read_to_string(out.join(hash.trim()).join("outputs/x.coo")).unwrap();
    assert_eq!(x, "2\n0 11.0\n1 8.0\n");

    let dot = sparsefuse(&["export", &path(out.clone()), "--dot"]);
    assert!(String::from_utf8_lossy(&dot.stdout).starts_with("digraph"));
    let table = sparsefuse(&["export", &path(out), "--table"]);
    assert!(String::from_utf8_lossy(&table.stdout).contains("LS_Bj"));
}

#[test]
fn exit_codes() {
    assert_eq!(sparsefuse(&["frobnicate"]).status.code(), Some(1));
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.ein");
    std::fs::write(&bad, "index i = 3;\ntensor A(i,j): dense(i)->dense(j);\nx(i) = A(i,j);\n").unwrap();
    let r = sparsefuse(&["compile", &path(bad), "-o", &path(dir.path().join("out"))]);
    assert_eq!(r.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&r.stderr).contains("unknown index variable `j`"));
    let r = sparsefuse(&["run", &path(dir.path().join("missing"))]);
    assert_eq!(r.status.code(), Some(1));
}

#[test]
fn estimate_and_sweep_tables() {
    let r = sparsefuse(&["estimate", &path(programs().join("spmv.ein")), "--density", "B=0.5"]);
    assert!(r.status.success());
    assert!(String::from_utf8_lossy(&r.stdout).lines().any(|l| l.starts_with("total")));
    let r = sparsefuse(&["sweep", &path(programs().join("nested_matmul.ein")), "--orders-cap", "24", "--simulate", "--density", "A=0.15"]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    let text = String::from_utf8_lossy(&r.stdout);
    let ratio: f64 = text.lines().find_map(|l| l.strip_prefix("max/min cycles: ")).unwrap().parse().unwrap();
    assert!(ratio >= 2.0, "{text}");
}
