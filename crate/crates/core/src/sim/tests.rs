use super::*;
use crate::tensor::{DenseTensor, LevelKind};
use crate::testutil::{random_inputs, run_vs_oracle};

const SPMV: &str = "index i = 2; index j = 3;\n\
    tensor A(i,j): dense(i)->compressed(j);\ntensor v(j): dense(j);\nx(i) = A(i,j) * v(j);\n";

fn assert_close(a: &DenseTensor, b: &DenseTensor) {
    assert_eq!(a.shape, b.shape);
    assert!(a.max_abs_diff(b) <= 1e-9, "sim {:?}\noracle {:?}", a.data, b.data);
}

#[test]
fn spmv_small() {
    let a = SparseTensor::from_dense("A", &DenseTensor::from_rows(&[&[1.0, 0.0, 2.0], &[0.0, 0.0, 0.0]]), &[LevelKind::Dense, LevelKind::Compressed], &[0, 1]).unwrap();
    let v = SparseTensor::from_dense("v", &DenseTensor::vector(&[3.0, 5.0, 4.0]), &[LevelKind::Dense], &[0]).unwrap();
    let inputs = BTreeMap::from([("A".to_string(), a), ("v".to_string(), v)]);
    let (sim, oracle, rep) = run_vs_oracle(SPMV, "x", Some(&["i", "j"]), &inputs, &SimConfig::default());
    assert_close(&sim, &oracle);
    assert_eq!(sim.data, [11.0, 0.0]);
    assert_eq!(rep.flops, 3);
    assert!(rep.cycles > 0);
}

#[test]
fn stream_checker_rejects_adjacent_errors() {
    let mut c = Checker::new(1);
    assert!(c.check(&Token::Stop(0)).is_ok());
    assert!(c.check(&Token::Crd(1)).is_err());
    let mut c = Checker::new(2);
    c.check(&Token::Crd(0)).unwrap();
    assert!(c.check(&Token::Stop(1)).is_err());
    let mut c = Checker::new(0);
    c.check(&Token::Val(Value::zero())).unwrap();
    c.check(&Token::Done).unwrap();
    assert!(c.check(&Token::Done).is_err());
}

fn check_program(src: &str, out: &str, orders: &[&[&str]]) {
    for seed in 0..4 {
        let inputs = random_inputs(src, 0.4, seed);
        for order in orders {
            for depth in [1, 4] {
                let cfg = SimConfig { channel_depth: depth, ..SimConfig::default() };
                let (sim, oracle, _) = run_vs_oracle(src, out, Some(order), &inputs, &cfg);
                assert_close(&sim, &oracle);
            }
        }
    }
}

#[test]
fn spmv_orders() {
    let src = "index i = 5; index j = 6;\ntensor A(i,j): dense(i)->compressed(j);\ntensor v(j): compressed(j);\nx(i) = A(i,j) * v(j);\n";
    check_program(src, "x", &[&["i", "j"]]);
    let csc = "index i = 5; index j = 6;\ntensor A(i,j): dense(j)->compressed(i);\ntensor v(j): compressed(j);\nx(i) = A(i,j) * v(j);\n";
    check_program(csc, "x", &[&["j", "i"]]);
}

#[test]
fn spmm_orders() {
    let src = "index i = 4; index k = 5; index j = 3;\n\
        tensor A(i,k): dense(i)->compressed(k);\ntensor X(k,j): dense(k)->compressed(j);\nT(i,j) = A(i,k) * X(k,j);\n";
    check_program(src, "T", &[&["i", "k", "j"]]);
    let inner = src.replace("dense(k)->compressed(j)", "dense(j)->compressed(k)");
    check_program(&inner, "T", &[&["i", "j", "k"]]);
}

#[test]
fn add_and_outer() {
    let add = "index i = 4; index j = 5;\ntensor A(i,j): dense(i)->compressed(j);\ntensor B(i,j): dense(i)->compressed(j);\nC(i,j) = A(i,j) + B(i,j);\n";
    check_program(add, "C", &[&["i", "j"]]);
    let outer = "index i = 4; index j = 5;\ntensor a(i): compressed(i);\ntensor b(j): compressed(j);\nC(i,j) = a(i) * b(j);\n";
    check_program(outer, "C", &[&["i", "j"], &["j", "i"]]);
}

#[test]
fn gcn_fused() {
    let src = "index i = 5; index l = 5; index m = 4; index j = 3;\n\
        tensor A(i,l): dense(i)->compressed(l);\ntensor X(l,m): dense(l)->compressed(m);\ntensor W(m,j): dense(m)->dense(j);\n\
        T(i,m) = A(i,l) * X(l,m);\nY(i,j) = T(i,m) * W(m,j);\n";
    check_program(src, "Y", &[&["i", "l", "m", "j"]]);
}

pub(crate) const ATTENTION: &str = "index i = 6; index j = 6; index k = 3; index d = 2;\n\
    tensor Q(i,k): dense(i)->dense(k);\ntensor K(j,k): dense(j)->dense(k);\ntensor V(j,d): dense(j)->dense(d);\n\
    tensor M(i,j): dense(i)->compressed(j);\n\
    S(i,j) = mask(M(i,j), scale(Q(i,k) * K(j,k), 0.5));\n\
    Mx(i) = max(S(i,j));\n\
    E(i,j) = mask(M(i,j), exp(S(i,j) - Mx(i)));\n\
    Z(i) = E(i,j);\n\
    P(i,j) = E(i,j) / Z(i);\n\
    O(i,d) = P(i,j) * V(j,d);\n";

#[test]
fn attention_fused() {
    let region = crate::testutil::fuse_src(ATTENTION, "O", None).unwrap();
    let order: Vec<&str> = region.order().iter().map(|s| s.as_str()).collect();
    eprintln!("attention order {order:?}");
    check_program(ATTENTION, "O", &[&order]);
}

#[test]
fn graphsage_and_nested() {
    let sage = "index i = 5; index l = 5; index m = 4; index j = 3;\n\
        tensor A(i,l): dense(i)->compressed(l);\ntensor X(l,m): dense(l)->compressed(m);\ntensor W(m,j): dense(m)->dense(j);\n\
        T(i,j) = A(i,l) * X(l,m) * W(m,j);\n";
    check_program(sage, "T", &[&["i", "l", "m", "j"]]);
    let nested = "index i = 4; index k = 5; index j = 4; index l = 3;\n\
        tensor A(i,k): dense(i)->compressed(k);\ntensor B(k,j): dense(k)->compressed(j);\ntensor C(j,l): dense(j)->compressed(l);\n\
        D(i,l) = A(i,k) * B(k,j) * C(j,l);\n";
    check_program(nested, "D", &[&["i", "k", "j", "l"]]);
}

#[test]
fn parallel_spmm_matches() {
    let src = "index i = 6; index k = 5; index j = 3;\n\
        tensor A(i,k): dense(i)->compressed(k);\ntensor X(k,j): dense(k)->compressed(j);\nT(i,j) = A(i,k) * X(k,j);\n";
    let inputs = random_inputs(src, 0.5, 7);
    let cfg = SimConfig::default();
    let (_, oracle, base) = run_vs_oracle(src, "T", Some(&["i", "k", "j"]), &inputs, &cfg);
    let (g, rep) = crate::testutil::run_parallel(src, "T", Some(&["i", "k", "j"]), &[("i", 2)], &inputs, &cfg);
    let counts = g.class_counts();
    assert_eq!(counts["Par"], 2);
    assert_eq!(counts["Ser"], 1);
    assert_close(&rep.outputs["T"].to_dense(), &oracle);
    assert_eq!(rep.flops, base.flops);
    let (_, rep) = crate::testutil::run_parallel(src, "T", Some(&["i", "k", "j"]), &[("i", 2), ("j", 3)], &inputs, &cfg);
    assert_close(&rep.outputs["T"].to_dense(), &oracle);
}

#[test]
fn parallel_attention_speeds_up() {
    let inputs = random_inputs(ATTENTION, 0.6, 3);
    let cfg = SimConfig::default();
    let (_, oracle, base) = run_vs_oracle(ATTENTION, "O", None, &inputs, &cfg);
    let (_, p4) = crate::testutil::run_parallel(ATTENTION, "O", None, &[("i", 4)], &inputs, &cfg);
    assert_close(&p4.outputs["O"].to_dense(), &oracle);
    let (_, p8) = crate::testutil::run_parallel(ATTENTION, "O", None, &[("i", 4), ("d", 2)], &inputs, &cfg);
    assert_close(&p8.outputs["O"].to_dense(), &oracle);
    eprintln!("cycles base {} i4 {} i4d2 {}", base.cycles, p4.cycles, p8.cycles);
}
