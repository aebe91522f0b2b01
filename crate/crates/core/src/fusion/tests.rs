use super::*;
use crate::frontend::parse_program;
use crate::testutil::fuse_src;

const GCN: &str = "index i = 4; index l = 4; index m = 3; index j = 2;\n\
    tensor A(i,l): dense(i)->compressed(l);\ntensor X(l,m): dense(l)->dense(m);\ntensor W(m,j): dense(m)->dense(j);\n\
    T0(i,m) = A(i,l) * X(l,m);\nT1(i,j) = T0(i,m) * W(m,j);\n";

#[test]
fn reductions_renamed_in_program_order() {
    let r = fuse_src(GCN, "T1", None).unwrap();
    assert_eq!(r.origin.get("u0").map(String::as_str), Some("l"));
    assert_eq!(r.origin.get("u1").map(String::as_str), Some("m"));
    let text = r.render();
    assert!(text.contains("sum[u1](sum[u0](A(i, u0) * X(u0, u1)) * W(u1, j))"), "{text}");
    let again = parse_program(&text).unwrap();
    assert_eq!(again.expressions().len(), 1);
}

#[test]
fn spmm_orders_and_legality() {
    let src = "index i = 3; index k = 3; index j = 2;\ntensor A(i,k): dense(i)->compressed(k);\ntensor X(k,j): dense(k)->compressed(j);\nT(i,j) = A(i,k) * X(k,j);\n";
    let r = fuse_src(src, "T", None).unwrap();
    let (orders, count) = enumerate_orders(&r.pog, 100).unwrap();
    assert_eq!(count, OrderCount::Exact(1));
    assert_eq!(orders[0], ["i", "u0", "j"]);
    let err = fuse_src(src, "T", Some(&["j", "i", "k"])).unwrap_err();
    assert!(matches!(err, FusionError::InvalidScheduledOrder { edge: Some(_), .. }), "{err}");
}

#[test]
fn sums_sink_below_products() {
    let src = "index i = 3; index l = 3; index m = 3;\ntensor A(i,l);\ntensor B(i,m);\nT(i) = A(i,l) * B(i,m);\n";
    let r = fuse_src(src, "T", None).unwrap();
    let body = print_expr_of(&r);
    assert_eq!(body, "sum[u0](A(i, u0)) * sum[u1](B(i, u1))");
}

fn print_expr_of(r: &FusedRegion) -> String {
    crate::frontend::print_expr(&r.render_node(r.tree.root))
}

#[test]
fn transposed_self_add_takes_a_permuted_copy() {
    let src = "index i = 3; index j = 3;\ntensor A(i,j): dense(i)->compressed(j);\nX(i,j) = A(i,j) + A(j,i);\n";
    let r = fuse_src(src, "X", None).unwrap();
    assert_eq!(r.permuted_copies.len(), 1);
    assert_eq!(r.permuted_copies[0].mode_order, vec![1, 0]);
    assert!(r.pog.is_acyclic());
    assert_eq!(r.views.iter().filter(|v| v.base == "A").count(), 1);
}

#[test]
fn gcn_fully_fused_keeps_intersections_binary() {
    let src = "index i = 4; index l = 4; index m = 3; index j = 2;\n\
        tensor A(i,l): dense(i)->compressed(l);\ntensor X(l,m): dense(l)->dense(m);\ntensor W(m,j): dense(m)->dense(j);\n\
        fuse {\n T0(i,m) = A(i,l) * X(l,m);\n T1(i,j) = T0(i,m) * W(m,j);\n}\n";
    let r = fuse_src(src, "T1", None).unwrap();
    let (orders, _) = enumerate_orders(&r.pog, 1000).unwrap();
    assert!(!orders.is_empty());
    for o in &orders {
        assert!(r.pog.is_linear_extension(o));
    }
    let resolved = resolve_order(&r, &["i".into(), "l".into(), "m".into(), "j".into()]).unwrap();
    assert_eq!(resolved, ["i", "u0", "u1", "j"]);
}

#[test]
fn second_use_gets_fresh_vars() {
    let src = "index i = 3; index k = 3;\ntensor A(i,k);\ntensor x(k);\nfuse {\n y(i) = A(i,k) * x(k);\n z(i) = y(i) + y(i);\n}\n";
    let r = fuse_src(src, "z", None).unwrap();
    let text = print_expr_of(&r);
    assert!(text.contains("u0") && text.contains("u1"), "{text}");
    assert_eq!(r.tree.nodes.iter().filter(|n| n.label.as_deref() == Some("y")).count(), 2);
}
