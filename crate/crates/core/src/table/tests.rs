use super::*;
use crate::testutil::fuse_src;

fn table(src: &str, out: &str, order: &[&str]) -> FusionTable {
    build_table(&fuse_src(src, out, Some(order)).unwrap()).unwrap()
}

fn cell(t: &FusionTable, row: &str, col: &str) -> Vec<String> {
    t.cells().get(&(row.to_string(), col.to_string())).cloned().unwrap_or_default()
}

const SPMM: &str = "index i = 4; index k = 4; index j = 3;\n\
    tensor A(i,k): dense(i)->compressed(k);\ntensor X(k,j): dense(k)->dense(j);\nT(i,j) = A(i,k) * X(k,j);\n";

#[test]
fn spmm_ikj_table() {
    let t = table(SPMM, "T", &["i", "k", "j"]);
    assert_eq!(t.row_names, ["i", "k", "j"]);
    assert_eq!(cell(&t, "i", "A"), ["LS_Ai"]);
    assert_eq!(cell(&t, "i", "X"), ["Rep_Xi"]);
    assert_eq!(cell(&t, "k", "A|X"), ["Intersect_k"]);
    assert_eq!(cell(&t, "j", "A"), ["Rep_Aj"]);
    assert_eq!(cell(&t, "j", "X"), ["LS_Xj"]);
    assert_eq!(cell(&t, "j", "T"), ["Red1_k", "Red1_k[crd0]"]);
    assert_eq!(cell(&t, "val", "A"), ["Val_A"]);
    assert_eq!(cell(&t, "val", "X"), ["Val_X"]);
    assert_eq!(cell(&t, "val", "T"), ["ALU_mul"]);
    let g = generate_graph(&t).unwrap();
    g.validate().unwrap();
    let counts = g.class_counts();
    assert_eq!(counts["LS"], 4);
    assert_eq!(counts["Rep"], 2);
    assert_eq!(counts["Intersect"], 1);
    assert_eq!(counts["Red1"], 1);
    assert_eq!(counts["Val"], 2);
    assert_eq!(counts["LW"], 2);
}

#[test]
fn spmm_innermost_reduction_is_plain() {
    let t = table(SPMM, "T", &["i", "j", "k"]);
    let g = generate_graph(&t).unwrap();
    g.validate().unwrap();
    assert_eq!(g.class_counts().get("Red1"), None);
    assert_eq!(g.class_counts()["Reduce"], 1);
}

#[test]
fn spmv_csc_golden_multiset() {
    let src = "index i = 2; index j = 3;\ntensor B(i,j): dense(j)->compressed(i);\ntensor c(j): dense(j);\nx(i) = B(i,j) * c(j);\n";
    let t = table(src, "x", &["j", "i"]);
    let g = generate_graph(&t).unwrap();
    g.validate().unwrap();
    let mut got: Vec<(String, usize)> = g.class_counts().into_iter().collect();
    got.sort();
    let want: Vec<(String, usize)> = [("ALU", 1), ("CD", 1), ("Intersect", 1), ("LS", 3), ("LW", 1), ("Red1", 1), ("Rep", 1), ("Root", 1), ("Val", 2), ("ValWriter", 1)]
        .iter()
        .map(|(k, v)| (k.to_string(), *v))
        .collect();
    assert_eq!(got, want);
}

#[test]
fn graphsage_neighbor_table() {
    let src = "index i = 4; index l = 4; index m = 3; index j = 2;\n\
        tensor A(i,l): dense(i)->compressed(l);\ntensor X(l,m): dense(l)->compressed(m);\ntensor W(m,j): dense(m)->compressed(j);\n\
        fuse {\n T0(i,m) = A(i,l) * X(l,m);\n T(i,j) = T0(i,m) * W(m,j);\n}\n";
    let t = table(src, "T", &["i", "l", "m", "j"]);
    assert_eq!(cell(&t, "l", "A|X"), ["Intersect_l"]);
    assert_eq!(cell(&t, "m", "T0|W"), ["Intersect_m", "Red1_l[crd0]"]);
    assert_eq!(cell(&t, "m", "T0"), ["Red1_l"]);
    assert_eq!(cell(&t, "j", "T"), ["Rep_T0j", "Red1_m", "Red1_m[crd0]"]);
    let g = generate_graph(&t).unwrap();
    g.validate().unwrap();
    let red1_l = g.find("Red1_l").unwrap();
    let inter_m = g.find("Intersect_m").unwrap();
    assert!(g.consumers_of(red1_l, 0).any(|c| c.to.node == inter_m));
    for n in &g.nodes {
        if let Primitive::Intersect { left, right } = n.kind {
            assert!(left + right <= 2, "{} spans {} operands", n.name, left + right);
        }
    }
    assert!(t.dump_text().contains("Intersect_m"));
}

#[test]
fn copy_has_no_joins_or_repeats() {
    let src = "index i = 3; index j = 3;\ntensor X(i,j): dense(i)->compressed(j);\nY(i,j) = X(i,j);\n";
    let t = table(src, "Y", &["i", "j"]);
    let counts = generate_graph(&t).unwrap().class_counts();
    assert!(!counts.contains_key("Intersect") && !counts.contains_key("Rep"));
    assert_eq!(counts["LS"], 2);
}

#[test]
fn outer_product_repeats_each_side() {
    let src = "index i = 3; index j = 2;\ntensor a(i): compressed(i);\ntensor b(j): compressed(j);\nT(i,j) = a(i) * b(j);\n";
    let t = table(src, "T", &["i", "j"]);
    assert_eq!(cell(&t, "i", "b"), ["Rep_bi"]);
    assert_eq!(cell(&t, "j", "a"), ["Rep_aj"]);
}

#[test]
fn addition_uses_unions() {
    let src = "index i = 3; index j = 3;\ntensor A(i,j): dense(i)->compressed(j);\ntensor B(i,j): dense(i)->compressed(j);\nC(i,j) = A(i,j) + B(i,j);\n";
    let t = table(src, "C", &["i", "j"]);
    assert_eq!(cell(&t, "i", "A|B"), ["Union_i"]);
    assert_eq!(cell(&t, "j", "A|B"), ["Union_j"]);
}

#[test]
fn rebuild_is_deterministic() {
    let a = table(SPMM, "T", &["i", "k", "j"]).to_json();
    let b = table(SPMM, "T", &["i", "k", "j"]).to_json();
    assert_eq!(a, b);
}

#[test]
fn dangling_handle_is_reported() {
    let mut t = table(SPMM, "T", &["i", "k", "j"]);
    t.top.clear();
    assert!(matches!(generate_graph(&t), Err(LoweringError::DanglingReference { .. })));
}
