use super::ast::*;
use std::fmt::Write as _;

fn prec(e: &Expr) -> u8 {
    match e {
        Expr::Binary(BinOp::Add | BinOp::Sub, ..) => 1,
        Expr::Binary(BinOp::Mul | BinOp::Div, ..) => 2,
        _ => 3,
    }
}

pub fn print_access(a: &Access) -> String {
    format!("{}({})", a.tensor, a.indices.join(", "))
}

pub fn print_expr(e: &Expr) -> String {
    match e {
        Expr::Access(a) => print_access(a),
        Expr::Binary(op, a, b) => {
            let p = prec(e);
            let left = if prec(a) < p { format!("({})", print_expr(a)) } else { print_expr(a) };
            let right = if prec(b) <= p { format!("({})", print_expr(b)) } else { print_expr(b) };
            format!("{left} {} {right}", op.symbol())
        }
        Expr::Map(MapFn::Scale(c), a) => format!("scale({}, {c:?})", print_expr(a)),
        Expr::Map(f, a) => format!("{}({})", f.name(), print_expr(a)),
        Expr::Mask(m, a) => format!("mask({}, {})", print_access(m), print_expr(a)),
        Expr::Reduce(op, vars, a) => format!("{}[{}]({})", op.keyword(), vars.join(", "), print_expr(a)),
        Expr::MaxAll(a) => format!("max({})", print_expr(a)),
    }
}

pub fn print_einsum(e: &EinsumExpr) -> String {
    format!("{} = {};", print_access(&e.output), print_expr(&e.body))
}

pub fn print_directive(d: &Directive) -> String {
    match d {
        Directive::Order(v) => format!("order({});", v.join(", ")),
        Directive::Parallelize(v, f) => format!("parallelize({v}, {f});"),
        Directive::Block(b) => format!("block({});", b.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(", ")),
        Directive::Density(t, d) => format!("density({t}, {d:?});"),
        Directive::Rate(r) => format!("rate({}.{}, {}.{}, {:?});", r.a.0, r.a.1, r.b.0, r.b.1, r.rate),
        Directive::OrdersCap(n) => format!("orders_cap({n});"),
    }
}

fn mode_name(t: &TensorDecl, m: usize) -> String {
    let unique = |name: &str| t.dims.iter().filter(|d| matches!(d, Dim::Index(n) if n == name)).count() == 1;
    match &t.dims[m] {
        Dim::Index(n) if unique(n) => n.clone(),
        _ => m.to_string(),
    }
}

pub fn print_tensor_decl(t: &TensorDecl) -> String {
    let dims: Vec<String> = t
        .dims
        .iter()
        .map(|d| match d {
            Dim::Index(n) => n.clone(),
            Dim::Extent(n) => n.to_string(),
        })
        .collect();
    let mut s = format!("tensor {}({})", t.name, dims.join(", "));
    if !t.levels.is_empty() {
        let chain: Vec<String> = t.levels.iter().map(|l| format!("{}({})", l.kind.keyword(), mode_name(t, l.mode))).collect();
        let _ = write!(s, ": {}", chain.join(" -> "));
    }
    if let Some(o) = &t.order {
        let names: Vec<String> = o.iter().map(|&m| mode_name(t, m)).collect();
        let _ = write!(s, " order({})", names.join(", "));
    }
    if let Some(r) = t.role {
        let _ = write!(s, " {}", r.keyword());
    }
    s.push(';');
    s
}

/// Canonical form: indices, tensors, items in order, then top-level directives.
pub fn print_program(p: &EinsumProgram) -> String {
    let mut s = String::new();
    for i in &p.indices {
        let _ = writeln!(s, "index {} = {};", i.name, i.extent);
    }
    for t in &p.tensors {
        let _ = writeln!(s, "{}", print_tensor_decl(t));
    }
    for item in &p.items {
        match item {
            Item::Expr(e) => {
                let _ = writeln!(s, "{}", print_einsum(e));
            }
            Item::Fuse { exprs, directives, .. } => {
                s.push_str("fuse {\n");
                for e in exprs {
                    let _ = writeln!(s, "  {}", print_einsum(e));
                }
                for d in directives {
                    let _ = writeln!(s, "  {}", print_directive(d));
                }
                s.push_str("}\n");
            }
            Item::Reshape(r) => {
                let _ = writeln!(s, "reshape {} = {};", r.output, r.input);
            }
        }
    }
    for d in &p.directives {
        let _ = writeln!(s, "{}", print_directive(d));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frontend::parse_program;

    #[test]
    fn precedence_round_trip() {
        let src = "index i = 2;\ntensor A(i);\ntensor B(i);\ntensor C(i);\nT(i) = A(i) - (B(i) - C(i)) * (A(i) + B(i)) / C(i);\n";
        let p = parse_program(src).unwrap();
        let printed = print_program(&p);
        assert_eq!(printed, src);
        assert_eq!(parse_program(&printed).unwrap(), p);
    }

    #[test]
    fn decl_forms() {
        let src = "index i = 2;\nindex k = 3;\ntensor A(i, k): dense(i) -> compressed(k) order(k, i) input;\ntensor Z(3, 3): compressed(1) -> coordinate(0);\n";
        assert_eq!(print_program(&parse_program(src).unwrap()), src);
    }
}
