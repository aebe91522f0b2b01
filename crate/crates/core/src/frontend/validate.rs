use super::ast::*;
use crate::tensor::LevelKind;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Severity {
    Error,
    Warning,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum DiagKind {
    ExtentMismatch,
    ArityMismatch,
    IllegalFormat,
    InvalidSchedule,
    UnboundOutputVar,
    RepeatedIndex,
    UseBeforeDef,
    FusionBarrier,
    IncompatibleBlocks,
    UnknownIndexVar,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub severity: Severity,
    pub kind: DiagKind,
    pub message: String,
    pub span: Span,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sev = match self.severity {
            Severity::Error => "error",
            Severity::Warning => "warning",
        };
        write!(f, "{sev}[{:?}] at {}: {}", self.kind, self.span, self.message)
    }
}

fn error(kind: DiagKind, span: Span, message: String) -> Diagnostic {
    Diagnostic { severity: Severity::Error, kind, message, span }
}

/// Extent of every index var: declared extents first, then extents implied by
/// declared tensor shapes at the positions the var is used.
pub fn var_extents(p: &EinsumProgram) -> BTreeMap<String, usize> {
    let mut out: BTreeMap<String, usize> = p.indices.iter().map(|i| (i.name.clone(), i.extent)).collect();
    let mut visit = |a: &Access| {
        if let Some(shape) = p.shape_of(&a.tensor) {
            for (v, n) in a.indices.iter().zip(shape) {
                out.entry(v.clone()).or_insert(n);
            }
        }
    };
    for e in p.expressions() {
        e.body.visit_accesses(&mut visit);
        visit(&e.output);
    }
    out
}

/// Checks extents, formats and schedule references. Never mutates the program.
pub fn validate(p: &EinsumProgram) -> Vec<Diagnostic> {
    let mut diags = Vec::new();
    let extents = var_extents(p);
    for t in &p.tensors {
        if let Some(first) = t.storage().1.first() {
            if *first == LevelKind::Coordinate {
                diags.push(error(DiagKind::IllegalFormat, t.span, format!("`{}`: a coordinate level cannot be outermost", t.name)));
            }
        }
        for d in &t.dims {
            match d {
                Dim::Extent(0) => diags.push(error(DiagKind::IllegalFormat, t.span, format!("`{}` has a zero extent", t.name))),
                Dim::Index(n) if p.index_extent(n).is_none() => {
                    diags.push(error(DiagKind::UnknownIndexVar, t.span, format!("`{}` uses undeclared index `{n}`", t.name)))
                }
                _ => {}
            }
        }
    }
    let check_access = |a: &Access, diags: &mut Vec<Diagnostic>| {
        let mut seen = BTreeSet::new();
        for v in &a.indices {
            if !seen.insert(v) {
                diags.push(error(DiagKind::RepeatedIndex, a.span, format!("`{}` repeats index `{v}`", a.tensor)));
            }
        }
        if let Some(shape) = p.shape_of(&a.tensor) {
            if shape.len() != a.indices.len() {
                diags.push(error(
                    DiagKind::ArityMismatch,
                    a.span,
                    format!("`{}` has {} modes but is accessed with {}", a.tensor, shape.len(), a.indices.len()),
                ));
                return;
            }
            for (v, n) in a.indices.iter().zip(shape) {
                if let Some(&e) = extents.get(v) {
                    if e != n {
                        diags.push(error(
                            DiagKind::ExtentMismatch,
                            a.span,
                            format!("index `{v}` has extent {e} but `{}` has extent {n} there", a.tensor),
                        ));
                    }
                }
            }
        }
    };
    let mut written: BTreeSet<String> = BTreeSet::new();
    let all_written = p.written();
    let mut reshape_outputs = BTreeMap::new();
    for r in p.reshapes() {
        reshape_outputs.insert(r.output.clone(), r.input.clone());
    }
    for item in &p.items {
        let (exprs, directives): (Vec<&EinsumExpr>, &[Directive]) = match item {
            Item::Expr(e) => (vec![e], &[]),
            Item::Fuse { exprs, directives, .. } => (exprs.iter().collect(), directives),
            Item::Reshape(r) => {
                if !all_written.contains(&r.input) || written.contains(&r.input) || p.tensor(&r.input).is_some() {
                    written.insert(r.output.clone());
                } else {
                    diags.push(error(DiagKind::UseBeforeDef, r.span, format!("`{}` read before it is written", r.input)));
                }
                if let (Some(a), Some(b)) = (p.shape_of(&r.input), p.shape_of(&r.output)) {
                    if a.iter().product::<usize>() != b.iter().product::<usize>() {
                        diags.push(error(DiagKind::ExtentMismatch, r.span, "reshape changes the element count".into()));
                    }
                }
                continue;
            }
        };
        let region_writes: BTreeSet<&str> = exprs.iter().map(|e| e.name()).collect();
        for e in &exprs {
            e.body.visit_accesses(&mut |a| {
                check_access(a, &mut diags);
                if all_written.contains(&a.tensor) && !written.contains(&a.tensor) && !region_writes.contains(a.tensor.as_str()) {
                    diags.push(error(DiagKind::UseBeforeDef, a.span, format!("`{}` read before it is written", a.tensor)));
                }
                if let Some(src) = reshape_outputs.get(&a.tensor) {
                    if exprs.len() > 1 && region_writes.contains(src.as_str()) {
                        diags.push(error(DiagKind::FusionBarrier, a.span, format!("fuse region spans reshape of `{src}`")));
                    }
                }
            });
            check_access(&e.output, &mut diags);
            let free: BTreeSet<String> = e.body.free_vars().into_iter().collect();
            for v in &e.output.indices {
                if !free.contains(v) {
                    diags.push(error(DiagKind::UnboundOutputVar, e.output.span, format!("output index `{v}` does not appear in the body")));
                }
            }
            written.insert(e.name().to_string());
        }
        let region_vars: BTreeSet<String> = exprs.iter().flat_map(|e| e.normalized_body().free_vars().into_iter().chain(e.reduction_vars())).collect();
        for d in directives {
            check_directive(p, d, &extents, Some(&region_vars), item_span(item), &mut diags);
        }
    }
    for d in &p.directives {
        check_directive(p, d, &extents, None, Span::default(), &mut diags);
    }
    diags
}

fn item_span(item: &Item) -> Span {
    match item {
        Item::Expr(e) => e.span,
        Item::Fuse { span, .. } => *span,
        Item::Reshape(r) => r.span,
    }
}

fn check_directive(
    p: &EinsumProgram,
    d: &Directive,
    extents: &BTreeMap<String, usize>,
    region_vars: Option<&BTreeSet<String>>,
    span: Span,
    diags: &mut Vec<Diagnostic>,
) {
    let bad = |msg: String| error(DiagKind::InvalidSchedule, span, msg);
    match d {
        Directive::Order(vars) => {
            let mut seen = BTreeSet::new();
            for v in vars {
                let known = extents.contains_key(v) || v.starts_with('u') && v[1..].parse::<usize>().is_ok();
                if !known || !seen.insert(v) {
                    diags.push(bad(format!("order names unknown or repeated index `{v}`")));
                }
            }
            if let Some(rv) = region_vars {
                for v in vars {
                    if extents.contains_key(v) && !rv.contains(v) {
                        diags.push(bad(format!("order names `{v}`, which this region does not use")));
                    }
                }
            }
        }
        Directive::Parallelize(v, f) => {
            if *f == 0 {
                diags.push(bad(format!("parallelize factor for `{v}` must be at least 1")));
            }
            if !extents.contains_key(v) {
                diags.push(bad(format!("parallelize names unknown index `{v}`")));
            }
        }
        Directive::Block(b) => {
            if b.contains(&0) {
                diags.push(bad("block extents must be positive".into()));
            } else if b.windows(2).any(|w| w[0] != w[1]) {
                diags.push(error(DiagKind::IncompatibleBlocks, span, format!("block extents {b:?} differ across modes")));
            } else if let Some(&bx) = b.first() {
                for (v, n) in extents {
                    if n % bx != 0 {
                        diags.push(error(DiagKind::IncompatibleBlocks, span, format!("extent {n} of `{v}` is not divisible by block {bx}")));
                    }
                }
            }
        }
        Directive::Density(t, x) => {
            if p.tensor(t).is_none() && !p.written().contains(t) {
                diags.push(bad(format!("density names unknown tensor `{t}`")));
            }
            if !(*x > 0.0 && *x <= 1.0) {
                diags.push(bad(format!("density {x} of `{t}` is outside (0, 1]")));
            }
        }
        Directive::Rate(r) => {
            if !(r.rate > 0.0 && r.rate <= 1.0) {
                diags.push(bad(format!("rate {} is outside (0, 1]", r.rate)));
            }
        }
        Directive::OrdersCap(n) => {
            if *n == 0 {
                diags.push(bad("orders_cap must be at least 1".into()));
            }
        }
    }
}

/// Marks tensors written then read as intermediates and declares undeclared
/// written tensors with compressed levels in output index order.
pub fn infer_intermediates(p: &EinsumProgram) -> EinsumProgram {
    let mut out = p.clone();
    let read = p.read();
    let extents = var_extents(p);
    for e in p.expressions() {
        let name = e.name();
        let role = if read.contains(name) { Role::Intermediate } else { Role::Output };
        match out.tensors.iter_mut().find(|t| t.name == name) {
            Some(t) => {
                if t.role.is_none() || t.role == Some(Role::Input) {
                    t.role = Some(role);
                }
            }
            None => {
                let dims = e
                    .output
                    .indices
                    .iter()
                    .map(|v| match p.index_extent(v) {
                        Some(_) => Dim::Index(v.clone()),
                        None => Dim::Extent(extents.get(v).copied().unwrap_or(1)),
                    })
                    .collect();
                out.tensors.push(TensorDecl { name: name.to_string(), dims, levels: vec![], order: None, role: Some(role), span: e.span });
            }
        }
    }
    for t in out.tensors.iter_mut() {
        if t.role.is_none() {
            t.role = Some(Role::Input);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frontend::parse_program;

    const SPMM: &str = "index i = 2; index k = 3; index j = 2;\n\
        tensor A(i,k): dense(i)->compressed(k);\ntensor X(k,j): dense(k)->dense(j);\nT(i,j) = A(i,k) * X(k,j);\n";

    #[test]
    fn clean_program_has_no_diagnostics() {
        let p = parse_program(SPMM).unwrap();
        assert_eq!(validate(&p), vec![]);
        assert_eq!(validate(&p), validate(&p));
    }

    #[test]
    fn extent_mismatch() {
        let src = "index i = 2; index k = 4;\ntensor A(2,3);\ntensor B(k);\nT(i) = A(i,k) * B(k);\n";
        let d = validate(&parse_program(src).unwrap());
        assert!(d.iter().any(|d| d.kind == DiagKind::ExtentMismatch), "{d:?}");
    }

    #[test]
    fn bad_schedules() {
        let src = format!("{SPMM}parallelize(i, 0);\n");
        let d = validate(&parse_program(&src).unwrap());
        assert_eq!(d.len(), 1);
        assert_eq!(d[0].kind, DiagKind::InvalidSchedule);
        let src = format!("{SPMM}block(2, 4);\n");
        assert!(validate(&parse_program(&src).unwrap()).iter().any(|d| d.kind == DiagKind::IncompatibleBlocks));
    }

    #[test]
    fn repeated_index_rejected() {
        let src = "index i = 2;\ntensor A(i,i);\nT(i) = A(i,i);\n";
        assert!(validate(&parse_program(src).unwrap()).iter().any(|d| d.kind == DiagKind::RepeatedIndex));
    }

    #[test]
    fn intermediates() {
        let single = infer_intermediates(&parse_program(SPMM).unwrap());
        assert!(single.tensors.iter().all(|t| t.role != Some(Role::Intermediate)));
        let chain = "index i = 2;\ntensor A(i);\nB(i) = relu(A(i));\nC(i) = exp(B(i));\nD(i) = C(i) * B(i);\n";
        let p = infer_intermediates(&parse_program(chain).unwrap());
        let inter: Vec<&str> = p.tensors.iter().filter(|t| t.role == Some(Role::Intermediate)).map(|t| t.name.as_str()).collect();
        assert_eq!(inter, vec!["B", "C"]);
        assert_eq!(p.tensor("D").unwrap().role, Some(Role::Output));
        assert_eq!(p.expressions().iter().map(|e| e.name()).collect::<Vec<_>>(), vec!["B", "C", "D"]);
    }
}
