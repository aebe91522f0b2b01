//! Brute-force reference evaluator. Every coordinate of the iteration space is
//! visited; a support bit per element records whether a sparse evaluation would
//! produce it, so pointwise maps with f(0) != 0 stay comparable to stream results.

use crate::frontend::{BinOp, EinsumExpr, EinsumProgram, Expr, ReduceOp};
use crate::tensor::{for_each_coord, DenseTensor, SparseTensor};
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum OracleError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("no binding for tensor `{0}`")]
    Unbound(String),
}

/// A dense tensor plus the set of stored positions.
#[derive(Clone, Debug, PartialEq)]
pub struct Operand {
    pub dense: DenseTensor,
    pub support: Vec<bool>,
}

impl Operand {
    pub fn from_sparse(t: &SparseTensor) -> Self {
        let dense = t.to_dense();
        let mut support = vec![false; dense.data.len()];
        for (c, _) in t.entries() {
            let c: Vec<usize> = c.iter().map(|&x| x as usize).collect();
            support[dense.offset(&c)] = true;
        }
        Operand { dense, support }
    }

    /// Support is the set of nonzeros.
    pub fn from_dense(d: &DenseTensor) -> Self {
        Operand { support: d.data.iter().map(|&v| v != 0.0).collect(), dense: d.clone() }
    }

    /// Values with unsupported positions zeroed.
    pub fn values(&self) -> DenseTensor {
        let mut d = self.dense.clone();
        for (v, s) in d.data.iter_mut().zip(&self.support) {
            if !*s {
                *v = 0.0;
            }
        }
        d
    }
}

struct Field {
    vars: Vec<String>,
    shape: Vec<usize>,
    val: Vec<f64>,
    sup: Vec<bool>,
}

impl Field {
    fn offset_of(&self, assign: &BTreeMap<&str, usize>) -> usize {
        self.vars.iter().zip(&self.shape).fold(0, |acc, (v, n)| acc * n + assign[v.as_str()])
    }
}

fn extent(extents: &BTreeMap<String, usize>, v: &str) -> Result<usize, OracleError> {
    extents.get(v).copied().ok_or_else(|| OracleError::ShapeMismatch(format!("no extent for index `{v}`")))
}

fn eval(e: &Expr, env: &BTreeMap<String, Operand>, extents: &BTreeMap<String, usize>) -> Result<Field, OracleError> {
    match e {
        Expr::Access(a) => {
            let op = env.get(&a.tensor).ok_or_else(|| OracleError::Unbound(a.tensor.clone()))?;
            if op.dense.shape.len() != a.indices.len() {
                return Err(OracleError::ShapeMismatch(format!("`{}` accessed with {} indices", a.tensor, a.indices.len())));
            }
            for (v, n) in a.indices.iter().zip(&op.dense.shape) {
                if extent(extents, v)? != *n {
                    return Err(OracleError::ShapeMismatch(format!("index `{v}` disagrees with `{}`", a.tensor)));
                }
            }
            Ok(Field { vars: a.indices.clone(), shape: op.dense.shape.clone(), val: op.dense.data.clone(), sup: op.support.clone() })
        }
        Expr::Binary(op, a, b) => {
            let fa = eval(a, env, extents)?;
            let fb = eval(b, env, extents)?;
            let mut vars = fa.vars.clone();
            vars.extend(fb.vars.iter().filter(|v| !fa.vars.contains(v)).cloned());
            let broadcast = vars.len() != fa.vars.len() || vars.len() != fb.vars.len();
            let union = matches!(op, BinOp::Add | BinOp::Sub) && !broadcast;
            let shape: Vec<usize> = vars.iter().map(|v| extent(extents, v)).collect::<Result<_, _>>()?;
            let mut out = Field { vars: vars.clone(), shape: shape.clone(), val: Vec::new(), sup: Vec::new() };
            for_each_coord(&shape, |c| {
                let assign: BTreeMap<&str, usize> = vars.iter().map(|v| v.as_str()).zip(c.iter().copied()).collect();
                let (ia, ib) = (fa.offset_of(&assign), fb.offset_of(&assign));
                let (sa, sb) = (fa.sup[ia], fb.sup[ib]);
                let (va, vb) = (if sa { fa.val[ia] } else { 0.0 }, if sb { fb.val[ib] } else { 0.0 });
                let s = if union { sa || sb } else { sa && sb };
                let v = match op {
                    BinOp::Add => va + vb,
                    BinOp::Sub => va - vb,
                    BinOp::Mul => va * vb,
                    BinOp::Div => va / vb,
                };
                out.sup.push(s);
                out.val.push(if s { v } else { 0.0 });
            });
            Ok(out)
        }
        Expr::Map(f, a) => {
            let mut fa = eval(a, env, extents)?;
            for (v, s) in fa.val.iter_mut().zip(&fa.sup) {
                *v = if *s { f.apply(*v) } else { 0.0 };
            }
            Ok(fa)
        }
        Expr::Mask(m, a) => {
            let fm = eval(&Expr::Access(m.clone()), env, extents)?;
            let fa = eval(a, env, extents)?;
            let mut vars = fa.vars.clone();
            vars.extend(fm.vars.iter().filter(|v| !fa.vars.contains(v)).cloned());
            let shape: Vec<usize> = vars.iter().map(|v| extent(extents, v)).collect::<Result<_, _>>()?;
            let mut out = Field { vars: vars.clone(), shape: shape.clone(), val: Vec::new(), sup: Vec::new() };
            for_each_coord(&shape, |c| {
                let assign: BTreeMap<&str, usize> = vars.iter().map(|v| v.as_str()).zip(c.iter().copied()).collect();
                let (im, ia) = (fm.offset_of(&assign), fa.offset_of(&assign));
                let s = fm.sup[im] && fa.sup[ia];
                out.sup.push(s);
                out.val.push(if s { fa.val[ia] } else { 0.0 });
            });
            Ok(out)
        }
        Expr::Reduce(op, rvars, a) => {
            let fa = eval(a, env, extents)?;
            let keep: Vec<String> = fa.vars.iter().filter(|v| !rvars.contains(v)).cloned().collect();
            let shape: Vec<usize> = keep.iter().map(|v| extent(extents, v)).collect::<Result<_, _>>()?;
            let n: usize = shape.iter().product();
            let mut val = vec![0.0; n];
            let mut sup = vec![false; n];
            for_each_coord(&fa.shape, |c| {
                let assign: BTreeMap<&str, usize> = fa.vars.iter().map(|v| v.as_str()).zip(c.iter().copied()).collect();
                let ia = fa.offset_of(&assign);
                if !fa.sup[ia] {
                    return;
                }
                let o = keep.iter().zip(&shape).fold(0, |acc, (v, n)| acc * n + assign[v.as_str()]);
                val[o] = if sup[o] { op.combine(val[o], fa.val[ia]) } else { fa.val[ia] };
                sup[o] = true;
            });
            if *op == ReduceOp::Sum {
                // an empty sum is zero but still unsupported
            }
            Ok(Field { vars: keep, shape, val, sup })
        }
        Expr::MaxAll(_) => unreachable!("normalized bodies carry no implicit max"),
    }
}

/// Evaluates one expression; the result keeps its support.
pub fn evaluate(expr: &EinsumExpr, env: &BTreeMap<String, Operand>, extents: &BTreeMap<String, usize>) -> Result<Operand, OracleError> {
    let field = eval(&expr.normalized_body(), env, extents)?;
    let out_vars = &expr.output.indices;
    let shape: Vec<usize> = out_vars.iter().map(|v| extent(extents, v)).collect::<Result<_, _>>()?;
    let mut dense = DenseTensor::zeros(&shape);
    let mut support = vec![false; dense.data.len()];
    for_each_coord(&shape, |c| {
        let assign: BTreeMap<&str, usize> = out_vars.iter().map(|v| v.as_str()).zip(c.iter().copied()).collect();
        let i = field.offset_of(&assign);
        let o = dense.offset(c);
        support[o] = field.sup[i];
        dense.data[o] = if field.sup[i] { field.val[i] } else { 0.0 };
    });
    Ok(Operand { dense, support })
}

/// The spec-level oracle: dense inputs, support = nonzeros, extents from the inputs.
pub fn dense_einsum_oracle(expr: &EinsumExpr, inputs: &[(&str, DenseTensor)]) -> Result<DenseTensor, OracleError> {
    let mut env = BTreeMap::new();
    let mut extents: BTreeMap<String, usize> = BTreeMap::new();
    for (name, d) in inputs {
        env.insert(name.to_string(), Operand::from_dense(d));
    }
    let mut record = |tensor: &str, indices: &[String]| -> Result<(), OracleError> {
        if let Some(op) = env.get(tensor) {
            for (v, n) in indices.iter().zip(&op.dense.shape) {
                if let Some(prev) = extents.insert(v.clone(), *n) {
                    if prev != *n {
                        return Err(OracleError::ShapeMismatch(format!("index `{v}` has extents {prev} and {n}")));
                    }
                }
            }
        }
        Ok(())
    };
    let mut err = Ok(());
    expr.body.visit_accesses(&mut |a| {
        if err.is_ok() {
            err = record(&a.tensor, &a.indices);
        }
    });
    err?;
    Ok(evaluate(expr, &env, &extents)?.values())
}

/// Runs every expression and reshape of a program in order.
pub fn evaluate_program(p: &EinsumProgram, inputs: &BTreeMap<String, SparseTensor>) -> Result<BTreeMap<String, Operand>, OracleError> {
    let extents = crate::frontend::var_extents(p);
    let mut env: BTreeMap<String, Operand> = inputs.iter().map(|(k, t)| (k.clone(), Operand::from_sparse(t))).collect();
    for item in &p.items {
        let exprs: Vec<&EinsumExpr> = match item {
            crate::frontend::Item::Expr(e) => vec![e],
            crate::frontend::Item::Fuse { exprs, .. } => exprs.iter().collect(),
            crate::frontend::Item::Reshape(r) => {
                let src = env.get(&r.input).ok_or_else(|| OracleError::Unbound(r.input.clone()))?.clone();
                let shape = p.shape_of(&r.output).ok_or_else(|| OracleError::Unbound(r.output.clone()))?;
                if shape.iter().product::<usize>() != src.dense.data.len() {
                    return Err(OracleError::ShapeMismatch(format!("reshape of `{}`", r.input)));
                }
                env.insert(r.output.clone(), Operand { dense: DenseTensor { shape, data: src.dense.data }, support: src.support });
                continue;
            }
        };
        for e in exprs {
            let out = evaluate(e, &env, &extents)?;
            env.insert(e.name().to_string(), out);
        }
    }
    Ok(env)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frontend::parse_program;

    fn expr(src: &str) -> EinsumExpr {
        parse_program(src).unwrap().expressions()[0].clone()
    }

    #[test]
    fn spmv() {
        let e = expr("index i = 2; index j = 3;\ntensor B(i,j);\ntensor c(j);\nx(i) = B(i,j) * c(j);\n");
        let b = DenseTensor::from_rows(&[&[2.0, 0.0, 3.0], &[0.0, 4.0, 0.0]]);
        let c = DenseTensor::vector(&[1.0, 2.0, 3.0]);
        let x = dense_einsum_oracle(&e, &[("B", b), ("c", c)]).unwrap();
        assert_eq!(x.data, vec![11.0, 8.0]);
    }

    #[test]
    fn identity_matmul() {
        let e = expr("index i = 2; index k = 2; index j = 2;\ntensor A(i,k);\ntensor X(k,j);\nT(i,j) = A(i,k) * X(k,j);\n");
        let a = DenseTensor::from_rows(&[&[1.0, 0.0], &[0.0, 1.0]]);
        let x = DenseTensor::from_rows(&[&[1.5, -2.0], &[3.0, 4.0]]);
        assert_eq!(dense_einsum_oracle(&e, &[("A", a), ("X", x.clone())]).unwrap(), x);
    }

    #[test]
    fn relu() {
        let e = expr("index i = 2; index j = 2;\ntensor X(i,j);\nY(i,j) = relu(X(i,j));\n");
        let x = DenseTensor::from_rows(&[&[-1.0, 2.0], &[0.0, -3.0]]);
        assert_eq!(dense_einsum_oracle(&e, &[("X", x)]).unwrap(), DenseTensor::from_rows(&[&[0.0, 2.0], &[0.0, 0.0]]));
    }

    #[test]
    fn shape_mismatch() {
        let e = expr("index i = 2; index j = 2;\ntensor X(i,j);\ntensor Y(i,j);\nZ(i,j) = X(i,j) + Y(j,i);\n");
        let x = DenseTensor::zeros(&[2, 3]);
        let y = DenseTensor::zeros(&[2, 3]);
        assert!(matches!(dense_einsum_oracle(&e, &[("X", x), ("Y", y)]), Err(OracleError::ShapeMismatch(_))));
    }

    #[test]
    fn sparse_softmax_ignores_unstored() {
        let e = expr("index i = 1; index j = 3;\ntensor S(i,j);\nM(i) = max(S(i,j));\n");
        let s = DenseTensor::from_rows(&[&[-1.0, 0.0, -2.0]]);
        // the unstored zero does not win the max
        assert_eq!(dense_einsum_oracle(&e, &[("S", s)]).unwrap().data, vec![-1.0]);
    }

    #[test]
    fn union_add_and_broadcast_sub() {
        let e = expr("index i = 3;\ntensor a(i);\ntensor b(i);\nc(i) = a(i) + b(i);\n");
        let r = dense_einsum_oracle(&e, &[("a", DenseTensor::vector(&[1.0, 0.0, 0.0])), ("b", DenseTensor::vector(&[0.0, 2.0, 0.0]))]).unwrap();
        assert_eq!(r.data, vec![1.0, 2.0, 0.0]);
        let e = expr("index i = 2; index j = 2;\ntensor S(i,j);\ntensor m(i);\nE(i,j) = exp(S(i,j) - m(i));\n");
        let s = DenseTensor::from_rows(&[&[1.0, 0.0], &[0.0, 2.0]]);
        let r = dense_einsum_oracle(&e, &[("S", s), ("m", DenseTensor::vector(&[1.0, 2.0]))]).unwrap();
        assert_eq!(r.data, vec![1.0, 0.0, 0.0, 1.0]);
    }
}
