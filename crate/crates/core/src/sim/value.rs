use crate::frontend::{MapFn, ReduceOp};
use crate::graph::AluOp;
use std::sync::Arc;

/// Dense payload with a labeled row-major layout.
#[derive(Clone, Debug, PartialEq)]
pub struct Block {
    pub dims: Vec<String>,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Block {
    pub fn volume(&self) -> usize {
        self.data.len()
    }

    fn strides(&self) -> Vec<usize> {
        let mut s = vec![1; self.shape.len()];
        for k in (0..self.shape.len().saturating_sub(1)).rev() {
            s[k] = s[k + 1] * self.shape[k + 1];
        }
        s
    }

    /// Reads element at coordinates given for `dims` (missing dims broadcast).
    fn offset_in(&self, dims: &[String], coords: &[usize]) -> usize {
        let strides = self.strides();
        self.dims
            .iter()
            .zip(&strides)
            .map(|(d, s)| coords[dims.iter().position(|x| x == d).expect("dim present")] * s)
            .sum()
    }

    /// Reorders the layout to `dims`.
    pub fn transposed(&self, dims: &[String]) -> Block {
        if self.dims == dims {
            return self.clone();
        }
        let shape: Vec<usize> = dims.iter().map(|d| self.shape[self.dims.iter().position(|x| x == d).expect("same dims")]).collect();
        let mut data = Vec::with_capacity(self.data.len());
        crate::tensor::for_each_coord(&shape, |c| data.push(self.data[self.offset_in(dims, c)]));
        Block { dims: dims.to_vec(), shape, data }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Value {
    Scalar(f64),
    Block(Arc<Block>),
}

impl Value {
    pub fn zero() -> Value {
        Value::Scalar(0.0)
    }

    pub fn is_zero(&self) -> bool {
        match self {
            Value::Scalar(x) => *x == 0.0,
            Value::Block(b) => b.data.iter().all(|x| *x == 0.0),
        }
    }

    pub fn volume(&self) -> u64 {
        match self {
            Value::Scalar(_) => 1,
            Value::Block(b) => b.volume() as u64,
        }
    }

    pub fn bytes(&self, element_bytes: u64) -> u64 {
        self.volume() * element_bytes
    }

    /// Element-wise op with broadcasting over the union of labeled dims.
    /// Returns the result and the FLOPs spent.
    pub fn binary(&self, other: &Value, f: impl Fn(f64, f64) -> f64) -> Value {
        match (self, other) {
            (Value::Scalar(a), Value::Scalar(b)) => Value::Scalar(f(*a, *b)),
            (Value::Scalar(a), Value::Block(b)) => Value::Block(Arc::new(Block { data: b.data.iter().map(|x| f(*a, *x)).collect(), ..(**b).clone() })),
            (Value::Block(a), Value::Scalar(b)) => Value::Block(Arc::new(Block { data: a.data.iter().map(|x| f(*x, *b)).collect(), ..(**a).clone() })),
            (Value::Block(a), Value::Block(b)) => {
                if a.dims == b.dims {
                    let data = a.data.iter().zip(&b.data).map(|(x, y)| f(*x, *y)).collect();
                    return Value::Block(Arc::new(Block { data, ..(**a).clone() }));
                }
                let mut dims = a.dims.clone();
                let mut shape = a.shape.clone();
                for (d, n) in b.dims.iter().zip(&b.shape) {
                    if !dims.contains(d) {
                        dims.push(d.clone());
                        shape.push(*n);
                    }
                }
                let mut data = Vec::with_capacity(shape.iter().product());
                crate::tensor::for_each_coord(&shape, |c| data.push(f(a.data[a.offset_in(&dims, c)], b.data[b.offset_in(&dims, c)])));
                Value::Block(Arc::new(Block { dims, shape, data }))
            }
        }
    }

    pub fn alu(&self, other: &Value, op: AluOp) -> Value {
        self.binary(other, |a, b| op.apply(a, b))
    }

    pub fn map(&self, func: MapFn) -> Value {
        match self {
            Value::Scalar(x) => Value::Scalar(func.apply(*x)),
            Value::Block(b) => Value::Block(Arc::new(Block { data: b.data.iter().map(|x| func.apply(*x)).collect(), ..(**b).clone() })),
        }
    }

    pub fn combine(&self, other: &Value, op: ReduceOp) -> Value {
        self.binary(other, |a, b| op.combine(a, b))
    }

    /// Folds away a labeled dim; returns the value and the FLOPs spent.
    pub fn reduce_dim(&self, dim: &str, op: ReduceOp) -> (Value, u64) {
        let Value::Block(b) = self else { return (self.clone(), 0) };
        let Some(k) = b.dims.iter().position(|d| d == dim) else { return (self.clone(), 0) };
        let mut dims = b.dims.clone();
        dims.remove(k);
        let mut shape = b.shape.clone();
        let n = shape.remove(k);
        let strides = b.strides();
        let mut data = Vec::with_capacity(b.volume() / n.max(1));
        crate::tensor::for_each_coord(&shape, |c| {
            let mut full = c.to_vec();
            full.insert(k, 0);
            let base: usize = full.iter().zip(&strides).map(|(x, s)| x * s).sum();
            let mut acc = b.data[base];
            for i in 1..n {
                acc = op.combine(acc, b.data[base + i * strides[k]]);
            }
            data.push(acc);
        });
        let flops = if op == ReduceOp::Sum { (data.len() * n.saturating_sub(1)) as u64 } else { 0 };
        let v = if dims.is_empty() { Value::Scalar(data[0]) } else { Value::Block(Arc::new(Block { dims, shape, data })) };
        (v, flops)
    }

    /// Values in the given layout; scalars expand to a uniform block.
    pub fn to_layout(&self, dims: &[String], shape: &[usize]) -> Vec<f64> {
        match self {
            Value::Scalar(x) => vec![*x; shape.iter().product()],
            Value::Block(b) => {
                let mut data = Vec::with_capacity(shape.iter().product());
                crate::tensor::for_each_coord(shape, |c| {
                    let present = b.dims.iter().all(|d| dims.contains(d));
                    debug_assert!(present, "block has dims outside the output layout");
                    data.push(b.data[b.offset_in(dims, c)]);
                });
                data
            }
        }
    }
}

/// One stream element.
#[derive(Clone, Debug, PartialEq)]
pub enum Token {
    Crd(u32),
    Ref(u32),
    /// Missing operand on a union output.
    Null,
    Val(Value),
    Stop(u8),
    Done,
}

impl Token {
    pub fn is_data(&self) -> bool {
        matches!(self, Token::Crd(_) | Token::Ref(_) | Token::Null | Token::Val(_))
    }

    pub fn value(&self) -> Option<Value> {
        match self {
            Token::Val(v) => Some(v.clone()),
            Token::Null => Some(Value::zero()),
            _ => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn blk(dims: &[&str], shape: &[usize], data: &[f64]) -> Value {
        Value::Block(Arc::new(Block { dims: dims.iter().map(|s| s.to_string()).collect(), shape: shape.to_vec(), data: data.to_vec() }))
    }

    #[test]
    fn block_matmul_by_broadcast_and_reduce() {
        let a = blk(&["i", "k"], &[2, 2], &[1.0, 2.0, 3.0, 4.0]);
        let b = blk(&["k", "j"], &[2, 2], &[5.0, 6.0, 7.0, 8.0]);
        let prod = a.alu(&b, AluOp::Mul);
        assert_eq!(prod.volume(), 8);
        let (c, flops) = prod.reduce_dim("k", ReduceOp::Sum);
        assert_eq!(flops, 4);
        let dims = vec!["i".to_string(), "j".to_string()];
        assert_eq!(c.to_layout(&dims, &[2, 2]), vec![19.0, 22.0, 43.0, 50.0]);
    }

    #[test]
    fn transpose_round_trip() {
        let a = blk(&["i", "k"], &[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let Value::Block(b) = a else { unreachable!() };
        let t = b.transposed(&["k".to_string(), "i".to_string()]);
        assert_eq!(t.data, vec![1.0, 4.0, 2.0, 5.0, 3.0, 6.0]);
        assert_eq!(t.transposed(&b.dims), *b);
    }
}
