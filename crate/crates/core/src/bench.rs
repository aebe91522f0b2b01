//! The bundled benchmark suite: desk-scale programs plus deterministic inputs.

use crate::frontend::{parse_program, EinsumProgram, FrontendError};
use crate::tensor::{for_each_coord, DenseTensor, SparseTensor, TensorError};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;

/// How an input tensor is populated.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum InputGen {
    /// Each element is nonzero with the given probability.
    Uniform(f64),
    /// Square adjacency with self-loops plus random edges.
    Graph(f64),
    /// Dense diagonal blocks of the given size.
    BlockDiagonal(usize),
    Dense,
}

#[derive(Clone, Debug)]
pub struct Benchmark {
    pub name: &'static str,
    pub source: &'static str,
    /// Generators for inputs; unlisted inputs are dense.
    pub inputs: &'static [(&'static str, InputGen)],
}

impl Benchmark {
    pub fn program(&self) -> Result<EinsumProgram, FrontendError> {
        parse_program(self.source)
    }

    pub fn generate(&self, seed: u64) -> Result<BTreeMap<String, SparseTensor>, TensorError> {
        let p = self.program().expect("bundled programs parse");
        generate_inputs(&p, self.inputs, seed)
    }
}

fn nonzero(rng: &mut ChaCha8Rng) -> f64 {
    let v: f64 = rng.gen_range(0.1..1.0);
    if rng.gen_bool(0.25) {
        -v
    } else {
        v
    }
}

/// Random inputs for every tensor the program reads, in declared formats.
pub fn generate_inputs(p: &EinsumProgram, gens: &[(&str, InputGen)], seed: u64) -> Result<BTreeMap<String, SparseTensor>, TensorError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = BTreeMap::new();
    for name in p.inputs() {
        let decl = p.tensor(&name).expect("inputs are declared");
        let shape = p.shape_of(&name).unwrap_or_default();
        let gen = gens.iter().find(|(n, _)| *n == name).map_or(InputGen::Dense, |g| g.1);
        let mut dense = DenseTensor::zeros(&shape);
        for_each_coord(&shape, |c| {
            let keep = match gen {
                InputGen::Uniform(d) => rng.gen_bool(d),
                InputGen::Graph(d) => c.len() == 2 && (c[0] == c[1] || rng.gen_bool(d)),
                InputGen::BlockDiagonal(b) => c.iter().all(|&x| x / b == c[0] / b),
                InputGen::Dense => true,
            };
            if keep {
                let v = match gen {
                    InputGen::Graph(_) | InputGen::BlockDiagonal(_) => rng.gen_range(0.1..1.0),
                    _ => nonzero(&mut rng),
                };
                dense.set(c, v);
            }
        });
        let (mode_order, kinds) = decl.storage();
        out.insert(name.clone(), SparseTensor::from_dense(&name, &dense, &kinds, &mode_order)?);
    }
    Ok(out)
}

pub const SPMV: &str = "\
index i = 8; index j = 8;
tensor A(i,j): dense(i)->compressed(j);
tensor v(j): dense(j);
x(i) = A(i,j) * v(j);
";

pub const SPMM: &str = "\
index i = 6; index k = 6; index j = 4;
tensor A(i,k): dense(i)->compressed(k);
tensor X(k,j): dense(k)->dense(j);
T(i,j) = A(i,k) * X(k,j);
";

pub const ADD: &str = "\
index i = 6; index j = 6;
tensor A(i,j): dense(i)->compressed(j);
tensor B(i,j): dense(i)->compressed(j);
C(i,j) = A(i,j) + B(i,j);
";

pub const OUTER: &str = "\
index i = 6; index j = 5;
tensor a(i): compressed(i);
tensor b(j): compressed(j);
C(i,j) = a(i) * b(j);
";

pub const NESTED: &str = "\
index i = 16; index k = 16; index j = 16; index l = 2;
tensor A(i,k): dense(i)->compressed(k);
tensor B(k,j): dense(k)->dense(j);
tensor C(j,l): dense(j)->dense(l);
fuse {
  T(i,j) = A(i,k) * B(k,j);
  D(i,l) = T(i,j) * C(j,l);
}
";

pub const GCN: &str = "\
index i = 16; index l = 16; index m = 6; index j = 4; index c = 3;
tensor A(i,l): dense(i)->compressed(l);
tensor X(l,m): dense(l)->dense(m);
tensor W1(m,j): dense(m)->dense(j);
tensor b1(j): dense(j);
tensor W2(j,c): dense(j)->dense(c);
tensor b2(c): dense(c);
fuse {
  T1(i,m) = A(i,l) * X(l,m);
  T2(i,j) = T1(i,m) * W1(m,j);
  H1(i,j) = T2(i,j) + b1(j);
  R1(i,j) = relu(H1(i,j));
}
fuse {
  T3(i,j) = A(i,l) * R1(l,j);
  T4(i,c) = T3(i,j) * W2(j,c);
  H2(i,c) = T4(i,c) + b2(c);
  Y(i,c) = relu(H2(i,c));
}
";

pub const GRAPHSAGE: &str = "\
index i = 16; index l = 16; index m = 6; index j = 4; index c = 3;
tensor A(i,l): dense(i)->compressed(l);
tensor X(l,m): dense(l)->dense(m);
tensor Wn1(m,j): dense(m)->dense(j);
tensor Ws1(m,j): dense(m)->dense(j);
tensor Wn2(j,c): dense(j)->dense(c);
tensor Ws2(j,c): dense(j)->dense(c);
fuse {
  N1(i,j) = A(i,l) * X(l,m) * Wn1(m,j);
  S1(i,j) = X(i,m) * Ws1(m,j);
  H1(i,j) = relu(N1(i,j) + S1(i,j));
}
fuse {
  N2(i,c) = A(i,l) * H1(l,j) * Wn2(j,c);
  S2(i,c) = H1(i,j) * Ws2(j,c);
  Y(i,c) = relu(N2(i,c) + S2(i,c));
}
";

/// The GraphSAGE neighbor kernel on its own.
pub const SAGE_NEIGHBOR: &str = "\
index i = 16; index l = 16; index m = 6; index j = 4;
tensor A(i,l): dense(i)->compressed(l);
tensor X(l,m): dense(l)->compressed(m);
tensor W(m,j): dense(m)->dense(j);
T(i,j) = A(i,l) * X(l,m) * W(m,j);
";

pub const ATTENTION: &str = "\
index i = 16; index j = 16; index k = 4; index d = 8;
tensor Q(i,k): dense(i)->dense(k);
tensor K(j,k): dense(j)->dense(k);
tensor V(j,d): dense(j)->dense(d);
tensor M(i,j): dense(i)->compressed(j);
fuse {
  S(i,j) = mask(M(i,j), scale(Q(i,k) * K(j,k), 0.5));
  Mx(i) = max(S(i,j));
  E(i,j) = mask(M(i,j), exp(S(i,j) - Mx(i)));
  Z(i) = E(i,j);
  P(i,j) = E(i,j) / Z(i);
  O(i,d) = P(i,j) * V(j,d);
}
";

pub fn suite() -> Vec<Benchmark> {
    vec![
        Benchmark { name: "spmv", source: SPMV, inputs: &[("A", InputGen::Uniform(0.3))] },
        Benchmark { name: "spmm", source: SPMM, inputs: &[("A", InputGen::Uniform(0.4))] },
        Benchmark { name: "add", source: ADD, inputs: &[("A", InputGen::Uniform(0.3)), ("B", InputGen::Uniform(0.3))] },
        Benchmark { name: "outer", source: OUTER, inputs: &[("a", InputGen::Uniform(0.5)), ("b", InputGen::Uniform(0.5))] },
        Benchmark { name: "nested_matmul", source: NESTED, inputs: &[("A", InputGen::Graph(0.1))] },
        Benchmark { name: "gcn", source: GCN, inputs: &[("A", InputGen::Graph(0.2))] },
        Benchmark { name: "graphsage", source: GRAPHSAGE, inputs: &[("A", InputGen::Graph(0.2))] },
        Benchmark { name: "attention", source: ATTENTION, inputs: &[("M", InputGen::BlockDiagonal(4))] },
    ]
}

pub fn find(name: &str) -> Option<Benchmark> {
    suite().into_iter().find(|b| b.name == name)
}

/// Relative agreement used by every oracle comparison.
pub fn agrees(sim: &DenseTensor, oracle: &DenseTensor, rel_tol: f64) -> bool {
    let scale = oracle.data.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    sim.shape == oracle.shape && sim.max_abs_diff(oracle) <= rel_tol * scale
}
