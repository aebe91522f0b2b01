//! Cross-expression fusion compiler for sparse tensor programs, lowered to a
//! streaming dataflow graph and executed by a cycle-level simulator.

pub mod frontend;
pub mod bench;
pub mod fusion;
pub mod graph;
pub mod table;
pub mod optimizer;
pub mod pipeline;
pub mod oracle;
pub mod sim;
pub mod tensor;
#[cfg(test)]
mod testutil;
