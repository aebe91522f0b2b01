//! Textual Einsum DSL: grammar, canonical printer and semantic validation.

pub mod ast;
pub mod parser;
pub mod printer;
pub mod validate;

pub use ast::*;
pub use parser::{parse_program, FrontendError};
pub use printer::{print_einsum, print_expr, print_program};
pub use validate::{infer_intermediates, validate, var_extents, DiagKind, Diagnostic, Severity};
