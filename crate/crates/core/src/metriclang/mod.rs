//! MetricLang: a small, total expression language for success and progress
//! checks over a single simulator snapshot.
//!
//! ```text
//! metric {
//!   success: overlap_frac("cube", "target_area") > 0.5 and still("cube", 0.01);
//!   milestone lifted weight 1: max_z("cube") > 0.85;
//! }
//! ```
//!
//! Precedence, loosest first: `or`, `and`, `not`, comparisons (non-chaining),
//! `+ -`, `* /`, unary `-`, then calls, literals and parentheses. String
//! literals name objects. Programs are type-checked while parsing.

pub mod ast;
pub mod eval;
pub mod parser;
pub mod snapshot;

use thiserror::Error;

pub use ast::{Expr, MetricProgram, Milestone, Type, BUILTINS};
pub use eval::{bind, evaluate, BindError, BoundMetric, EvalError, MetricResult, FELL_OFF};
pub use parser::parse_metric;
pub use snapshot::{ObjectState, ObjsSnapshot, ParticleState, RigidState, SnapshotError};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetricError {
    #[error("syntax error at {line}:{column}: {message}")]
    Syntax { line: usize, column: usize, message: String },
    #[error("type error at {line}:{column}: {message}")]
    Type { line: usize, column: usize, message: String },
    #[error("unknown builtin '{name}' at {line}:{column}")]
    UnknownBuiltin { name: String, line: usize, column: usize },
}
