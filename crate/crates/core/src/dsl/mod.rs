//! The `.ski` benchmark description language.

mod ast;
mod eval;
mod lexer;
mod parser;

pub use ast::{BinOp, Expr, SkiAst, StepMode, StepSpec, Stmt};
pub use eval::{
    evaluate, expand_for, round_half_up, run_script, validate, Env, RunOptions, RunOutput, Value,
};
pub use parser::{parse, KEYWORDS};
