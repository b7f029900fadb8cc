//! Syntax, states and topology of the message-passing calculus.

pub mod command;
pub mod expr;
pub mod state;
pub mod topology;

pub use command::Command;
pub use expr::{eval_expr, Env, EvalError, Expr, ParseError};
pub use state::{initial_state, GlobalState, ProcState, StateError};
pub use topology::{
    topology_warnings, validate_topology, CollectiveKind, ReduceOp, Resolved, SpecError,
    SpecFn, SpecFormatError, SpecWarning, TopologySpec, MAX_TAG_GAP,
};
