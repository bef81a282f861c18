//! Staged graph IR shared by the query and tensor front ends.
//!
//! Programs are built in two stages: Rust code that runs now ("current
//! stage") constructs a graph of operations that run later ("next stage").
//! A [`Stager`] owns the growing graph and hands out [`StagedValue`]
//! handles; anything computed on handles becomes a node, anything computed
//! on plain Rust values is evaluated immediately and disappears into the
//! graph as constants.
//!
//! The node table is append-only and every operand id is strictly smaller
//! than the id of the node referring to it, so the graph is a DAG by
//! construction. Pure nodes are deduplicated while they are built (scope
//! aware, see [`stage`]); [`optimize`] folds constants, inlines small
//! functions and drops dead code; [`schedule`] fixes a deterministic
//! statement order with loop-invariant hoisting. Serialization is a
//! line-oriented text format, one node per line.

pub mod numeric;
pub mod optimize;
pub mod schedule;
pub mod serialize;
pub mod stage;
pub mod types;

pub use optimize::{optimize, OptimizeConfig};
pub use schedule::{is_inline, schedule, Schedule};
pub use stage::{func_meta, FuncHandle, FuncMeta, StageError, StagedValue, Stager, VarRef};
pub use types::{
    BlockKind, ColKind, CsvColTy, CsvSpec, Effect, Imm, IrGraph, IrNode, NodeId, Op, PoolCfg,
    PrintFmt, ScalarTy, Stype,
};
