//! The query-engine half: schemas, columnar buffers, and push-style
//! operators (scan, filter, project, hash join, group-by aggregate) that
//! stage their logic into the shared graph. Each operator drives its
//! consumer through a per-record callback, so a whole pipeline fuses into
//! the loops staged by its sources.

mod error;
mod ops;
mod plan;
pub mod reference;
mod schema;

pub use error::{RelError, Result};
pub use ops::{
    buffer_records, filter, group_by_agg, hash_join, loop_rel, materialize, project, scan_csv,
    when_rel, while_rel, AggSpec, ColumnBuffer, ExprFn, KeySpec, Record, RecordSink, RelOp,
    GROW_INITIAL_CAPACITY,
};
pub use plan::{infer_expr, stage_expr, AggKind, ExprTy, LogicalPlan, PlanExpr, UdfMode};
pub use schema::{FieldInfo, FieldTy, RelSchema, StrInterner};
