//! The boundary layer: where relational pipelines and staged models meet.
//!
//! This crate owns the crossings the rest of the system relies on being
//! cheap and exact: aliasing conversions between columnar buffers and flat
//! tensor storage ([`convert`]), the registry of row-level model functions
//! ([`registry`]), the three application modes — inline per record, batched,
//! and batched onto a dedicated worker pool — ([`apply`]), the bounded
//! producer/worker queue with back-pressure ([`queue`]), and the compiler
//! from logical plans to staged operator trees ([`compile`]).

pub mod apply;
pub mod compile;
pub mod convert;
pub mod error;
pub mod queue;
pub mod registry;

pub use apply::{apply_udf_pooled, apply_udf_scalar, apply_udf_vectorized};
pub use compile::compile_plan;
pub use convert::{buffer_to_tensor, tensor_to_value, DynTensor};
pub use error::{BridgeError, Result};
pub use queue::{BoundedQueue, QueueClosed, QueueStats};
pub use registry::{BatchConfig, ScalarBuilder, UdfDef, UdfRegistry};
