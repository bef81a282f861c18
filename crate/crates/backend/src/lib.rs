//! Execution back ends for staged graphs: a reference interpreter and a
//! deterministic C emitter with a small toolchain wrapper.
//!
//! The interpreter walks the graph in staging order and is the semantics
//! oracle; the emitter lowers the scheduled statement order to a single
//! self-contained C file whose output is byte-identical to the
//! interpreter's for every deterministic program. Both share the same
//! numeric kernel (portable exponential, 17-digit float printing),
//! wrapping integer arithmetic and trap conditions.

pub mod cc;
pub mod emit;
pub mod error;
pub mod interp;

pub use cc::{build, compile_c, run_compiled, CompiledProgram, Toolchain};
pub use emit::{emit_c, EmitConfig};
pub use error::{BackendError, Result};
pub use interp::{interpret, ProbeVal, RunConfig, RunOutput, Trace};
