//! The registry of row-level model functions a pipeline may call.
//!
//! Registration stores a *builder* — a closure that stages the function body
//! over already-staged argument values — plus its signature and batching
//! configuration. Nothing is staged at registration time; plan compilation
//! looks names up (unknown names fail there, before any staging) and stages
//! each application in the mode the plan requests.

use std::collections::HashMap;
use std::rc::Rc;

use tandem_ir::{StageError, StagedValue, Stager};
use tandem_ml::{MlError, MlpModel};

use crate::error::{BridgeError, Result};

/// Batching configuration for vectorized and pooled application.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BatchConfig {
    /// Rows gathered per kernel invocation.
    pub batch: usize,
    /// Dedicated worker threads (0 = no pool; pooled mode requires ≥ 1).
    pub workers: usize,
    /// Bounded queue capacity between producer and workers.
    pub queue_cap: usize,
}

impl Default for BatchConfig {
    fn default() -> Self {
        BatchConfig { batch: 1024, workers: 0, queue_cap: 2 }
    }
}

impl BatchConfig {
    /// Enforce the structural constraints: a positive batch, a positive
    /// queue, and — when a pool is enabled — capacity at least twice the
    /// worker count so workers are never starved by a single in-flight batch.
    pub fn validate(&self) -> Result<()> {
        if self.batch < 1 {
            return Err(BridgeError::Config("batch size must be at least 1".into()));
        }
        if self.queue_cap < 1 {
            return Err(BridgeError::Config("queue capacity must be at least 1".into()));
        }
        if self.workers > 0 && self.queue_cap < 2 * self.workers {
            return Err(BridgeError::Config(format!(
                "queue capacity {} must be at least twice the worker count {}",
                self.queue_cap, self.workers
            )));
        }
        Ok(())
    }
}

/// Stages the function body over staged scalar arguments (already validated
/// to match the declared arity), yielding the staged result value.
pub type ScalarBuilder = Rc<dyn Fn(&mut Stager, &[StagedValue]) -> tandem_ir::stage::Result<StagedValue>>;

/// One registered function: signature, body builder, batching parameters.
#[derive(Clone)]
pub struct UdfDef {
    pub name: String,
    pub arity: usize,
    /// Present when the function is a staged model; enables the opaque
    /// matrix-kernel batch lowering and direct oracle evaluation.
    pub model: Option<MlpModel>,
    pub builder: ScalarBuilder,
    pub cfg: BatchConfig,
    /// Lower batched application to opaque matrix-multiply kernel nodes
    /// (model-backed functions only) instead of a row loop.
    pub kernel_nodes: bool,
}

/// Name → definition map. Names are unique; looking up an unregistered name
/// is an error carrying that name.
#[derive(Default)]
pub struct UdfRegistry {
    map: HashMap<String, Rc<UdfDef>>,
}

impl UdfRegistry {
    pub fn new() -> UdfRegistry {
        UdfRegistry::default()
    }

    fn insert(&mut self, def: UdfDef) -> Result<()> {
        def.cfg.validate()?;
        if self.map.contains_key(&def.name) {
            return Err(BridgeError::Config(format!(
                "a function named \"{}\" is already registered",
                def.name
            )));
        }
        self.map.insert(def.name.clone(), Rc::new(def));
        Ok(())
    }

    /// Register a staged model. Its arity is the model input dimension; the
    /// builder unrolls the model arithmetic with weights as constants.
    pub fn register_model(
        &mut self,
        name: &str,
        model: MlpModel,
        cfg: BatchConfig,
        kernel_nodes: bool,
    ) -> Result<()> {
        let arity = model.arity();
        let m = model.clone();
        let builder: ScalarBuilder = Rc::new(move |s, args| {
            tandem_ml::stage_scalar(s, &m, args).map_err(ml_stage_only)
        });
        self.insert(UdfDef {
            name: name.to_string(),
            arity,
            model: Some(model),
            builder,
            cfg,
            kernel_nodes,
        })
    }

    /// Register an arbitrary scalar builder (e.g. an identity or arithmetic
    /// function). Batched modes apply it row-wise inside the batch kernel.
    pub fn register_custom(
        &mut self,
        name: &str,
        arity: usize,
        builder: ScalarBuilder,
        cfg: BatchConfig,
    ) -> Result<()> {
        if arity == 0 {
            return Err(BridgeError::Config("function arity must be at least 1".into()));
        }
        self.insert(UdfDef {
            name: name.to_string(),
            arity,
            model: None,
            builder,
            cfg,
            kernel_nodes: false,
        })
    }

    /// Resolve a name, failing with a message that carries it.
    pub fn lookup(&self, name: &str) -> Result<Rc<UdfDef>> {
        self.map.get(name).cloned().ok_or_else(|| {
            BridgeError::Config(format!("no function named \"{name}\" is registered"))
        })
    }

    pub fn contains(&self, name: &str) -> bool {
        self.map.contains_key(name)
    }

    /// Output-type resolver for plan field inference: every registered
    /// function produces one float64 per row.
    pub fn out_ty_resolver(&self) -> impl Fn(&str) -> Option<tandem_rel::FieldTy> + '_ {
        move |name| {
            if self.map.contains_key(name) {
                Some(tandem_rel::FieldTy::F64)
            } else {
                None
            }
        }
    }
}

/// Builders validated at registration only fail with staging errors later.
fn ml_stage_only(e: MlError) -> StageError {
    match e {
        MlError::Stage(se) => se,
        other => StageError::Internal(format!("model staging: {other}")),
    }
}
