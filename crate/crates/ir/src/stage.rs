//! Graph construction: typed staged values, scope-aware CSE, effect
//! tracking.
//!
//! A [`Stager`] grows one [`IrGraph`]. Pure nodes pass through a CSE index
//! keyed by (scope, op, operands, immediates); the lookup walks the chain
//! of enclosing scopes, so nested loops reuse pure nodes defined outside,
//! but sibling branches never see each other's entries. Nodes that read
//! mutable storage additionally key on the last-write version of the
//! region they touch, so two reads of the same cell merge exactly when no
//! write can be observed between them. Effectful nodes are appended
//! unconditionally in staging order.
//!
//! Mutation is tracked per allocation: every array, cell, hash table or
//! pool allocation is its own effect region, named by the allocating
//! node's id. Writes bump a version counter for their region; anything
//! global (io, instrumentation) bumps an epoch that conservatively
//! invalidates read merging across it.

use crate::types::*;
use std::collections::{BTreeSet, HashMap};
use std::fmt;

/// Handle to a next-stage value: the node computing it plus its type.
#[derive(Clone, Debug)]
pub struct StagedValue {
    pub node: NodeId,
    pub stype: Stype,
}

/// Handle to a staged function definition.
#[derive(Clone, Debug)]
pub struct FuncHandle {
    pub node: NodeId,
    pub name: String,
}

/// Handle to a staged mutable scalar cell. Kept distinct from
/// [`StagedValue`] so a cell can never be used where its content is meant.
#[derive(Clone, Debug)]
pub struct VarRef {
    pub node: NodeId,
    pub ty: Stype,
}

#[derive(Debug)]
pub enum StageError {
    TypeMismatch {
        op: String,
        expected: String,
        got: String,
    },
    BranchTypeMismatch {
        then_ty: Stype,
        else_ty: Stype,
    },
    /// An operand was created in a scope that is not visible from the
    /// point of use (e.g. a record field escaping its callback).
    ScopeViolation {
        operand: NodeId,
    },
    ArityMismatch {
        op: String,
        expected: usize,
        got: usize,
    },
    UnknownFunc(String),
    DuplicateFunc(String),
    FuncNotAtRoot(String),
    /// Staged control flow is rejected while gradients are being recorded.
    ControlFlowInGradScope(&'static str),
    /// A pooled kernel captured values from the enclosing scope.
    OpenKernel(String),
    Internal(String),
}

impl fmt::Display for StageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StageError::TypeMismatch { op, expected, got } => {
                write!(f, "{}: expected {}, got {}", op, expected, got)
            }
            StageError::BranchTypeMismatch { then_ty, else_ty } => write!(
                f,
                "branches disagree: then yields {}, else yields {}",
                then_ty, else_ty
            ),
            StageError::ScopeViolation { operand } => write!(
                f,
                "node {} is used outside the scope it was staged in",
                operand
            ),
            StageError::ArityMismatch { op, expected, got } => {
                write!(f, "{}: expected {} operands, got {}", op, expected, got)
            }
            StageError::UnknownFunc(n) => write!(f, "unknown staged function '{}'", n),
            StageError::DuplicateFunc(n) => write!(f, "staged function '{}' already defined", n),
            StageError::FuncNotAtRoot(n) => {
                write!(f, "staged function '{}' must be defined at the root scope", n)
            }
            StageError::ControlFlowInGradScope(what) => write!(
                f,
                "{} cannot be staged while a gradient tape is recording",
                what
            ),
            StageError::OpenKernel(n) => write!(
                f,
                "pooled kernel '{}' captures values from the enclosing scope",
                n
            ),
            StageError::Internal(m) => write!(f, "internal staging error: {}", m),
        }
    }
}

impl std::error::Error for StageError {}

pub type Result<T> = std::result::Result<T, StageError>;

/// CSE index key. `ver` is (region version, global epoch) and is zero for
/// nodes without a read effect.
#[derive(Clone, PartialEq, Eq, Hash, Debug)]
pub struct CseKey {
    pub scope: NodeId,
    pub op: Op,
    pub operands: Vec<NodeId>,
    pub imms: Vec<Imm>,
    pub ver: (u64, u64),
}

/// Effects accumulated while a block is being built.
#[derive(Default, Clone, Debug)]
struct EffAcc {
    reads: BTreeSet<NodeId>,
    writes: BTreeSet<NodeId>,
    global: bool,
    /// Regions allocated inside this block; invisible to enclosing scopes
    /// unless the handle escapes through a block result.
    allocs: BTreeSet<NodeId>,
}

/// Externally visible effects of a finished block.
#[derive(Default, Clone, Debug)]
pub(crate) struct ExtEff {
    pub reads: BTreeSet<NodeId>,
    pub writes: BTreeSet<NodeId>,
    pub global: bool,
}

impl ExtEff {
    pub(crate) fn union(mut self, other: ExtEff) -> ExtEff {
        self.reads.extend(other.reads);
        self.writes.extend(other.writes);
        self.global |= other.global;
        self
    }

    /// Condenses a summary into the single effect tag stored on a node.
    /// Multiple regions of the same class keep the smallest id; the tag is
    /// a summary, full ordering is preserved by the scheduler anyway.
    pub(crate) fn condense(&self) -> Effect {
        if self.global {
            Effect::Global
        } else if let Some(&w) = self.writes.iter().next() {
            Effect::Write(w)
        } else if let Some(&r) = self.reads.iter().next() {
            Effect::Read(r)
        } else {
            Effect::Pure
        }
    }
}

/// Per-function metadata kept in the symbol table.
#[derive(Clone, Debug)]
pub struct FuncInfo {
    pub node: NodeId,
    pub body_block: NodeId,
    pub params: Vec<(NodeId, Stype)>,
    pub result: Stype,
    pub body_size: usize,
    pub no_inline: bool,
    pub(crate) ext: ExtEff,
}

/// Outcome of the constant folder.
enum Folded {
    Val(Imm),
    Alias(NodeId),
    No,
}

pub struct Stager {
    g: IrGraph,
    scopes: Vec<NodeId>,
    effs: Vec<EffAcc>,
    cse: HashMap<CseKey, NodeId>,
    ver: HashMap<NodeId, u64>,
    epoch: u64,
    funcs: HashMap<String, FuncInfo>,
    func_names: HashMap<NodeId, String>,
    grad_locked: u32,
    kernel_unlock: u32,
    warnings: Vec<String>,
}

impl Default for Stager {
    fn default() -> Self {
        Self::new()
    }
}

impl Stager {
    pub fn new() -> Stager {
        let mut g = IrGraph::default();
        g.nodes.push(IrNode {
            op: Op::Block,
            operands: vec![],
            imms: vec![Imm::Kind(BlockKind::Root)],
            effect: Effect::Pure,
            scope: NodeId(0),
        });
        Stager {
            g,
            scopes: vec![NodeId(0)],
            effs: vec![EffAcc::default()],
            cse: HashMap::new(),
            ver: HashMap::new(),
            epoch: 0,
            funcs: HashMap::new(),
            func_names: HashMap::new(),
            grad_locked: 0,
            kernel_unlock: 0,
            warnings: Vec::new(),
        }
    }

    pub fn graph(&self) -> &IrGraph {
        &self.g
    }

    /// Consumes the builder, returning the finished graph.
    pub fn finish(self) -> IrGraph {
        self.g
    }

    pub fn current_scope(&self) -> NodeId {
        *self.scopes.last().expect("scope stack is never empty")
    }

    pub fn is_scope_active(&self, s: NodeId) -> bool {
        self.scopes.contains(&s)
    }

    pub fn unit(&self) -> StagedValue {
        StagedValue {
            node: NodeId(0),
            stype: Stype::Unit,
        }
    }

    pub fn warn(&mut self, msg: String) {
        self.warnings.push(msg);
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    pub fn func_info(&self, name: &str) -> Option<&FuncInfo> {
        self.funcs.get(name)
    }

    /// CSE index contents, exposed so tests can check what keys the merge
    /// decisions were made on.
    pub fn cse_entries(&self) -> impl Iterator<Item = (&CseKey, &NodeId)> {
        self.cse.iter()
    }

    // ---- gradient-scope control-flow lock ----------------------------

    /// While locked, staged control flow (`staged_if`, loops, functions)
    /// is refused; tensor kernels lift the lock for their own loops.
    pub fn lock_control_flow(&mut self) {
        self.grad_locked += 1;
    }

    pub fn unlock_control_flow(&mut self) {
        debug_assert!(self.grad_locked > 0);
        self.grad_locked -= 1;
    }

    pub fn with_kernel_unlock<R>(&mut self, f: impl FnOnce(&mut Stager) -> R) -> R {
        self.kernel_unlock += 1;
        let r = f(self);
        self.kernel_unlock -= 1;
        r
    }

    fn check_control_flow(&self, what: &'static str) -> Result<()> {
        if self.grad_locked > 0 && self.kernel_unlock == 0 {
            Err(StageError::ControlFlowInGradScope(what))
        } else {
            Ok(())
        }
    }

    // ---- node table primitives ---------------------------------------

    /// Appends a node after checking the operand invariants: ids strictly
    /// below the new id and scopes visible from the current position
    /// (enclosing chain or a block owned by the node being created).
    pub(crate) fn add_node(
        &mut self,
        op: Op,
        operands: Vec<NodeId>,
        imms: Vec<Imm>,
        effect: Effect,
        own_blocks: &[NodeId],
    ) -> Result<NodeId> {
        let id = NodeId(self.g.nodes.len() as u32);
        for &o in &operands {
            if o >= id {
                return Err(StageError::Internal(format!(
                    "operand {} not below new node {}",
                    o, id
                )));
            }
            let osc = self.g.node(o).scope;
            let visible = self.scopes.contains(&osc)
                || own_blocks.contains(&osc)
                || (self.g.node(o).op == Op::Block && own_blocks.contains(&o));
            if !visible {
                return Err(StageError::ScopeViolation { operand: o });
            }
        }
        let scope = self.current_scope();
        self.g.nodes.push(IrNode {
            op,
            operands,
            imms,
            effect,
            scope,
        });
        Ok(id)
    }

    fn region_ver(&self, region: NodeId) -> u64 {
        self.ver.get(&region).copied().unwrap_or(0)
    }

    fn bump(&mut self, region: NodeId) {
        *self.ver.entry(region).or_insert(0) += 1;
    }

    fn acc(&mut self) -> &mut EffAcc {
        self.effs.last_mut().expect("effect stack is never empty")
    }

    /// Pure node with scope-chain CSE and folding hooks already applied by
    /// the caller. `read_region` switches on version keying and limits the
    /// chain walk: merging across a replayed scope (loop body, while
    /// cond/body, function body) would observe stale values, so the walk
    /// stops there. Pure nodes only stop at function bodies, which keeps
    /// staged functions closed over their parameters.
    pub(crate) fn cse_node(
        &mut self,
        op: Op,
        operands: Vec<NodeId>,
        imms: Vec<Imm>,
        read_region: Option<NodeId>,
    ) -> Result<NodeId> {
        let ver = match read_region {
            Some(r) => (self.region_ver(r), self.epoch),
            None => (0, 0),
        };
        for (i, &s) in self.scopes.iter().enumerate().rev() {
            let key = CseKey {
                scope: s,
                op,
                operands: operands.clone(),
                imms: imms.clone(),
                ver,
            };
            if let Some(&hit) = self.cse.get(&key) {
                return Ok(hit);
            }
            if i == 0 {
                break;
            }
            let kind = self.g.block_kind(s);
            let barrier = match kind {
                BlockKind::FuncBody => true,
                BlockKind::LoopBody | BlockKind::WhileBody | BlockKind::WhileCond => {
                    read_region.is_some()
                }
                _ => false,
            };
            if barrier {
                break;
            }
        }
        let effect = match read_region {
            Some(r) => Effect::Read(r),
            None => Effect::Pure,
        };
        let id = self.add_node(op, operands.clone(), imms.clone(), effect, &[])?;
        if let Some(r) = read_region {
            self.acc().reads.insert(r);
        }
        let key = CseKey {
            scope: self.current_scope(),
            op,
            operands,
            imms,
            ver,
        };
        self.cse.insert(key, id);
        Ok(id)
    }

    /// Effectful node: appended unconditionally, never merged.
    pub(crate) fn write_node(
        &mut self,
        op: Op,
        operands: Vec<NodeId>,
        imms: Vec<Imm>,
        region: NodeId,
    ) -> Result<NodeId> {
        let id = self.add_node(op, operands, imms, Effect::Write(region), &[])?;
        self.bump(region);
        self.acc().writes.insert(region);
        Ok(id)
    }

    /// Allocation: a fresh effect region named by the new node itself.
    pub(crate) fn alloc_node(&mut self, op: Op, operands: Vec<NodeId>, imms: Vec<Imm>) -> Result<NodeId> {
        let id = NodeId(self.g.nodes.len() as u32);
        let id2 = self.add_node(op, operands, imms, Effect::Write(id), &[])?;
        debug_assert_eq!(id, id2);
        self.ver.insert(id, 1);
        let a = self.acc();
        a.writes.insert(id);
        a.allocs.insert(id);
        Ok(id)
    }

    pub(crate) fn global_node(&mut self, op: Op, operands: Vec<NodeId>, imms: Vec<Imm>) -> Result<NodeId> {
        let id = self.add_node(op, operands, imms, Effect::Global, &[])?;
        self.epoch += 1;
        self.acc().global = true;
        Ok(id)
    }

    // ---- constants ----------------------------------------------------

    pub(crate) fn const_node(&mut self, imm: Imm, stype: Stype) -> Result<StagedValue> {
        let node = self.cse_node(Op::Const, vec![], vec![imm], None)?;
        Ok(StagedValue { node, stype })
    }

    pub fn const_i64(&mut self, v: i64) -> StagedValue {
        self.const_node(Imm::I(v), Stype::I64)
            .expect("constants cannot fail")
    }

    pub fn const_f64(&mut self, v: f64) -> StagedValue {
        self.const_node(Imm::F(v), Stype::F64)
            .expect("constants cannot fail")
    }

    pub fn const_bool(&mut self, v: bool) -> StagedValue {
        self.const_node(Imm::B(v), Stype::Bool)
            .expect("constants cannot fail")
    }

    /// Immutable constant array embedded in the program.
    pub fn const_arr_f64(&mut self, vals: Vec<f64>) -> Result<StagedValue> {
        let node = self.cse_node(Op::ConstArrF, vec![], vec![Imm::FVec(vals)], None)?;
        Ok(StagedValue {
            node,
            stype: Stype::arr(Stype::F64),
        })
    }

    pub fn const_arr_i64(&mut self, vals: Vec<i64>) -> Result<StagedValue> {
        let node = self.cse_node(Op::ConstArrI, vec![], vec![Imm::IVec(vals)], None)?;
        Ok(StagedValue {
            node,
            stype: Stype::arr(Stype::I64),
        })
    }

    /// Program argument read as int64 (position `idx` on the command line).
    pub fn arg_i64(&mut self, idx: usize) -> Result<StagedValue> {
        let node = self.cse_node(Op::ArgI64, vec![], vec![Imm::U(idx)], None)?;
        Ok(StagedValue {
            node,
            stype: Stype::I64,
        })
    }

    pub(crate) fn const_imm_of(&self, n: NodeId) -> Option<&Imm> {
        let node = self.g.node(n);
        if node.op == Op::Const {
            node.imms.first()
        } else {
            None
        }
    }

    // ---- primitives with folding --------------------------------------

    /// Stages a scalar primitive. Operand types are checked against the
    /// op signature; all-constant operands fold in the current stage;
    /// exact algebraic identities (x*1, x+0 on int64, x*1.0 on float64)
    /// collapse to their operand. Surviving nodes are CSE'd.
    pub fn prim(&mut self, op: Op, args: &[StagedValue]) -> Result<StagedValue> {
        let stype = prim_sig(op, args)?;
        let operands: Vec<NodeId> = args.iter().map(|a| a.node).collect();
        match self.fold(op, &operands) {
            Folded::Val(imm) => return self.const_node(imm, stype),
            Folded::Alias(n) => {
                // The alias keeps the pre-checked result type: identities
                // never change the type of the surviving operand.
                return Ok(StagedValue { node: n, stype });
            }
            Folded::No => {}
        }
        let node = self.cse_node(op, operands, vec![], None)?;
        Ok(StagedValue { node, stype })
    }

    /// Folding + CSE entry without type checking, for rebuilding graphs
    /// whose types were already checked when first staged.
    pub(crate) fn prim_raw(&mut self, op: Op, operands: Vec<NodeId>) -> Result<NodeId> {
        match self.fold(op, &operands) {
            Folded::Val(imm) => {
                let st = match &imm {
                    Imm::I(_) => Stype::I64,
                    Imm::F(_) => Stype::F64,
                    Imm::B(_) => Stype::Bool,
                    other => {
                        return Err(StageError::Internal(format!(
                            "folded {} to non-scalar {:?}",
                            op.name(),
                            other
                        )))
                    }
                };
                Ok(self.const_node(imm, st)?.node)
            }
            Folded::Alias(n) => Ok(n),
            Folded::No => self.cse_node(op, operands, vec![], None),
        }
    }

    fn fold(&self, op: Op, operands: &[NodeId]) -> Folded {
        use Imm::*;
        let c = |i: usize| self.const_imm_of(operands[i]);
        let both = || match (c(0), c(1)) {
            (Some(a), Some(b)) => Some((a.clone(), b.clone())),
            _ => None,
        };
        match op {
            Op::Add | Op::Sub | Op::Mul | Op::Div | Op::Rem => {
                if let Some((a, b)) = both() {
                    match (a, b, op) {
                        (I(a), I(b), Op::Add) => return Folded::Val(I(a.wrapping_add(b))),
                        (I(a), I(b), Op::Sub) => return Folded::Val(I(a.wrapping_sub(b))),
                        (I(a), I(b), Op::Mul) => return Folded::Val(I(a.wrapping_mul(b))),
                        (I(a), I(b), Op::Div) if b != 0 && !(a == i64::MIN && b == -1) => {
                            return Folded::Val(I(a / b))
                        }
                        (I(a), I(b), Op::Rem) if b != 0 && !(a == i64::MIN && b == -1) => {
                            return Folded::Val(I(a % b))
                        }
                        (F(a), F(b), Op::Add) => return Folded::Val(F(a + b)),
                        (F(a), F(b), Op::Sub) => return Folded::Val(F(a - b)),
                        (F(a), F(b), Op::Mul) => return Folded::Val(F(a * b)),
                        (F(a), F(b), Op::Div) => return Folded::Val(F(a / b)),
                        _ => {}
                    }
                }
                // Exact identities. Float addition of zero is not among
                // them: -0.0 + 0.0 flips the sign of zero.
                let int_const = |i: usize, v: i64| matches!(c(i), Some(I(x)) if *x == v);
                let one_f = |i: usize| matches!(c(i), Some(F(x)) if x.to_bits() == 1.0f64.to_bits());
                match op {
                    Op::Add => {
                        if int_const(0, 0) {
                            return Folded::Alias(operands[1]);
                        }
                        if int_const(1, 0) {
                            return Folded::Alias(operands[0]);
                        }
                    }
                    Op::Sub => {
                        if int_const(1, 0) {
                            return Folded::Alias(operands[0]);
                        }
                    }
                    Op::Mul => {
                        if int_const(0, 1) || one_f(0) {
                            return Folded::Alias(operands[1]);
                        }
                        if int_const(1, 1) || one_f(1) {
                            return Folded::Alias(operands[0]);
                        }
                        if int_const(0, 0) || int_const(1, 0) {
                            return Folded::Val(I(0));
                        }
                    }
                    Op::Div
                        if (int_const(1, 1) || one_f(1)) => {
                            return Folded::Alias(operands[0]);
                        }
                    _ => {}
                }
                Folded::No
            }
            Op::Neg => match c(0) {
                Some(I(a)) => Folded::Val(I(a.wrapping_neg())),
                Some(F(a)) => Folded::Val(F(-a)),
                _ => Folded::No,
            },
            Op::Eq | Op::Ne | Op::Lt | Op::Le | Op::Gt | Op::Ge => {
                if let Some((a, b)) = both() {
                    let r = match (a, b) {
                        (I(a), I(b)) => Some(match op {
                            Op::Eq => a == b,
                            Op::Ne => a != b,
                            Op::Lt => a < b,
                            Op::Le => a <= b,
                            Op::Gt => a > b,
                            _ => a >= b,
                        }),
                        (F(a), F(b)) => Some(match op {
                            Op::Eq => a == b,
                            Op::Ne => a != b,
                            Op::Lt => a < b,
                            Op::Le => a <= b,
                            Op::Gt => a > b,
                            _ => a >= b,
                        }),
                        _ => None,
                    };
                    if let Some(v) = r {
                        return Folded::Val(B(v));
                    }
                }
                Folded::No
            }
            Op::And => match (c(0), c(1)) {
                (Some(B(true)), _) => Folded::Alias(operands[1]),
                (_, Some(B(true))) => Folded::Alias(operands[0]),
                (Some(B(false)), _) | (_, Some(B(false))) => Folded::Val(B(false)),
                _ => Folded::No,
            },
            Op::Or => match (c(0), c(1)) {
                (Some(B(false)), _) => Folded::Alias(operands[1]),
                (_, Some(B(false))) => Folded::Alias(operands[0]),
                (Some(B(true)), _) | (_, Some(B(true))) => Folded::Val(B(true)),
                _ => Folded::No,
            },
            Op::Not => match c(0) {
                Some(B(a)) => Folded::Val(B(!a)),
                _ => Folded::No,
            },
            Op::Select => match c(0) {
                Some(B(true)) => Folded::Alias(operands[1]),
                Some(B(false)) => Folded::Alias(operands[2]),
                _ => Folded::No,
            },
            Op::IntToFloat => match c(0) {
                Some(I(a)) => Folded::Val(F(*a as f64)),
                _ => Folded::No,
            },
            Op::Exp => match c(0) {
                Some(F(a)) => Folded::Val(F(crate::numeric::kexp(*a))),
                _ => Folded::No,
            },
            _ => Folded::No,
        }
    }

    // Convenience wrappers over `prim`.

    pub fn add(&mut self, a: &StagedValue, b: &StagedValue) -> Result<StagedValue> {
        self.prim(Op::Add, &[a.clone(), b.clone()])
    }

    pub fn sub(&mut self, a: &StagedValue, b: &StagedValue) -> Result<StagedValue> {
        self.prim(Op::Sub, &[a.clone(), b.clone()])
    }

    pub fn mul(&mut self, a: &StagedValue, b: &StagedValue) -> Result<StagedValue> {
        self.prim(Op::Mul, &[a.clone(), b.clone()])
    }

    pub fn div(&mut self, a: &StagedValue, b: &StagedValue) -> Result<StagedValue> {
        self.prim(Op::Div, &[a.clone(), b.clone()])
    }

    pub fn rem(&mut self, a: &StagedValue, b: &StagedValue) -> Result<StagedValue> {
        self.prim(Op::Rem, &[a.clone(), b.clone()])
    }

    pub fn neg(&mut self, a: &StagedValue) -> Result<StagedValue> {
        self.prim(Op::Neg, std::slice::from_ref(a))
    }

    pub fn eq(&mut self, a: &StagedValue, b: &StagedValue) -> Result<StagedValue> {
        self.prim(Op::Eq, &[a.clone(), b.clone()])
    }

    pub fn ne(&mut self, a: &StagedValue, b: &StagedValue) -> Result<StagedValue> {
        self.prim(Op::Ne, &[a.clone(), b.clone()])
    }

    pub fn lt(&mut self, a: &StagedValue, b: &StagedValue) -> Result<StagedValue> {
        self.prim(Op::Lt, &[a.clone(), b.clone()])
    }

    pub fn le(&mut self, a: &StagedValue, b: &StagedValue) -> Result<StagedValue> {
        self.prim(Op::Le, &[a.clone(), b.clone()])
    }

    pub fn gt(&mut self, a: &StagedValue, b: &StagedValue) -> Result<StagedValue> {
        self.prim(Op::Gt, &[a.clone(), b.clone()])
    }

    pub fn ge(&mut self, a: &StagedValue, b: &StagedValue) -> Result<StagedValue> {
        self.prim(Op::Ge, &[a.clone(), b.clone()])
    }

    pub fn and(&mut self, a: &StagedValue, b: &StagedValue) -> Result<StagedValue> {
        self.prim(Op::And, &[a.clone(), b.clone()])
    }

    pub fn or(&mut self, a: &StagedValue, b: &StagedValue) -> Result<StagedValue> {
        self.prim(Op::Or, &[a.clone(), b.clone()])
    }

    pub fn not(&mut self, a: &StagedValue) -> Result<StagedValue> {
        self.prim(Op::Not, std::slice::from_ref(a))
    }

    pub fn select(&mut self, c: &StagedValue, a: &StagedValue, b: &StagedValue) -> Result<StagedValue> {
        self.prim(Op::Select, &[c.clone(), a.clone(), b.clone()])
    }

    pub fn i2f(&mut self, a: &StagedValue) -> Result<StagedValue> {
        self.prim(Op::IntToFloat, std::slice::from_ref(a))
    }

    pub fn exp(&mut self, a: &StagedValue) -> Result<StagedValue> {
        self.prim(Op::Exp, std::slice::from_ref(a))
    }

    // ---- arrays --------------------------------------------------------

    fn expect_ty(v: &StagedValue, want: &Stype, op: &str) -> Result<()> {
        if &v.stype == want {
            Ok(())
        } else {
            Err(StageError::TypeMismatch {
                op: op.into(),
                expected: want.to_string(),
                got: v.stype.to_string(),
            })
        }
    }

    fn expect_arr(v: &StagedValue, op: &str) -> Result<Stype> {
        match &v.stype {
            Stype::Arr(e) => Ok((**e).clone()),
            other => Err(StageError::TypeMismatch {
                op: op.into(),
                expected: "array-of(_)".into(),
                got: other.to_string(),
            }),
        }
    }

    /// Fixed-length zero-initialized array.
    pub fn arr_new(&mut self, len: &StagedValue, elem: ScalarTy) -> Result<StagedValue> {
        Self::expect_ty(len, &Stype::I64, "arr_new length")?;
        let node = self.alloc_node(Op::ArrNew, vec![len.node], vec![Imm::Ty(elem)])?;
        let e = match elem {
            ScalarTy::I64 => Stype::I64,
            ScalarTy::F64 => Stype::F64,
        };
        Ok(StagedValue {
            node,
            stype: Stype::arr(e),
        })
    }

    /// Growable array, initially empty. Appends double the capacity
    /// starting from 1024 in the compiled runtime.
    pub fn arr_new_grow(&mut self, elem: ScalarTy) -> Result<StagedValue> {
        let node = self.alloc_node(Op::ArrNewGrow, vec![], vec![Imm::Ty(elem)])?;
        let e = match elem {
            ScalarTy::I64 => Stype::I64,
            ScalarTy::F64 => Stype::F64,
        };
        Ok(StagedValue {
            node,
            stype: Stype::arr(e),
        })
    }

    /// Mutable array initialized from an embedded constant array.
    pub fn arr_from_const(&mut self, src: &StagedValue) -> Result<StagedValue> {
        let elem = Self::expect_arr(src, "arr_from_const")?;
        let sop = self.g.node(src.node).op;
        if sop != Op::ConstArrF && sop != Op::ConstArrI {
            return Err(StageError::TypeMismatch {
                op: "arr_from_const".into(),
                expected: "constant array".into(),
                got: format!("{} node", sop.name()),
            });
        }
        let node = self.alloc_node(Op::ArrFromConst, vec![src.node], vec![])?;
        Ok(StagedValue {
            node,
            stype: Stype::arr(elem),
        })
    }

    pub fn arr_get(&mut self, arr: &StagedValue, idx: &StagedValue) -> Result<StagedValue> {
        let elem = Self::expect_arr(arr, "arr_get")?;
        Self::expect_ty(idx, &Stype::I64, "arr_get index")?;
        let node = self.cse_node(Op::ArrGet, vec![arr.node, idx.node], vec![], Some(arr.node))?;
        Ok(StagedValue { node, stype: elem })
    }

    pub fn arr_set(
        &mut self,
        arr: &StagedValue,
        idx: &StagedValue,
        val: &StagedValue,
    ) -> Result<()> {
        let elem = Self::expect_arr(arr, "arr_set")?;
        Self::expect_ty(idx, &Stype::I64, "arr_set index")?;
        Self::expect_ty(val, &elem, "arr_set value")?;
        self.write_node(
            Op::ArrSet,
            vec![arr.node, idx.node, val.node],
            vec![],
            arr.node,
        )?;
        Ok(())
    }

    pub fn arr_push(&mut self, arr: &StagedValue, val: &StagedValue) -> Result<()> {
        let elem = Self::expect_arr(arr, "arr_push")?;
        Self::expect_ty(val, &elem, "arr_push value")?;
        if self.g.node(arr.node).op != Op::ArrNewGrow {
            return Err(StageError::TypeMismatch {
                op: "arr_push".into(),
                expected: "growable array".into(),
                got: format!("{} node", self.g.node(arr.node).op.name()),
            });
        }
        self.write_node(Op::ArrPush, vec![arr.node, val.node], vec![], arr.node)?;
        Ok(())
    }

    pub fn arr_len(&mut self, arr: &StagedValue) -> Result<StagedValue> {
        Self::expect_arr(arr, "arr_len")?;
        let node = self.cse_node(Op::ArrLen, vec![arr.node], vec![], Some(arr.node))?;
        Ok(StagedValue {
            node,
            stype: Stype::I64,
        })
    }

    // ---- mutable scalar cells ------------------------------------------

    pub fn var_new(&mut self, init: &StagedValue) -> Result<VarRef> {
        match init.stype {
            Stype::I64 | Stype::F64 | Stype::Bool => {}
            _ => {
                return Err(StageError::TypeMismatch {
                    op: "var_new".into(),
                    expected: "scalar".into(),
                    got: init.stype.to_string(),
                })
            }
        }
        let node = self.alloc_node(Op::VarNew, vec![init.node], vec![])?;
        Ok(VarRef {
            node,
            ty: init.stype.clone(),
        })
    }

    pub fn var_get(&mut self, v: &VarRef) -> Result<StagedValue> {
        let node = self.cse_node(Op::VarGet, vec![v.node], vec![], Some(v.node))?;
        Ok(StagedValue {
            node,
            stype: v.ty.clone(),
        })
    }

    pub fn var_set(&mut self, v: &VarRef, val: &StagedValue) -> Result<()> {
        Self::expect_ty(val, &v.ty, "var_set")?;
        self.write_node(Op::VarSet, vec![v.node, val.node], vec![], v.node)?;
        Ok(())
    }

    // ---- hash table: composite key -> dense first-seen index -----------

    /// Hash table mapping composite scalar keys to dense indices assigned
    /// in first-seen order. Backs joins and grouping.
    pub fn hash_new(&mut self, key_tys: &[ScalarTy]) -> Result<StagedValue> {
        let imms = key_tys.iter().map(|t| Imm::Ty(*t)).collect();
        let node = self.alloc_node(Op::HashNew, vec![], imms)?;
        Ok(StagedValue {
            node,
            stype: Stype::Dict,
        })
    }

    fn check_keys(&self, d: &StagedValue, keys: &[StagedValue], op: &str) -> Result<Vec<NodeId>> {
        Self::expect_ty(d, &Stype::Dict, op)?;
        let tys: Vec<ScalarTy> = self
            .g
            .node(d.node)
            .imms
            .iter()
            .filter_map(|i| match i {
                Imm::Ty(t) => Some(*t),
                _ => None,
            })
            .collect();
        if tys.len() != keys.len() {
            return Err(StageError::ArityMismatch {
                op: op.into(),
                expected: tys.len(),
                got: keys.len(),
            });
        }
        for (k, t) in keys.iter().zip(&tys) {
            let want = match t {
                ScalarTy::I64 => Stype::I64,
                ScalarTy::F64 => Stype::F64,
            };
            Self::expect_ty(k, &want, op)?;
        }
        Ok(keys.iter().map(|k| k.node).collect())
    }

    /// Returns the key's dense index, inserting it with index = current
    /// size when absent.
    pub fn hash_upsert(&mut self, d: &StagedValue, keys: &[StagedValue]) -> Result<StagedValue> {
        let mut ops = self.check_keys(d, keys, "hash_upsert")?;
        ops.insert(0, d.node);
        let node = self.write_node(Op::HashUpsert, ops, vec![], d.node)?;
        Ok(StagedValue {
            node,
            stype: Stype::I64,
        })
    }

    /// Returns the key's dense index or -1 when absent.
    pub fn hash_lookup(&mut self, d: &StagedValue, keys: &[StagedValue]) -> Result<StagedValue> {
        let mut ops = self.check_keys(d, keys, "hash_lookup")?;
        ops.insert(0, d.node);
        let node = self.cse_node(Op::HashLookup, ops, vec![], Some(d.node))?;
        Ok(StagedValue {
            node,
            stype: Stype::I64,
        })
    }

    pub fn hash_len(&mut self, d: &StagedValue) -> Result<StagedValue> {
        Self::expect_ty(d, &Stype::Dict, "hash_len")?;
        let node = self.cse_node(Op::HashLen, vec![d.node], vec![], Some(d.node))?;
        Ok(StagedValue {
            node,
            stype: Stype::I64,
        })
    }

    // ---- csv ingestion --------------------------------------------------

    pub fn csv_open(&mut self, spec: CsvSpec) -> Result<StagedValue> {
        let node = self.global_node(Op::CsvOpen, vec![], vec![Imm::Csv(spec)])?;
        Ok(StagedValue {
            node,
            stype: Stype::Src,
        })
    }

    fn csv_spec_of(&self, src: NodeId) -> Result<&CsvSpec> {
        match self.g.node(src).imms.first() {
            Some(Imm::Csv(s)) => Ok(s),
            _ => Err(StageError::Internal(format!(
                "node {} is not a csv source",
                src
            ))),
        }
    }

    /// Column of a loaded csv source as an array. String columns surface
    /// as int64 dictionary codes.
    pub fn csv_col(&mut self, src: &StagedValue, idx: usize) -> Result<StagedValue> {
        Self::expect_ty(src, &Stype::Src, "csv_col")?;
        let spec = self.csv_spec_of(src.node)?;
        if idx >= spec.cols.len() {
            return Err(StageError::ArityMismatch {
                op: "csv_col".into(),
                expected: spec.cols.len(),
                got: idx,
            });
        }
        let elem = match spec.cols[idx].ty {
            ColKind::F64 => Stype::F64,
            ColKind::I64 | ColKind::Str => Stype::I64,
        };
        let node = self.cse_node(Op::CsvCol, vec![src.node], vec![Imm::U(idx)], None)?;
        Ok(StagedValue {
            node,
            stype: Stype::arr(elem),
        })
    }

    pub fn csv_rows(&mut self, src: &StagedValue) -> Result<StagedValue> {
        Self::expect_ty(src, &Stype::Src, "csv_rows")?;
        let node = self.cse_node(Op::CsvRows, vec![src.node], vec![], None)?;
        Ok(StagedValue {
            node,
            stype: Stype::I64,
        })
    }

    // ---- output and instrumentation --------------------------------------

    /// Prints one comma-separated output row. Values must match the format
    /// list; string columns take the int64 dictionary code and decode
    /// through the embedded table.
    pub fn print_row(&mut self, vals: &[StagedValue], fmts: Vec<PrintFmt>) -> Result<()> {
        if vals.len() != fmts.len() {
            return Err(StageError::ArityMismatch {
                op: "print_row".into(),
                expected: fmts.len(),
                got: vals.len(),
            });
        }
        for (v, f) in vals.iter().zip(&fmts) {
            let want = match f {
                PrintFmt::F64 => Stype::F64,
                PrintFmt::I64 | PrintFmt::Str(_) => Stype::I64,
            };
            Self::expect_ty(v, &want, "print_row")?;
        }
        let ops = vals.iter().map(|v| v.node).collect();
        self.global_node(Op::PrintRow, ops, vec![Imm::Fmt(fmts)])?;
        Ok(())
    }

    /// Bumps a named runtime counter (kernel invocations and the like).
    pub fn tick(&mut self, name: &str) -> Result<()> {
        self.global_node(Op::Tick, vec![], vec![Imm::S(name.into())])?;
        Ok(())
    }

    /// Records the elapsed time since program start under a phase name.
    pub fn phase_mark(&mut self, name: &str) -> Result<()> {
        self.global_node(Op::PhaseMark, vec![], vec![Imm::S(name.into())])?;
        Ok(())
    }

    // ---- batched kernels -------------------------------------------------

    /// Single-node matrix multiply writing into a preallocated output:
    /// out[m,n] = a[m,k] * b[k,n]. The backend decides whether this lowers
    /// to the builtin loop kernel or an external BLAS call.
    pub fn kernel_matmul(
        &mut self,
        a: &StagedValue,
        b: &StagedValue,
        out: &StagedValue,
        m: &StagedValue,
        k: usize,
        n: usize,
    ) -> Result<()> {
        for (v, name) in [(a, "kernel_matmul a"), (b, "kernel_matmul b"), (out, "kernel_matmul out")] {
            Self::expect_ty(v, &Stype::arr(Stype::F64), name)?;
        }
        Self::expect_ty(m, &Stype::I64, "kernel_matmul m")?;
        self.write_node(
            Op::KernelMatmul,
            vec![a.node, b.node, out.node, m.node],
            vec![Imm::U(k), Imm::U(n)],
            out.node,
        )?;
        Ok(())
    }

    /// Single-node elementwise max(x, 0) into a preallocated output.
    pub fn kernel_relu(
        &mut self,
        x: &StagedValue,
        out: &StagedValue,
        len: &StagedValue,
    ) -> Result<()> {
        Self::expect_ty(x, &Stype::arr(Stype::F64), "kernel_relu x")?;
        Self::expect_ty(out, &Stype::arr(Stype::F64), "kernel_relu out")?;
        Self::expect_ty(len, &Stype::I64, "kernel_relu length")?;
        self.write_node(
            Op::KernelRelu,
            vec![x.node, out.node, len.node],
            vec![],
            out.node,
        )?;
        Ok(())
    }

    // ---- structured control flow ------------------------------------------

    pub(crate) fn begin_block(&mut self, kind: BlockKind) -> Result<NodeId> {
        let b = self.add_node(Op::Block, vec![], vec![Imm::Kind(kind)], Effect::Pure, &[])?;
        self.scopes.push(b);
        self.effs.push(EffAcc::default());
        Ok(b)
    }

    /// Ends the innermost block. Effects on regions allocated inside stay
    /// private; the rest merges into the enclosing accumulator unless the
    /// block is a function body (functions act at call sites, not where
    /// they are defined).
    pub(crate) fn pop_block(&mut self, merge: bool) -> ExtEff {
        let acc = self.effs.pop().expect("matching begin_block");
        self.scopes.pop();
        let ext = ExtEff {
            reads: acc.reads.difference(&acc.allocs).copied().collect(),
            writes: acc.writes.difference(&acc.allocs).copied().collect(),
            global: acc.global,
        };
        if merge {
            let top = self.acc();
            top.reads.extend(ext.reads.iter().copied());
            top.writes.extend(ext.writes.iter().copied());
            top.global |= ext.global;
        }
        ext
    }

    /// Stages a conditional. A constant condition runs only the taken
    /// builder, directly in the current scope. Otherwise both builders run
    /// in fresh sibling scopes and must yield the same type.
    pub fn staged_if<FT, FE>(
        &mut self,
        cond: &StagedValue,
        then_b: FT,
        else_b: FE,
    ) -> Result<StagedValue>
    where
        FT: FnOnce(&mut Stager) -> Result<StagedValue>,
        FE: FnOnce(&mut Stager) -> Result<StagedValue>,
    {
        Self::expect_ty(cond, &Stype::Bool, "staged_if condition")?;
        if let Some(Imm::B(c)) = self.const_imm_of(cond.node).cloned() {
            // Nothing structural is staged: only the taken builder runs,
            // so the gradient-scope lock has nothing to guard here.
            return if c { then_b(self) } else { else_b(self) };
        }
        self.check_control_flow("staged_if")?;
        let tb = self.begin_block(BlockKind::IfThen)?;
        let tv = then_b(self)?;
        let text = self.pop_block(true);
        let eb = self.begin_block(BlockKind::IfElse)?;
        let ev = else_b(self)?;
        let eext = self.pop_block(true);
        if tv.stype != ev.stype {
            return Err(StageError::BranchTypeMismatch {
                then_ty: tv.stype,
                else_ty: ev.stype,
            });
        }
        let effect = text.union(eext).condense();
        let (operands, own): (Vec<NodeId>, Vec<NodeId>) = if tv.stype == Stype::Unit {
            (vec![cond.node, tb, eb], vec![tb, eb])
        } else {
            (vec![cond.node, tb, eb, tv.node, ev.node], vec![tb, eb])
        };
        let node = self.add_node(Op::If, operands, vec![], effect, &own)?;
        Ok(StagedValue {
            node,
            stype: tv.stype,
        })
    }

    /// Convenience: conditional with no result and no else branch.
    pub fn staged_when<FT>(&mut self, cond: &StagedValue, then_b: FT) -> Result<()>
    where
        FT: FnOnce(&mut Stager) -> Result<()>,
    {
        let unit = self.unit();
        self.staged_if(
            cond,
            |s| {
                then_b(s)?;
                Ok(s.unit())
            },
            |_| Ok(unit),
        )?;
        Ok(())
    }

    /// Stages a counted loop; the body builder receives the int64
    /// iteration index. A constant-zero count still stages the loop node:
    /// control structure is never speculatively elided.
    pub fn staged_loop<F>(&mut self, count: &StagedValue, body: F) -> Result<()>
    where
        F: FnOnce(&mut Stager, &StagedValue) -> Result<()>,
    {
        self.check_control_flow("staged_loop")?;
        Self::expect_ty(count, &Stype::I64, "staged_loop count")?;
        let blk = self.begin_block(BlockKind::LoopBody)?;
        let idx_node = self.cse_node(Op::LoopIdx, vec![blk], vec![], None)?;
        let idx = StagedValue {
            node: idx_node,
            stype: Stype::I64,
        };
        body(self, &idx)?;
        let ext = self.pop_block(true);
        let effect = ext.condense();
        self.add_node(Op::Loop, vec![count.node, blk], vec![], effect, &[blk])?;
        Ok(())
    }

    /// Stages a while loop. The condition builder runs in its own scope
    /// and is re-evaluated before every iteration.
    pub fn staged_while<FC, FB>(&mut self, cond_b: FC, body_b: FB) -> Result<()>
    where
        FC: FnOnce(&mut Stager) -> Result<StagedValue>,
        FB: FnOnce(&mut Stager) -> Result<()>,
    {
        self.check_control_flow("staged_while")?;
        let cb = self.begin_block(BlockKind::WhileCond)?;
        let cv = cond_b(self)?;
        let cext = self.pop_block(true);
        Self::expect_ty(&cv, &Stype::Bool, "staged_while condition")?;
        let bb = self.begin_block(BlockKind::WhileBody)?;
        body_b(self)?;
        let bext = self.pop_block(true);
        let effect = cext.union(bext).condense();
        self.add_node(
            Op::While,
            vec![cb, cv.node, bb],
            vec![],
            effect,
            &[cb, bb],
        )?;
        Ok(())
    }

    /// Stages a function definition at the root scope. The body builder
    /// receives one staged value per parameter. Functions are closed over
    /// their parameters: the CSE chain never crosses a function-body
    /// boundary, and capturing outer values explicitly is legal but makes
    /// the function unusable as a pooled kernel. Recursion is impossible
    /// by construction: the name is only registered once the body is
    /// complete.
    pub fn staged_func<F>(
        &mut self,
        name: &str,
        params: &[Stype],
        no_inline: bool,
        body: F,
    ) -> Result<FuncHandle>
    where
        F: FnOnce(&mut Stager, &[StagedValue]) -> Result<StagedValue>,
    {
        self.check_control_flow("staged_func")?;
        if self.current_scope() != self.g.root() {
            return Err(StageError::FuncNotAtRoot(name.into()));
        }
        if self.funcs.contains_key(name) {
            return Err(StageError::DuplicateFunc(name.into()));
        }
        let blk = self.begin_block(BlockKind::FuncBody)?;
        let mut pvals = Vec::with_capacity(params.len());
        for (i, ty) in params.iter().enumerate() {
            let node = self.add_node(
                Op::Param,
                vec![blk],
                vec![Imm::U(i), Imm::St(ty.clone())],
                Effect::Pure,
                &[],
            )?;
            pvals.push(StagedValue {
                node,
                stype: ty.clone(),
            });
        }
        let result = body(self, &pvals)?;
        let ext = self.pop_block(false);
        let body_size = self.g.len() - blk.idx() - 1;
        let mut operands = vec![blk];
        operands.extend(pvals.iter().map(|p| p.node));
        if result.stype != Stype::Unit {
            operands.push(result.node);
        }
        let imms = func_imms(name, params.len(), no_inline, &result.stype, &ext, body_size);
        let node = self.add_node(Op::FuncDef, operands, imms, Effect::Pure, &[blk])?;
        let info = FuncInfo {
            node,
            body_block: blk,
            params: pvals.iter().map(|p| (p.node, p.stype.clone())).collect(),
            result: result.stype,
            body_size,
            no_inline,
            ext,
        };
        self.funcs.insert(name.into(), info);
        self.func_names.insert(node, name.into());
        Ok(FuncHandle {
            node,
            name: name.into(),
        })
    }

    /// Stages a call. The effect is the callee's summary with parameter
    /// regions substituted by the argument arrays, so a function that only
    /// touches its own locals stays pure and repeated identical calls
    /// merge.
    pub fn call(&mut self, f: &FuncHandle, args: &[StagedValue]) -> Result<StagedValue> {
        let info = self
            .funcs
            .get(&f.name)
            .cloned()
            .ok_or_else(|| StageError::UnknownFunc(f.name.clone()))?;
        if args.len() != info.params.len() {
            return Err(StageError::ArityMismatch {
                op: format!("call {}", f.name),
                expected: info.params.len(),
                got: args.len(),
            });
        }
        for (a, (_, ty)) in args.iter().zip(&info.params) {
            Self::expect_ty(a, ty, &format!("call {}", f.name))?;
        }
        let mut operands = vec![info.node];
        operands.extend(args.iter().map(|a| a.node));
        let param_pos: HashMap<NodeId, usize> = info
            .params
            .iter()
            .enumerate()
            .map(|(i, (n, _))| (*n, i))
            .collect();
        let map_region = |r: NodeId| -> NodeId {
            match param_pos.get(&r) {
                Some(&i) => args[i].node,
                None => r,
            }
        };
        let reads: BTreeSet<NodeId> = info.ext.reads.iter().map(|&r| map_region(r)).collect();
        let writes: BTreeSet<NodeId> = info.ext.writes.iter().map(|&r| map_region(r)).collect();
        let node = self.emit_effectful_call(
            operands,
            &ExtEff {
                reads,
                writes,
                global: info.ext.global,
            },
            &info.result,
        )?;
        Ok(StagedValue {
            node,
            stype: info.result,
        })
    }

    /// Shared call emission: classifies the mapped summary and picks the
    /// strongest merge-friendly path that stays sound.
    pub(crate) fn emit_effectful_call(
        &mut self,
        operands: Vec<NodeId>,
        ext: &ExtEff,
        result: &Stype,
    ) -> Result<NodeId> {
        if ext.global {
            return self.global_node(Op::Call, operands, vec![]);
        }
        if !ext.writes.is_empty() {
            let first = *ext.writes.iter().next().expect("non-empty");
            let id = self.add_node(Op::Call, operands, vec![], Effect::Write(first), &[])?;
            for &w in &ext.writes {
                self.bump(w);
                self.acc().writes.insert(w);
            }
            for &r in &ext.reads {
                self.acc().reads.insert(r);
            }
            return Ok(id);
        }
        let fresh_identity = matches!(result, Stype::Arr(_) | Stype::Dict | Stype::Pool);
        if fresh_identity {
            // The result aliases storage allocated per call; merging two
            // calls would alias two logically distinct arrays.
            return self.add_node(Op::Call, operands, vec![], Effect::Pure, &[]);
        }
        match ext.reads.len() {
            0 => self.cse_node(Op::Call, operands, vec![], None),
            1 => {
                let r = *ext.reads.iter().next().expect("non-empty");
                self.cse_node(Op::Call, operands, vec![], Some(r))
            }
            _ => {
                // Version keying covers a single region; with several,
                // skip merging rather than under-key.
                let r = *ext.reads.iter().next().expect("non-empty");
                let id = self.add_node(Op::Call, operands, vec![], Effect::Read(r), &[])?;
                for &r in &ext.reads {
                    self.acc().reads.insert(r);
                }
                Ok(id)
            }
        }
    }

    // ---- batching worker pool ---------------------------------------------

    /// Free operand references of a function body: nodes outside the body
    /// subtree, not counting constants (those are position-independent).
    pub fn func_free_refs(&self, f: &FuncHandle) -> Result<Vec<NodeId>> {
        let info = self
            .funcs
            .get(&f.name)
            .ok_or_else(|| StageError::UnknownFunc(f.name.clone()))?;
        Ok(free_refs_of_body(&self.g, info.body_block))
    }

    /// Allocates the worker pool for pooled UDF execution. The kernel must
    /// be a closed function `(in: array f64, count: int64, out: array f64)
    /// -> unit` that touches nothing beyond its parameters and locals.
    pub fn pool_new(&mut self, cfg: PoolCfg, kernel: &FuncHandle) -> Result<StagedValue> {
        let info = self
            .funcs
            .get(&kernel.name)
            .cloned()
            .ok_or_else(|| StageError::UnknownFunc(kernel.name.clone()))?;
        let want = [
            Stype::arr(Stype::F64),
            Stype::I64,
            Stype::arr(Stype::F64),
        ];
        if info.params.len() != want.len()
            || info.params.iter().zip(&want).any(|((_, t), w)| t != w)
            || info.result != Stype::Unit
        {
            return Err(StageError::TypeMismatch {
                op: "pool_new kernel".into(),
                expected: "(array f64, int64, array f64) -> unit".into(),
                got: format!(
                    "({}) -> {}",
                    info.params
                        .iter()
                        .map(|(_, t)| t.to_string())
                        .collect::<Vec<_>>()
                        .join(", "),
                    info.result
                ),
            });
        }
        if !free_refs_of_body(&self.g, info.body_block).is_empty() {
            return Err(StageError::OpenKernel(kernel.name.clone()));
        }
        let param_set: BTreeSet<NodeId> = info.params.iter().map(|(n, _)| *n).collect();
        let touches_outside = info.ext.global
            || info.ext.writes.iter().any(|w| !param_set.contains(w))
            || info.ext.reads.iter().any(|r| !param_set.contains(r));
        if touches_outside {
            return Err(StageError::OpenKernel(kernel.name.clone()));
        }
        let node = self.alloc_node(Op::PoolNew, vec![info.node], vec![Imm::Pool(cfg)])?;
        Ok(StagedValue {
            node,
            stype: Stype::Pool,
        })
    }

    /// Hands one batch to the pool: the argument rows, the companion
    /// columns carried around the kernel, and the live row count. Contents
    /// are copied at the submission point; blocks while the queue is full.
    pub fn pool_submit(
        &mut self,
        pool: &StagedValue,
        in_arr: &StagedValue,
        comps: &[StagedValue],
        cnt: &StagedValue,
    ) -> Result<()> {
        Self::expect_ty(pool, &Stype::Pool, "pool_submit")?;
        Self::expect_ty(in_arr, &Stype::arr(Stype::F64), "pool_submit batch")?;
        Self::expect_ty(cnt, &Stype::I64, "pool_submit count")?;
        let cfg = self.pool_cfg_of(pool.node)?.clone();
        if comps.len() != cfg.comp.len() {
            return Err(StageError::ArityMismatch {
                op: "pool_submit companions".into(),
                expected: cfg.comp.len(),
                got: comps.len(),
            });
        }
        for (c, t) in comps.iter().zip(&cfg.comp) {
            let want = match t {
                ScalarTy::I64 => Stype::arr(Stype::I64),
                ScalarTy::F64 => Stype::arr(Stype::F64),
            };
            Self::expect_ty(c, &want, "pool_submit companion")?;
        }
        let mut ops = vec![pool.node, in_arr.node];
        ops.extend(comps.iter().map(|c| c.node));
        ops.push(cnt.node);
        self.write_node(Op::PoolSubmit, ops, vec![], pool.node)?;
        Ok(())
    }

    /// Closes the queue and joins the workers; afterwards batch results
    /// are readable in submission order.
    pub fn pool_finish(&mut self, pool: &StagedValue) -> Result<()> {
        Self::expect_ty(pool, &Stype::Pool, "pool_finish")?;
        self.write_node(Op::PoolFinish, vec![pool.node], vec![], pool.node)?;
        Ok(())
    }

    pub fn pool_batches(&mut self, pool: &StagedValue) -> Result<StagedValue> {
        Self::expect_ty(pool, &Stype::Pool, "pool_batches")?;
        let node = self.cse_node(Op::PoolBatches, vec![pool.node], vec![], Some(pool.node))?;
        Ok(StagedValue {
            node,
            stype: Stype::I64,
        })
    }

    pub fn pool_batch_len(&mut self, pool: &StagedValue, seq: &StagedValue) -> Result<StagedValue> {
        Self::expect_ty(pool, &Stype::Pool, "pool_batch_len")?;
        Self::expect_ty(seq, &Stype::I64, "pool_batch_len seq")?;
        let node = self.cse_node(
            Op::PoolBatchLen,
            vec![pool.node, seq.node],
            vec![],
            Some(pool.node),
        )?;
        Ok(StagedValue {
            node,
            stype: Stype::I64,
        })
    }

    pub fn pool_batch_out(&mut self, pool: &StagedValue, seq: &StagedValue) -> Result<StagedValue> {
        Self::expect_ty(pool, &Stype::Pool, "pool_batch_out")?;
        Self::expect_ty(seq, &Stype::I64, "pool_batch_out seq")?;
        let node = self.cse_node(
            Op::PoolBatchOut,
            vec![pool.node, seq.node],
            vec![],
            Some(pool.node),
        )?;
        Ok(StagedValue {
            node,
            stype: Stype::arr(Stype::F64),
        })
    }

    pub fn pool_batch_col(
        &mut self,
        pool: &StagedValue,
        seq: &StagedValue,
        idx: usize,
    ) -> Result<StagedValue> {
        Self::expect_ty(pool, &Stype::Pool, "pool_batch_col")?;
        Self::expect_ty(seq, &Stype::I64, "pool_batch_col seq")?;
        let cfg = self.pool_cfg_of(pool.node)?;
        if idx >= cfg.comp.len() {
            return Err(StageError::ArityMismatch {
                op: "pool_batch_col".into(),
                expected: cfg.comp.len(),
                got: idx,
            });
        }
        let elem = match cfg.comp[idx] {
            ScalarTy::I64 => Stype::I64,
            ScalarTy::F64 => Stype::F64,
        };
        let node = self.cse_node(
            Op::PoolBatchCol,
            vec![pool.node, seq.node],
            vec![Imm::U(idx)],
            Some(pool.node),
        )?;
        Ok(StagedValue {
            node,
            stype: Stype::arr(elem),
        })
    }

    fn pool_cfg_of(&self, pool: NodeId) -> Result<&PoolCfg> {
        match self.g.node(pool).imms.first() {
            Some(Imm::Pool(c)) => Ok(c),
            _ => Err(StageError::Internal(format!("node {} is not a pool", pool))),
        }
    }
}

/// Immediate layout of a function definition node. Definitions carry
/// their externally visible effect summary and body size so any later
/// pass can reason about calls from the graph alone.
pub(crate) fn func_imms(
    name: &str,
    nparams: usize,
    no_inline: bool,
    result: &Stype,
    ext: &ExtEff,
    body_size: usize,
) -> Vec<Imm> {
    vec![
        Imm::S(name.into()),
        Imm::U(nparams),
        Imm::B(no_inline),
        Imm::St(result.clone()),
        Imm::IVec(ext.reads.iter().map(|r| r.0 as i64).collect()),
        Imm::IVec(ext.writes.iter().map(|w| w.0 as i64).collect()),
        Imm::B(ext.global),
        Imm::U(body_size),
    ]
}

/// Metadata of a function definition node, decoded from its immediates
/// and operands.
#[derive(Clone, Debug)]
pub struct FuncMeta {
    pub name: String,
    pub body_block: NodeId,
    pub params: Vec<NodeId>,
    pub result: Stype,
    pub result_node: Option<NodeId>,
    pub no_inline: bool,
    pub ext_reads: Vec<NodeId>,
    pub ext_writes: Vec<NodeId>,
    pub ext_global: bool,
    pub body_size: usize,
}

pub fn func_meta(g: &IrGraph, f: NodeId) -> FuncMeta {
    let node = g.node(f);
    assert_eq!(node.op, Op::FuncDef, "node {} is not a function", f);
    let name = match &node.imms[0] {
        Imm::S(s) => s.clone(),
        _ => unreachable!("function name immediate"),
    };
    let nparams = match node.imms[1] {
        Imm::U(n) => n,
        _ => unreachable!("function arity immediate"),
    };
    let no_inline = matches!(node.imms[2], Imm::B(true));
    let result = match &node.imms[3] {
        Imm::St(t) => t.clone(),
        _ => unreachable!("function result immediate"),
    };
    let ids = |imm: &Imm| -> Vec<NodeId> {
        match imm {
            Imm::IVec(v) => v.iter().map(|&x| NodeId(x as u32)).collect(),
            _ => unreachable!("effect region immediate"),
        }
    };
    let ext_reads = ids(&node.imms[4]);
    let ext_writes = ids(&node.imms[5]);
    let ext_global = matches!(node.imms[6], Imm::B(true));
    let body_size = match node.imms[7] {
        Imm::U(n) => n,
        _ => unreachable!("function size immediate"),
    };
    let body_block = node.operands[0];
    let params = node.operands[1..1 + nparams].to_vec();
    let result_node = if result == Stype::Unit {
        None
    } else {
        Some(*node.operands.last().expect("result operand"))
    };
    FuncMeta {
        name,
        body_block,
        params,
        result,
        result_node,
        no_inline,
        ext_reads,
        ext_writes,
        ext_global,
        body_size,
    }
}

/// Operand references escaping a function body subtree, constants
/// excluded (the emitter materializes those in place).
pub(crate) fn free_refs_of_body(g: &IrGraph, body_block: NodeId) -> Vec<NodeId> {
    let mut inside: BTreeSet<NodeId> = BTreeSet::new();
    inside.insert(body_block);
    for id in g.ids() {
        if id <= body_block {
            continue;
        }
        if inside.contains(&g.node(id).scope) {
            inside.insert(id);
        }
    }
    let mut free = BTreeSet::new();
    for &id in inside.iter() {
        for &o in &g.node(id).operands {
            if !inside.contains(&o) {
                match g.node(o).op {
                    Op::Const | Op::ConstArrF | Op::ConstArrI => {}
                    _ => {
                        free.insert(o);
                    }
                }
            }
        }
    }
    free.into_iter().collect()
}

/// Result type of a scalar primitive given its argument types.
fn prim_sig(op: Op, args: &[StagedValue]) -> Result<Stype> {
    use Stype::*;
    let arity = match op {
        Op::Neg | Op::Not | Op::IntToFloat | Op::Exp => 1,
        Op::Select => 3,
        _ => 2,
    };
    if args.len() != arity {
        return Err(StageError::ArityMismatch {
            op: op.name().into(),
            expected: arity,
            got: args.len(),
        });
    }
    let t = |i: usize| &args[i].stype;
    let err = || {
        Err(StageError::TypeMismatch {
            op: op.name().into(),
            expected: "matching scalar operands".into(),
            got: args
                .iter()
                .map(|a| a.stype.to_string())
                .collect::<Vec<_>>()
                .join(", "),
        })
    };
    match op {
        Op::Add | Op::Sub | Op::Mul | Op::Div => match (t(0), t(1)) {
            (I64, I64) => Ok(I64),
            (F64, F64) => Ok(F64),
            _ => err(),
        },
        Op::Rem => match (t(0), t(1)) {
            (I64, I64) => Ok(I64),
            _ => err(),
        },
        Op::Neg => match t(0) {
            I64 => Ok(I64),
            F64 => Ok(F64),
            _ => err(),
        },
        Op::Eq | Op::Ne | Op::Lt | Op::Le | Op::Gt | Op::Ge => match (t(0), t(1)) {
            (I64, I64) | (F64, F64) => Ok(Bool),
            _ => err(),
        },
        Op::And | Op::Or => match (t(0), t(1)) {
            (Bool, Bool) => Ok(Bool),
            _ => err(),
        },
        Op::Not => match t(0) {
            Bool => Ok(Bool),
            _ => err(),
        },
        Op::Select => match (t(0), t(1), t(2)) {
            (Bool, a, b) if a == b && matches!(a, I64 | F64 | Bool) => Ok(a.clone()),
            _ => err(),
        },
        Op::IntToFloat => match t(0) {
            I64 => Ok(F64),
            _ => err(),
        },
        Op::Exp => match t(0) {
            F64 => Ok(F64),
            _ => err(),
        },
        other => Err(StageError::Internal(format!(
            "{} is not a scalar primitive",
            other.name()
        ))),
    }
}
