//! Reference interpreter: walks the graph in staging order and carries
//! runtime values in a slot table indexed by node id.
//!
//! Execution order is the staged order (per block, ascending node id),
//! not the compiled statement order; the scheduler only moves pure
//! speculation-safe nodes, so both orders compute identical values and
//! the interpreter doubles as the semantics oracle for the C pipeline.
//! Integer arithmetic wraps; integer division traps on zero and on
//! `i64::MIN / -1`; float arithmetic is plain IEEE with the portable
//! exponential from the shared numeric module.

use crate::error::{BackendError, Result};
use std::cell::RefCell;
use std::collections::{BTreeMap, HashMap};
use std::rc::Rc;
use std::sync::{Arc, Mutex};
use std::time::Instant;
use tandem_bridge::BoundedQueue;
use tandem_ir::numeric::{fmt_g17, kexp};
use tandem_ir::stage::{func_meta, FuncMeta};
use tandem_ir::types::*;

/// Program inputs and inspection requests for one run.
#[derive(Default, Clone, Debug)]
pub struct RunConfig {
    /// Values surfaced by argument nodes, by position.
    pub args: Vec<i64>,
    /// Nodes whose final values are returned after the run. Only
    /// meaningful for the interpreter; a compiled binary exposes nothing
    /// beyond its printed output.
    pub probes: Vec<NodeId>,
}

/// Instrumentation collected during a run: named counters and the
/// wall-clock offset of every phase marker.
#[derive(Default, Clone, Debug, PartialEq)]
pub struct Trace {
    pub counters: BTreeMap<String, u64>,
    pub phases: Vec<(String, f64)>,
}

/// Snapshot of a probed node's final value.
#[derive(Clone, Debug, PartialEq)]
pub enum ProbeVal {
    I64(i64),
    F64(f64),
    Bool(bool),
    ArrF(Vec<f64>),
    ArrI(Vec<i64>),
}

/// Everything a run produces: printed rows (no trailing newline),
/// instrumentation, probe snapshots and the wall time in seconds.
#[derive(Clone, Debug)]
pub struct RunOutput {
    pub rows: Vec<String>,
    pub trace: Trace,
    pub probes: Vec<ProbeVal>,
    pub wall: f64,
}

/// Executes a program and collects its output.
pub fn interpret(g: &IrGraph, cfg: &RunConfig) -> Result<RunOutput> {
    let start = Instant::now();
    let ctx = Arc::new(Ctx::new(g.clone(), cfg.args.clone())?);
    let mut exec = Exec::new(Arc::clone(&ctx), Some(Io::new(start)));
    exec.exec_block(ctx.g.root())?;
    let mut probes = Vec::with_capacity(cfg.probes.len());
    for &p in &cfg.probes {
        probes.push(exec.probe(p)?);
    }
    let io = exec.io.expect("root executor keeps its io");
    Ok(RunOutput {
        rows: io.rows,
        trace: Trace {
            counters: io.counters,
            phases: io.phases,
        },
        probes,
        wall: start.elapsed().as_secs_f64(),
    })
}

// ---- runtime values ---------------------------------------------------------

type ArrF = Rc<RefCell<Vec<f64>>>;
type ArrI = Rc<RefCell<Vec<i64>>>;

#[derive(Clone)]
enum Val {
    I(i64),
    F(f64),
    B(bool),
    Unit,
    AF(ArrF),
    AI(ArrI),
    /// Embedded constant arrays: readable, never written.
    CstF(Rc<Vec<f64>>),
    CstI(Rc<Vec<i64>>),
    Dict(Rc<RefCell<DictSt>>),
    Src(Rc<CsvData>),
    Pool(Rc<RefCell<PoolSt>>),
}

impl Val {
    fn kind(&self) -> &'static str {
        match self {
            Val::I(_) => "int64",
            Val::F(_) => "float64",
            Val::B(_) => "bool",
            Val::Unit => "unit",
            Val::AF(_) | Val::CstF(_) => "array-of(float64)",
            Val::AI(_) | Val::CstI(_) => "array-of(int64)",
            Val::Dict(_) => "dict",
            Val::Src(_) => "src",
            Val::Pool(_) => "pool",
        }
    }
}

/// Insertion-ordered hash table state: composite key bits -> dense index.
#[derive(Default)]
struct DictSt {
    map: HashMap<Vec<u64>, i64>,
}

/// Loaded csv source. Columns stay mutable and aliased by every column
/// handle taken from the source, matching the compiled runtime where the
/// handles are views of one buffer.
struct CsvData {
    cols: Vec<ColV>,
    rows: i64,
}

enum ColV {
    F(ArrF),
    I(ArrI),
}

// ---- worker pool -------------------------------------------------------------

enum Comp {
    F(Vec<f64>),
    I(Vec<i64>),
}

struct Job {
    seq: usize,
    inp: Vec<f64>,
    comps: Vec<Comp>,
    cnt: i64,
}

struct Batch {
    out: Vec<f64>,
    cnt: i64,
    comps: Vec<Comp>,
}

type BatchSlot = Option<std::result::Result<Batch, String>>;

struct PoolSt {
    queue: Arc<BoundedQueue<Job>>,
    results: Arc<Mutex<Vec<BatchSlot>>>,
    handles: Vec<std::thread::JoinHandle<()>>,
    nsub: usize,
    done: Option<Vec<Batch>>,
    arity: usize,
}

// ---- shared immutable context -------------------------------------------------

/// Program-wide immutable data shared between the root executor and pool
/// worker threads.
struct Ctx {
    g: IrGraph,
    args: Vec<i64>,
    /// Non-root members of each block, ascending id = staging order.
    members: Vec<Vec<NodeId>>,
    metas: HashMap<NodeId, FuncMeta>,
    /// Loop index node of each loop body block.
    loop_idx: HashMap<NodeId, NodeId>,
}

impl Ctx {
    fn new(g: IrGraph, args: Vec<i64>) -> Result<Ctx> {
        g.validate().map_err(BackendError::Exec)?;
        let members = g.members_by_scope();
        let mut metas = HashMap::new();
        let mut loop_idx = HashMap::new();
        for id in g.ids() {
            let n = g.node(id);
            match n.op {
                Op::FuncDef => {
                    metas.insert(id, func_meta(&g, id));
                }
                Op::LoopIdx => {
                    loop_idx.insert(n.scope, id);
                }
                _ => {}
            }
        }
        Ok(Ctx {
            g,
            args,
            members,
            metas,
            loop_idx,
        })
    }
}

/// Mutable output side of the root executor. Worker threads run without
/// one; a closed kernel cannot reach io in the first place.
struct Io {
    rows: Vec<String>,
    counters: BTreeMap<String, u64>,
    phases: Vec<(String, f64)>,
    start: Instant,
}

impl Io {
    fn new(start: Instant) -> Io {
        Io {
            rows: Vec::new(),
            counters: BTreeMap::new(),
            phases: Vec::new(),
            start,
        }
    }
}

fn exec_err(msg: impl Into<String>) -> BackendError {
    BackendError::Exec(msg.into())
}

struct Exec {
    ctx: Arc<Ctx>,
    slots: Vec<Option<Val>>,
    io: Option<Io>,
}

impl Exec {
    fn new(ctx: Arc<Ctx>, io: Option<Io>) -> Exec {
        let n = ctx.g.len();
        Exec {
            ctx,
            slots: vec![None; n],
            io,
        }
    }

    // ---- value access ---------------------------------------------------

    fn eval(&mut self, id: NodeId) -> Result<Val> {
        if let Some(v) = &self.slots[id.idx()] {
            return Ok(v.clone());
        }
        let node = self.ctx.g.node(id);
        let v = match node.op {
            Op::Const => match &node.imms[0] {
                Imm::I(x) => Val::I(*x),
                Imm::F(x) => Val::F(*x),
                Imm::B(x) => Val::B(*x),
                other => return Err(exec_err(format!("malformed constant {:?}", other))),
            },
            Op::ConstArrF => match &node.imms[0] {
                Imm::FVec(v) => Val::CstF(Rc::new(v.clone())),
                _ => return Err(exec_err("malformed constant array")),
            },
            Op::ConstArrI => match &node.imms[0] {
                Imm::IVec(v) => Val::CstI(Rc::new(v.clone())),
                _ => return Err(exec_err("malformed constant array")),
            },
            op => {
                return Err(exec_err(format!(
                    "node {} ({}) read before it was executed",
                    id,
                    op.name()
                )))
            }
        };
        self.slots[id.idx()] = Some(v.clone());
        Ok(v)
    }

    fn int(&mut self, id: NodeId) -> Result<i64> {
        match self.eval(id)? {
            Val::I(x) => Ok(x),
            v => Err(exec_err(format!("expected int64, got {}", v.kind()))),
        }
    }

    fn float(&mut self, id: NodeId) -> Result<f64> {
        match self.eval(id)? {
            Val::F(x) => Ok(x),
            v => Err(exec_err(format!("expected float64, got {}", v.kind()))),
        }
    }

    fn boolean(&mut self, id: NodeId) -> Result<bool> {
        match self.eval(id)? {
            Val::B(x) => Ok(x),
            v => Err(exec_err(format!("expected bool, got {}", v.kind()))),
        }
    }

    /// Reads a float64 array through a borrowed slice.
    fn with_f64s<T>(&mut self, id: NodeId, f: impl FnOnce(&[f64]) -> Result<T>) -> Result<T> {
        match self.eval(id)? {
            Val::AF(a) => f(&a.borrow()),
            Val::CstF(a) => f(&a),
            v => Err(exec_err(format!(
                "expected array-of(float64), got {}",
                v.kind()
            ))),
        }
    }

    fn probe(&mut self, id: NodeId) -> Result<ProbeVal> {
        if id.idx() >= self.ctx.g.len() {
            return Err(exec_err(format!("probe {} out of range", id)));
        }
        Ok(match self.eval(id)? {
            Val::I(x) => ProbeVal::I64(x),
            Val::F(x) => ProbeVal::F64(x),
            Val::B(x) => ProbeVal::Bool(x),
            Val::AF(a) => ProbeVal::ArrF(a.borrow().clone()),
            Val::CstF(a) => ProbeVal::ArrF((*a).clone()),
            Val::AI(a) => ProbeVal::ArrI(a.borrow().clone()),
            Val::CstI(a) => ProbeVal::ArrI((*a).clone()),
            v => return Err(exec_err(format!("cannot probe a {} value", v.kind()))),
        })
    }

    // ---- block walking ---------------------------------------------------

    fn exec_block(&mut self, b: NodeId) -> Result<()> {
        let ctx = Arc::clone(&self.ctx);
        for &id in &ctx.members[b.idx()] {
            match ctx.g.node(id).op {
                Op::Block | Op::FuncDef | Op::Param | Op::LoopIdx | Op::Const
                | Op::ConstArrF | Op::ConstArrI => {}
                _ => self.exec_node(id)?,
            }
        }
        Ok(())
    }

    fn exec_node(&mut self, id: NodeId) -> Result<()> {
        let ctx = Arc::clone(&self.ctx);
        let node = ctx.g.node(id);
        let ops = &node.operands;
        let v: Val = match node.op {
            Op::ArgI64 => {
                let idx = imm_usize(&node.imms[0])?;
                match self.ctx.args.get(idx) {
                    Some(&x) => Val::I(x),
                    None => {
                        return Err(exec_err(format!("missing program argument {}", idx)))
                    }
                }
            }

            // Scalar primitives.
            Op::Add | Op::Sub | Op::Mul | Op::Div | Op::Rem => {
                let a = self.eval(ops[0])?;
                let b = self.eval(ops[1])?;
                arith(node.op, a, b)?
            }
            Op::Neg => match self.eval(ops[0])? {
                Val::I(x) => Val::I(x.wrapping_neg()),
                Val::F(x) => Val::F(-x),
                v => return Err(exec_err(format!("cannot negate {}", v.kind()))),
            },
            Op::Eq | Op::Ne | Op::Lt | Op::Le | Op::Gt | Op::Ge => {
                let a = self.eval(ops[0])?;
                let b = self.eval(ops[1])?;
                compare(node.op, a, b)?
            }
            Op::And => Val::B(self.boolean(ops[0])? && self.boolean(ops[1])?),
            Op::Or => Val::B(self.boolean(ops[0])? || self.boolean(ops[1])?),
            Op::Not => Val::B(!self.boolean(ops[0])?),
            Op::Select => {
                let c = self.boolean(ops[0])?;
                if c {
                    self.eval(ops[1])?
                } else {
                    self.eval(ops[2])?
                }
            }
            Op::IntToFloat => Val::F(self.int(ops[0])? as f64),
            Op::Exp => Val::F(kexp(self.float(ops[0])?)),

            // Arrays.
            Op::ArrNew => {
                let n = self.int(ops[0])?;
                if n < 0 {
                    return Err(exec_err("negative array length"));
                }
                match node.imms[0] {
                    Imm::Ty(ScalarTy::F64) => {
                        Val::AF(Rc::new(RefCell::new(vec![0.0; n as usize])))
                    }
                    Imm::Ty(ScalarTy::I64) => Val::AI(Rc::new(RefCell::new(vec![0; n as usize]))),
                    _ => return Err(exec_err("malformed array allocation")),
                }
            }
            Op::ArrNewGrow => match node.imms[0] {
                Imm::Ty(ScalarTy::F64) => Val::AF(Rc::new(RefCell::new(Vec::new()))),
                Imm::Ty(ScalarTy::I64) => Val::AI(Rc::new(RefCell::new(Vec::new()))),
                _ => return Err(exec_err("malformed array allocation")),
            },
            Op::ArrFromConst => match self.eval(ops[0])? {
                Val::CstF(src) => Val::AF(Rc::new(RefCell::new((*src).clone()))),
                Val::CstI(src) => Val::AI(Rc::new(RefCell::new((*src).clone()))),
                v => {
                    return Err(exec_err(format!(
                        "array copy needs a constant array, got {}",
                        v.kind()
                    )))
                }
            },
            Op::ArrGet => {
                let i = self.int(ops[1])?;
                match self.eval(ops[0])? {
                    Val::AF(a) => Val::F(*idx_ck(&a.borrow(), i)?),
                    Val::CstF(a) => Val::F(*idx_ck(&a, i)?),
                    Val::AI(a) => Val::I(*idx_ck(&a.borrow(), i)?),
                    Val::CstI(a) => Val::I(*idx_ck(&a, i)?),
                    v => return Err(exec_err(format!("cannot index {}", v.kind()))),
                }
            }
            Op::ArrSet => {
                let i = self.int(ops[1])?;
                let val = self.eval(ops[2])?;
                match (self.eval(ops[0])?, val) {
                    (Val::AF(a), Val::F(x)) => *idx_ck_mut(&mut a.borrow_mut(), i)? = x,
                    (Val::AI(a), Val::I(x)) => *idx_ck_mut(&mut a.borrow_mut(), i)? = x,
                    (Val::CstF(_), _) | (Val::CstI(_), _) => {
                        return Err(exec_err("write to constant array"))
                    }
                    (a, v) => {
                        return Err(exec_err(format!(
                            "cannot store {} into {}",
                            v.kind(),
                            a.kind()
                        )))
                    }
                }
                Val::Unit
            }
            Op::ArrPush => {
                let val = self.eval(ops[1])?;
                match (self.eval(ops[0])?, val) {
                    (Val::AF(a), Val::F(x)) => a.borrow_mut().push(x),
                    (Val::AI(a), Val::I(x)) => a.borrow_mut().push(x),
                    (a, v) => {
                        return Err(exec_err(format!(
                            "cannot push {} into {}",
                            v.kind(),
                            a.kind()
                        )))
                    }
                }
                Val::Unit
            }
            Op::ArrLen => match self.eval(ops[0])? {
                Val::AF(a) => Val::I(a.borrow().len() as i64),
                Val::AI(a) => Val::I(a.borrow().len() as i64),
                Val::CstF(a) => Val::I(a.len() as i64),
                Val::CstI(a) => Val::I(a.len() as i64),
                v => return Err(exec_err(format!("cannot take length of {}", v.kind()))),
            },

            // Mutable cells live directly in the allocation node's slot.
            Op::VarNew => self.eval(ops[0])?,
            Op::VarGet => match &self.slots[ops[0].idx()] {
                Some(v) => v.clone(),
                None => return Err(exec_err("cell read before initialization")),
            },
            Op::VarSet => {
                let v = self.eval(ops[1])?;
                self.slots[ops[0].idx()] = Some(v);
                Val::Unit
            }

            // Hash table.
            Op::HashNew => Val::Dict(Rc::new(RefCell::new(DictSt::default()))),
            Op::HashUpsert => {
                let key = self.key_bits(&ops[1..])?;
                let d = self.dict(ops[0])?;
                let mut st = d.borrow_mut();
                let next = st.map.len() as i64;
                Val::I(*st.map.entry(key).or_insert(next))
            }
            Op::HashLookup => {
                let key = self.key_bits(&ops[1..])?;
                let d = self.dict(ops[0])?;
                let idx = d.borrow().map.get(&key).copied().unwrap_or(-1);
                Val::I(idx)
            }
            Op::HashLen => {
                let d = self.dict(ops[0])?;
                let n = d.borrow().map.len() as i64;
                Val::I(n)
            }

            // Csv.
            Op::CsvOpen => match &node.imms[0] {
                Imm::Csv(spec) => Val::Src(Rc::new(load_csv(spec)?)),
                _ => return Err(exec_err("malformed csv source")),
            },
            Op::CsvCol => {
                let idx = imm_usize(&node.imms[0])?;
                match self.eval(ops[0])? {
                    Val::Src(src) => match src.cols.get(idx) {
                        Some(ColV::F(c)) => Val::AF(Rc::clone(c)),
                        Some(ColV::I(c)) => Val::AI(Rc::clone(c)),
                        None => return Err(exec_err("csv column out of range")),
                    },
                    v => return Err(exec_err(format!("expected csv source, got {}", v.kind()))),
                }
            }
            Op::CsvRows => match self.eval(ops[0])? {
                Val::Src(src) => Val::I(src.rows),
                v => return Err(exec_err(format!("expected csv source, got {}", v.kind()))),
            },

            // Output and instrumentation.
            Op::PrintRow => {
                let fmts = match &node.imms[0] {
                    Imm::Fmt(f) => f.clone(),
                    _ => return Err(exec_err("malformed print formats")),
                };
                let mut cells = Vec::with_capacity(ops.len());
                for (o, f) in ops.iter().zip(&fmts) {
                    cells.push(match f {
                        PrintFmt::I64 => self.int(*o)?.to_string(),
                        PrintFmt::F64 => fmt_g17(self.float(*o)?),
                        PrintFmt::Str(tab) => {
                            let code = self.int(*o)?;
                            match usize::try_from(code).ok().and_then(|c| tab.get(c)) {
                                Some(s) => s.clone(),
                                None => {
                                    return Err(exec_err(format!(
                                        "string code {} out of range (table size {})",
                                        code,
                                        tab.len()
                                    )))
                                }
                            }
                        }
                    });
                }
                let line = cells.join(",");
                self.io_mut("print")?.rows.push(line);
                Val::Unit
            }
            Op::Tick => {
                let name = imm_str(&node.imms[0])?;
                *self.io_mut("counter")?.counters.entry(name).or_insert(0) += 1;
                Val::Unit
            }
            Op::PhaseMark => {
                let name = imm_str(&node.imms[0])?;
                let io = self.io_mut("phase mark")?;
                let t = io.start.elapsed().as_secs_f64();
                io.phases.push((name, t));
                Val::Unit
            }

            // Batched kernels.
            Op::KernelMatmul => {
                let m = self.int(ops[3])?;
                let (k, n) = (imm_usize(&node.imms[0])?, imm_usize(&node.imms[1])?);
                self.kernel_matmul(ops[0], ops[1], ops[2], m, k, n)?;
                Val::Unit
            }
            Op::KernelRelu => {
                let len = self.int(ops[2])?;
                self.kernel_relu(ops[0], ops[1], len)?;
                Val::Unit
            }

            // Worker pool.
            Op::PoolNew => self.pool_new(node)?,
            Op::PoolSubmit => {
                self.pool_submit(node)?;
                Val::Unit
            }
            Op::PoolFinish => {
                let p = self.pool(ops[0])?;
                pool_finish(&mut p.borrow_mut())?;
                Val::Unit
            }
            Op::PoolBatches => {
                let p = self.pool(ops[0])?;
                let n = pool_done(&p.borrow())?.len() as i64;
                Val::I(n)
            }
            Op::PoolBatchLen => {
                let seq = self.int(ops[1])?;
                let p = self.pool(ops[0])?;
                let p = p.borrow();
                Val::I(batch_at(pool_done(&p)?, seq)?.cnt)
            }
            Op::PoolBatchOut => {
                let seq = self.int(ops[1])?;
                let p = self.pool(ops[0])?;
                let p = p.borrow();
                let b = batch_at(pool_done(&p)?, seq)?;
                Val::AF(Rc::new(RefCell::new(b.out.clone())))
            }
            Op::PoolBatchCol => {
                let seq = self.int(ops[1])?;
                let idx = imm_usize(&node.imms[0])?;
                let p = self.pool(ops[0])?;
                let p = p.borrow();
                let b = batch_at(pool_done(&p)?, seq)?;
                match b.comps.get(idx) {
                    Some(Comp::F(c)) => Val::AF(Rc::new(RefCell::new(c.clone()))),
                    Some(Comp::I(c)) => Val::AI(Rc::new(RefCell::new(c.clone()))),
                    None => return Err(exec_err("pool companion column out of range")),
                }
            }

            // Structured control flow.
            Op::Loop => {
                let count = self.int(ops[0])?;
                let blk = ops[1];
                let idx_node = self.ctx.loop_idx.get(&blk).copied();
                for i in 0..count.max(0) {
                    if let Some(ix) = idx_node {
                        self.slots[ix.idx()] = Some(Val::I(i));
                    }
                    self.exec_block(blk)?;
                }
                Val::Unit
            }
            Op::While => {
                let (cb, cv, bb) = (ops[0], ops[1], ops[2]);
                loop {
                    self.exec_block(cb)?;
                    if !self.boolean(cv)? {
                        break;
                    }
                    self.exec_block(bb)?;
                }
                Val::Unit
            }
            Op::If => {
                let c = self.boolean(ops[0])?;
                let (taken, result) = if c {
                    (ops[1], ops.get(3))
                } else {
                    (ops[2], ops.get(4))
                };
                self.exec_block(taken)?;
                match result {
                    Some(&r) => self.eval(r)?,
                    None => Val::Unit,
                }
            }
            Op::Call => self.call(ops[0], &ops[1..])?,

            Op::Const | Op::ConstArrF | Op::ConstArrI | Op::Block | Op::LoopIdx
            | Op::Param | Op::FuncDef => {
                return Err(exec_err(format!(
                    "{} is not an executable statement",
                    node.op.name()
                )))
            }
        };
        self.slots[id.idx()] = Some(v);
        Ok(())
    }

    fn call(&mut self, fdef: NodeId, args: &[NodeId]) -> Result<Val> {
        let meta = self
            .ctx
            .metas
            .get(&fdef)
            .ok_or_else(|| exec_err(format!("call of non-function node {}", fdef)))?
            .clone();
        if args.len() != meta.params.len() {
            return Err(exec_err(format!(
                "call of '{}': expected {} arguments, got {}",
                meta.name,
                meta.params.len(),
                args.len()
            )));
        }
        for (p, a) in meta.params.iter().zip(args) {
            let v = self.eval(*a)?;
            self.slots[p.idx()] = Some(v);
        }
        self.exec_block(meta.body_block)?;
        match meta.result_node {
            Some(r) => self.eval(r),
            None => Ok(Val::Unit),
        }
    }

    // ---- helpers ----------------------------------------------------------

    fn io_mut(&mut self, what: &str) -> Result<&mut Io> {
        self.io
            .as_mut()
            .ok_or_else(|| exec_err(format!("{} is not allowed inside a pooled kernel", what)))
    }

    fn dict(&mut self, id: NodeId) -> Result<Rc<RefCell<DictSt>>> {
        match self.eval(id)? {
            Val::Dict(d) => Ok(d),
            v => Err(exec_err(format!("expected dict, got {}", v.kind()))),
        }
    }

    fn pool(&mut self, id: NodeId) -> Result<Rc<RefCell<PoolSt>>> {
        match self.eval(id)? {
            Val::Pool(p) => Ok(p),
            v => Err(exec_err(format!("expected pool, got {}", v.kind()))),
        }
    }

    /// Composite key encoding: each scalar as its 64-bit pattern, so float
    /// keys distinguish -0.0 from 0.0 and identical NaN bits match, in
    /// both backends alike.
    fn key_bits(&mut self, keys: &[NodeId]) -> Result<Vec<u64>> {
        let mut out = Vec::with_capacity(keys.len());
        for &k in keys {
            out.push(match self.eval(k)? {
                Val::I(x) => x as u64,
                Val::F(x) => x.to_bits(),
                v => return Err(exec_err(format!("{} is not a hash key", v.kind()))),
            });
        }
        Ok(out)
    }

    fn kernel_matmul(
        &mut self,
        a: NodeId,
        b: NodeId,
        out: NodeId,
        m: i64,
        k: usize,
        n: usize,
    ) -> Result<()> {
        let m = usize::try_from(m).map_err(|_| exec_err("negative kernel row count"))?;
        let av = self.eval(a)?;
        let bv = self.eval(b)?;
        let ov = match self.eval(out)? {
            Val::AF(o) => o,
            v => {
                return Err(exec_err(format!(
                    "kernel output must be a mutable float64 array, got {}",
                    v.kind()
                )))
            }
        };
        let run = |av: &[f64], bv: &[f64], ov: &mut [f64]| -> Result<()> {
            if av.len() < m * k || bv.len() < k * n || ov.len() < m * n {
                return Err(exec_err("kernel shape mismatch"));
            }
            for i in 0..m {
                for j in 0..n {
                    let mut acc = 0.0;
                    for t in 0..k {
                        acc += av[i * k + t] * bv[t * n + j];
                    }
                    ov[i * n + j] = acc;
                }
            }
            Ok(())
        };
        let alias = |x: &Val| match x {
            Val::AF(r) => Rc::ptr_eq(r, &ov),
            _ => false,
        };
        if alias(&av) || alias(&bv) {
            return Err(exec_err("kernel buffers alias"));
        }
        let mut o = ov.borrow_mut();
        match (&av, &bv) {
            (Val::AF(x), Val::AF(y)) => run(&x.borrow(), &y.borrow(), &mut o),
            (Val::AF(x), Val::CstF(y)) => run(&x.borrow(), y, &mut o),
            (Val::CstF(x), Val::AF(y)) => run(x, &y.borrow(), &mut o),
            (Val::CstF(x), Val::CstF(y)) => run(x, y, &mut o),
            _ => Err(exec_err("kernel inputs must be float64 arrays")),
        }
    }

    fn kernel_relu(&mut self, x: NodeId, out: NodeId, len: i64) -> Result<()> {
        let len = usize::try_from(len).map_err(|_| exec_err("negative kernel length"))?;
        let xv = self.eval(x)?;
        let ov = match self.eval(out)? {
            Val::AF(o) => o,
            v => {
                return Err(exec_err(format!(
                    "kernel output must be a mutable float64 array, got {}",
                    v.kind()
                )))
            }
        };
        let in_place = matches!(&xv, Val::AF(r) if Rc::ptr_eq(r, &ov));
        let mut o = ov.borrow_mut();
        if o.len() < len {
            return Err(exec_err("kernel shape mismatch"));
        }
        if in_place {
            for v in o.iter_mut().take(len) {
                *v = if *v > 0.0 { *v } else { 0.0 };
            }
            return Ok(());
        }
        let apply = |x: &[f64], o: &mut [f64]| -> Result<()> {
            if x.len() < len {
                return Err(exec_err("kernel shape mismatch"));
            }
            for i in 0..len {
                o[i] = if x[i] > 0.0 { x[i] } else { 0.0 };
            }
            Ok(())
        };
        match &xv {
            Val::AF(x) => apply(&x.borrow(), &mut o),
            Val::CstF(x) => apply(x, &mut o),
            v => Err(exec_err(format!(
                "kernel input must be a float64 array, got {}",
                v.kind()
            ))),
        }
    }

    // ---- pool execution ----------------------------------------------------

    fn pool_new(&mut self, node: &IrNode) -> Result<Val> {
        let cfg = match &node.imms[0] {
            Imm::Pool(c) => c.clone(),
            _ => return Err(exec_err("malformed pool allocation")),
        };
        if cfg.workers == 0 {
            return Err(exec_err("pool requires at least one worker"));
        }
        let kernel = node.operands[0];
        if !self.ctx.metas.contains_key(&kernel) {
            return Err(exec_err("pool kernel is not a function"));
        }
        let queue: Arc<BoundedQueue<Job>> = Arc::new(BoundedQueue::new(cfg.queue_cap.max(1)));
        let results: Arc<Mutex<Vec<BatchSlot>>> = Arc::new(Mutex::new(Vec::new()));
        let mut handles = Vec::with_capacity(cfg.workers);
        for _ in 0..cfg.workers {
            let q = Arc::clone(&queue);
            let res = Arc::clone(&results);
            let ctx = Arc::clone(&self.ctx);
            handles.push(std::thread::spawn(move || {
                let mut w = Exec::new(ctx, None);
                while let Some(job) = q.pop() {
                    let seq = job.seq;
                    let r = w.run_kernel(kernel, job);
                    let mut res = res.lock().expect("pool results lock");
                    if res.len() <= seq {
                        res.resize_with(seq + 1, || None);
                    }
                    res[seq] = Some(r.map_err(|e| e.to_string()));
                }
            }));
        }
        Ok(Val::Pool(Rc::new(RefCell::new(PoolSt {
            queue,
            results,
            handles,
            nsub: 0,
            done: None,
            arity: cfg.arity,
        }))))
    }

    /// One pooled batch, on a worker thread: bind the kernel parameters,
    /// walk the body, hand back the output buffer.
    fn run_kernel(&mut self, kernel: NodeId, job: Job) -> std::result::Result<Batch, BackendError> {
        let meta = self.ctx.metas[&kernel].clone();
        if meta.params.len() != 3 {
            return Err(exec_err("pooled kernel must take (batch, count, out)"));
        }
        let cnt = job.cnt;
        let out = Rc::new(RefCell::new(vec![0.0; cnt.max(0) as usize]));
        self.slots[meta.params[0].idx()] = Some(Val::AF(Rc::new(RefCell::new(job.inp))));
        self.slots[meta.params[1].idx()] = Some(Val::I(cnt));
        self.slots[meta.params[2].idx()] = Some(Val::AF(Rc::clone(&out)));
        self.exec_block(meta.body_block)?;
        let out = out.borrow().clone();
        Ok(Batch {
            out,
            cnt,
            comps: job.comps,
        })
    }

    fn pool_submit(&mut self, node: &IrNode) -> Result<()> {
        let ops = &node.operands;
        let cnt = self.int(ops[ops.len() - 1])?;
        if cnt < 0 {
            return Err(exec_err("negative pool batch count"));
        }
        let p = self.pool(ops[0])?;
        let arity = p.borrow().arity;
        let need = cnt as usize * arity;
        let inp = self.with_f64s(ops[1], |a| {
            if a.len() < need {
                return Err(exec_err("pool batch shorter than its row count"));
            }
            Ok(a[..need].to_vec())
        })?;
        let mut comps = Vec::with_capacity(ops.len().saturating_sub(3));
        for &c in &ops[2..ops.len() - 1] {
            let cut = cnt as usize;
            comps.push(match self.eval(c)? {
                Val::AF(a) => {
                    let a = a.borrow();
                    comp_cut_f(&a, cut)?
                }
                Val::CstF(a) => comp_cut_f(&a, cut)?,
                Val::AI(a) => {
                    let a = a.borrow();
                    comp_cut_i(&a, cut)?
                }
                Val::CstI(a) => comp_cut_i(&a, cut)?,
                v => {
                    return Err(exec_err(format!(
                        "pool companion must be an array, got {}",
                        v.kind()
                    )))
                }
            });
        }
        let mut st = p.borrow_mut();
        if st.done.is_some() {
            return Err(exec_err("submit to a finished pool"));
        }
        let seq = st.nsub;
        st.nsub += 1;
        st.queue
            .push(Job {
                seq,
                inp,
                comps,
                cnt,
            })
            .map_err(|_| exec_err("submit to a finished pool"))?;
        Ok(())
    }
}

fn comp_cut_f(a: &[f64], cut: usize) -> Result<Comp> {
    if a.len() < cut {
        return Err(exec_err("pool companion shorter than the batch row count"));
    }
    Ok(Comp::F(a[..cut].to_vec()))
}

fn comp_cut_i(a: &[i64], cut: usize) -> Result<Comp> {
    if a.len() < cut {
        return Err(exec_err("pool companion shorter than the batch row count"));
    }
    Ok(Comp::I(a[..cut].to_vec()))
}

fn pool_finish(st: &mut PoolSt) -> Result<()> {
    if st.done.is_some() {
        return Ok(());
    }
    st.queue.close();
    for h in st.handles.drain(..) {
        h.join()
            .map_err(|_| exec_err("pool worker thread panicked"))?;
    }
    let mut res = st.results.lock().expect("pool results lock");
    let collected = std::mem::take(&mut *res);
    drop(res);
    if collected.len() != st.nsub || collected.iter().any(|r| r.is_none()) {
        return Err(exec_err("pool lost a submitted batch"));
    }
    let mut done = Vec::with_capacity(collected.len());
    for r in collected {
        match r.expect("checked above") {
            Ok(b) => done.push(b),
            Err(e) => return Err(exec_err(format!("pool worker failed: {}", e))),
        }
    }
    st.done = Some(done);
    Ok(())
}

fn pool_done(st: &PoolSt) -> Result<&Vec<Batch>> {
    st.done
        .as_ref()
        .ok_or_else(|| exec_err("pool results read before finish"))
}

fn batch_at(done: &[Batch], seq: i64) -> Result<&Batch> {
    usize::try_from(seq)
        .ok()
        .and_then(|s| done.get(s))
        .ok_or_else(|| exec_err("pool batch index out of range"))
}

// ---- scalar helpers -----------------------------------------------------------

fn arith(op: Op, a: Val, b: Val) -> Result<Val> {
    Ok(match (a, b) {
        (Val::I(a), Val::I(b)) => Val::I(match op {
            Op::Add => a.wrapping_add(b),
            Op::Sub => a.wrapping_sub(b),
            Op::Mul => a.wrapping_mul(b),
            Op::Div => {
                if b == 0 {
                    return Err(exec_err("integer division by zero"));
                }
                if a == i64::MIN && b == -1 {
                    return Err(exec_err("integer division overflow"));
                }
                a / b
            }
            Op::Rem => {
                if b == 0 {
                    return Err(exec_err("integer remainder by zero"));
                }
                if a == i64::MIN && b == -1 {
                    return Err(exec_err("integer remainder overflow"));
                }
                a % b
            }
            _ => unreachable!("arith dispatch"),
        }),
        (Val::F(a), Val::F(b)) => Val::F(match op {
            Op::Add => a + b,
            Op::Sub => a - b,
            Op::Mul => a * b,
            Op::Div => a / b,
            Op::Rem => return Err(exec_err("remainder is integer-only")),
            _ => unreachable!("arith dispatch"),
        }),
        (a, b) => {
            return Err(exec_err(format!(
                "{} needs matching scalars, got {} and {}",
                op.name(),
                a.kind(),
                b.kind()
            )))
        }
    })
}

fn compare(op: Op, a: Val, b: Val) -> Result<Val> {
    let r = match (a, b) {
        (Val::I(a), Val::I(b)) => match op {
            Op::Eq => a == b,
            Op::Ne => a != b,
            Op::Lt => a < b,
            Op::Le => a <= b,
            Op::Gt => a > b,
            _ => a >= b,
        },
        (Val::F(a), Val::F(b)) => match op {
            Op::Eq => a == b,
            Op::Ne => a != b,
            Op::Lt => a < b,
            Op::Le => a <= b,
            Op::Gt => a > b,
            _ => a >= b,
        },
        (Val::B(a), Val::B(b)) => match op {
            Op::Eq => a == b,
            Op::Ne => a != b,
            _ => return Err(exec_err("bools only compare for equality")),
        },
        (a, b) => {
            return Err(exec_err(format!(
                "{} needs matching scalars, got {} and {}",
                op.name(),
                a.kind(),
                b.kind()
            )))
        }
    };
    Ok(Val::B(r))
}

fn idx_ck<T>(a: &[T], i: i64) -> Result<&T> {
    usize::try_from(i)
        .ok()
        .and_then(|i| a.get(i))
        .ok_or_else(|| exec_err(format!("array index {} out of range (length {})", i, a.len())))
}

fn idx_ck_mut<T>(a: &mut [T], i: i64) -> Result<&mut T> {
    let n = a.len();
    usize::try_from(i)
        .ok()
        .and_then(move |i| a.get_mut(i))
        .ok_or_else(|| exec_err(format!("array index {} out of range (length {})", i, n)))
}

fn imm_usize(imm: &Imm) -> Result<usize> {
    match imm {
        Imm::U(x) => Ok(*x),
        _ => Err(exec_err("malformed immediate: expected a size")),
    }
}

fn imm_str(imm: &Imm) -> Result<String> {
    match imm {
        Imm::S(x) => Ok(x.clone()),
        _ => Err(exec_err("malformed immediate: expected a name")),
    }
}

// ---- csv loading ----------------------------------------------------------------

/// Runtime csv load. The dialect matches the staging-time pass that built
/// the embedded dictionaries: lines split on newlines, cells split on
/// commas, no quoting, no trimming, data rows numbered from 1.
fn load_csv(spec: &CsvSpec) -> Result<CsvData> {
    let text = std::fs::read_to_string(&spec.path)
        .map_err(|e| exec_err(format!("cannot open csv file {}: {}", spec.path, e)))?;
    let ncols = spec.cols.len();
    let mut cols: Vec<ColBuild> = spec
        .cols
        .iter()
        .map(|c| match c.ty {
            ColKind::F64 => ColBuild::F(Vec::new()),
            ColKind::I64 => ColBuild::I(Vec::new()),
            ColKind::Str => {
                let mut codes = HashMap::new();
                for (i, s) in c.dict.iter().enumerate() {
                    codes.insert(s.clone(), i as i64);
                }
                ColBuild::S(Vec::new(), codes)
            }
        })
        .collect();
    let mut lines = text.lines();
    if spec.header {
        let _ = lines.next();
    }
    let mut rows: i64 = 0;
    for (rowno, line) in lines.enumerate() {
        let rowno = rowno + 1;
        let mut cells = line.split(',');
        for (j, col) in cols.iter_mut().enumerate() {
            let cell = cells.next().ok_or_else(|| {
                exec_err(format!(
                    "{}: row {}: expected {} fields",
                    spec.path, rowno, ncols
                ))
            })?;
            match col {
                ColBuild::F(v) => v.push(cell.parse::<f64>().map_err(|_| {
                    exec_err(format!(
                        "{}: row {}: bad float64 in column '{}': '{}'",
                        spec.path, rowno, spec.cols[j].name, cell
                    ))
                })?),
                ColBuild::I(v) => v.push(cell.parse::<i64>().map_err(|_| {
                    exec_err(format!(
                        "{}: row {}: bad int64 in column '{}': '{}'",
                        spec.path, rowno, spec.cols[j].name, cell
                    ))
                })?),
                ColBuild::S(v, codes) => v.push(*codes.get(cell).ok_or_else(|| {
                    exec_err(format!(
                        "{}: row {}: unknown string in column '{}': '{}'",
                        spec.path, rowno, spec.cols[j].name, cell
                    ))
                })?),
            }
        }
        if cells.next().is_some() {
            return Err(exec_err(format!(
                "{}: row {}: expected {} fields",
                spec.path, rowno, ncols
            )));
        }
        rows += 1;
    }
    Ok(CsvData {
        cols: cols
            .into_iter()
            .map(|c| match c {
                ColBuild::F(v) => ColV::F(Rc::new(RefCell::new(v))),
                ColBuild::I(v) => ColV::I(Rc::new(RefCell::new(v))),
                ColBuild::S(v, _) => ColV::I(Rc::new(RefCell::new(v))),
            })
            .collect(),
        rows,
    })
}

enum ColBuild {
    F(Vec<f64>),
    I(Vec<i64>),
    S(Vec<i64>, HashMap<String, i64>),
}
