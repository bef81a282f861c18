//! Node table data types: ids, ops, immediates, effects, graphs.

use std::fmt;

/// Index into the node table. Ids are dense and strictly increasing; an
/// operand id is always smaller than the id of the node using it.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub struct NodeId(pub u32);

impl NodeId {
    pub fn idx(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Element type of staged arrays and csv columns.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug)]
pub enum ScalarTy {
    I64,
    F64,
}

/// Staged value types. Scalars plus array handles; the remaining variants
/// are opaque handles for runtime structures that the relational and
/// boundary layers stage (hash tables, csv sources, worker pools).
#[derive(Clone, PartialEq, Eq, Hash, Debug)]
pub enum Stype {
    I64,
    F64,
    Bool,
    Unit,
    Arr(Box<Stype>),
    Struct(Vec<(String, Stype)>),
    Dict,
    Src,
    Pool,
}

impl Stype {
    pub fn arr(elem: Stype) -> Stype {
        Stype::Arr(Box::new(elem))
    }

    pub fn scalar_ty(&self) -> Option<ScalarTy> {
        match self {
            Stype::I64 => Some(ScalarTy::I64),
            Stype::F64 => Some(ScalarTy::F64),
            _ => None,
        }
    }
}

impl fmt::Display for Stype {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Stype::I64 => write!(f, "int64"),
            Stype::F64 => write!(f, "float64"),
            Stype::Bool => write!(f, "bool"),
            Stype::Unit => write!(f, "unit"),
            Stype::Arr(e) => write!(f, "array-of({})", e),
            Stype::Struct(fs) => {
                write!(f, "struct-of(")?;
                for (i, (n, t)) in fs.iter().enumerate() {
                    if i > 0 {
                        write!(f, ",")?;
                    }
                    write!(f, "{}:{}", n, t)?;
                }
                write!(f, ")")
            }
            Stype::Dict => write!(f, "dict"),
            Stype::Src => write!(f, "src"),
            Stype::Pool => write!(f, "pool"),
        }
    }
}

/// Block flavor. Placement decisions depend on it: pure nodes are hoisted
/// out of loop bodies but never across branch or function boundaries.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug)]
pub enum BlockKind {
    Root,
    LoopBody,
    WhileCond,
    WhileBody,
    IfThen,
    IfElse,
    FuncBody,
}

/// Column description for a staged csv load. String columns are
/// dictionary-encoded: the dictionary is built in the current stage and
/// embedded in the program, cells become int64 codes.
#[derive(Clone, PartialEq, Debug)]
pub struct CsvColTy {
    pub name: String,
    pub ty: ColKind,
    /// Code -> string table for `ColKind::Str` columns, in first-seen order.
    pub dict: Vec<String>,
}

#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug)]
pub enum ColKind {
    I64,
    F64,
    Str,
}

/// Immediate payload of a csv-open node.
#[derive(Clone, PartialEq, Debug)]
pub struct CsvSpec {
    pub path: String,
    pub header: bool,
    pub cols: Vec<CsvColTy>,
}

/// Per-column print format of a print-row node. String columns carry the
/// embedded decode table.
#[derive(Clone, PartialEq, Debug)]
pub enum PrintFmt {
    I64,
    F64,
    Str(Vec<String>),
}

/// Immediate payload of a pool-new node: the batching worker pool that a
/// pooled UDF stages. `comp` lists the element types of the companion
/// columns carried alongside each batch.
#[derive(Clone, PartialEq, Debug)]
pub struct PoolCfg {
    pub workers: usize,
    pub queue_cap: usize,
    pub batch: usize,
    pub arity: usize,
    pub comp: Vec<ScalarTy>,
}

/// Immediate operand: constants and static payloads attached to a node.
#[derive(Clone, Debug)]
pub enum Imm {
    I(i64),
    F(f64),
    B(bool),
    U(usize),
    S(String),
    Ty(ScalarTy),
    St(Stype),
    Kind(BlockKind),
    FVec(Vec<f64>),
    IVec(Vec<i64>),
    Csv(CsvSpec),
    Pool(PoolCfg),
    Fmt(Vec<PrintFmt>),
}

// Equality and hashing treat floats by bit pattern so immediates can key
// the CSE index without losing -0.0 / NaN distinctions.
impl PartialEq for Imm {
    fn eq(&self, other: &Imm) -> bool {
        use Imm::*;
        match (self, other) {
            (I(a), I(b)) => a == b,
            (F(a), F(b)) => a.to_bits() == b.to_bits(),
            (B(a), B(b)) => a == b,
            (U(a), U(b)) => a == b,
            (S(a), S(b)) => a == b,
            (Ty(a), Ty(b)) => a == b,
            (St(a), St(b)) => a == b,
            (Kind(a), Kind(b)) => a == b,
            (FVec(a), FVec(b)) => {
                a.len() == b.len()
                    && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
            }
            (IVec(a), IVec(b)) => a == b,
            (Csv(a), Csv(b)) => a == b,
            (Pool(a), Pool(b)) => a == b,
            (Fmt(a), Fmt(b)) => a == b,
            _ => false,
        }
    }
}

impl Eq for Imm {}

impl std::hash::Hash for Imm {
    fn hash<H: std::hash::Hasher>(&self, h: &mut H) {
        use Imm::*;
        std::mem::discriminant(self).hash(h);
        match self {
            I(v) => v.hash(h),
            F(v) => v.to_bits().hash(h),
            B(v) => v.hash(h),
            U(v) => v.hash(h),
            S(v) => v.hash(h),
            Ty(v) => v.hash(h),
            St(v) => v.hash(h),
            Kind(v) => v.hash(h),
            FVec(v) => v.iter().for_each(|x| x.to_bits().hash(h)),
            IVec(v) => v.hash(h),
            // Large payloads only appear on effectful nodes, which never
            // enter the CSE index; hashing the discriminant is enough.
            Csv(v) => v.path.hash(h),
            Pool(v) => (v.workers, v.batch).hash(h),
            Fmt(v) => v.len().hash(h),
        }
    }
}

/// Effect class of a node. `Read`/`Write` name the allocation node whose
/// storage is touched, so independent buffers do not serialize against
/// each other; `Global` covers io and anything that touches more than one
/// region.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug)]
pub enum Effect {
    Pure,
    Read(NodeId),
    Write(NodeId),
    Global,
}

impl Effect {
    pub fn is_pure(self) -> bool {
        matches!(self, Effect::Pure)
    }
}

/// Operation tag. Payloads live in `operands` and `imms`.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug)]
pub enum Op {
    // Constants and program inputs.
    Const,
    ConstArrF,
    ConstArrI,
    ArgI64,
    // Scalar primitives.
    Add,
    Sub,
    Mul,
    Div,
    Rem,
    Neg,
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
    And,
    Or,
    Not,
    Select,
    IntToFloat,
    Exp,
    // Arrays: fixed-size zeroed, growable, mutable copy of a constant.
    ArrNew,
    ArrNewGrow,
    ArrFromConst,
    ArrGet,
    ArrSet,
    ArrPush,
    ArrLen,
    // Mutable scalar cells.
    VarNew,
    VarGet,
    VarSet,
    // Structure.
    Block,
    Loop,
    While,
    If,
    LoopIdx,
    FuncDef,
    Param,
    Call,
    // Insertion-ordered hash table: composite key -> dense group index.
    HashNew,
    HashUpsert,
    HashLookup,
    HashLen,
    // Csv ingestion.
    CsvOpen,
    CsvCol,
    CsvRows,
    // Output and instrumentation.
    PrintRow,
    Tick,
    PhaseMark,
    // Batched kernels (single-node form).
    KernelMatmul,
    KernelRelu,
    // Batching worker pool for pooled UDF execution.
    PoolNew,
    PoolSubmit,
    PoolFinish,
    PoolBatches,
    PoolBatchLen,
    PoolBatchOut,
    PoolBatchCol,
}

impl Op {
    /// Kebab-case tag used by the text serialization.
    pub fn name(self) -> &'static str {
        use Op::*;
        match self {
            Const => "const",
            ConstArrF => "const-arr-f64",
            ConstArrI => "const-arr-i64",
            ArgI64 => "arg-i64",
            Add => "add",
            Sub => "sub",
            Mul => "mul",
            Div => "div",
            Rem => "rem",
            Neg => "neg",
            Eq => "eq",
            Ne => "ne",
            Lt => "lt",
            Le => "le",
            Gt => "gt",
            Ge => "ge",
            And => "and",
            Or => "or",
            Not => "not",
            Select => "select",
            IntToFloat => "i2f",
            Exp => "exp",
            ArrNew => "arr-new",
            ArrNewGrow => "arr-new-grow",
            ArrFromConst => "arr-from-const",
            ArrGet => "arr-get",
            ArrSet => "arr-set",
            ArrPush => "arr-push",
            ArrLen => "arr-len",
            VarNew => "var-new",
            VarGet => "var-get",
            VarSet => "var-set",
            Block => "block",
            Loop => "loop",
            While => "while",
            If => "if",
            LoopIdx => "loop-idx",
            FuncDef => "func-def",
            Param => "param",
            Call => "call",
            HashNew => "hashmap-new",
            HashUpsert => "hashmap-upsert",
            HashLookup => "hashmap-lookup",
            HashLen => "hashmap-len",
            CsvOpen => "csv-open",
            CsvCol => "csv-col",
            CsvRows => "csv-rows",
            PrintRow => "print-row",
            Tick => "tick",
            PhaseMark => "phase-mark",
            KernelMatmul => "kernel-matmul",
            KernelRelu => "kernel-relu",
            PoolNew => "pool-new",
            PoolSubmit => "pool-submit",
            PoolFinish => "pool-finish",
            PoolBatches => "pool-batches",
            PoolBatchLen => "pool-batch-len",
            PoolBatchOut => "pool-batch-out",
            PoolBatchCol => "pool-batch-col",
        }
    }

    pub fn from_name(s: &str) -> Option<Op> {
        use Op::*;
        Some(match s {
            "const" => Const,
            "const-arr-f64" => ConstArrF,
            "const-arr-i64" => ConstArrI,
            "arg-i64" => ArgI64,
            "add" => Add,
            "sub" => Sub,
            "mul" => Mul,
            "div" => Div,
            "rem" => Rem,
            "neg" => Neg,
            "eq" => Eq,
            "ne" => Ne,
            "lt" => Lt,
            "le" => Le,
            "gt" => Gt,
            "ge" => Ge,
            "and" => And,
            "or" => Or,
            "not" => Not,
            "select" => Select,
            "i2f" => IntToFloat,
            "exp" => Exp,
            "arr-new" => ArrNew,
            "arr-new-grow" => ArrNewGrow,
            "arr-from-const" => ArrFromConst,
            "arr-get" => ArrGet,
            "arr-set" => ArrSet,
            "arr-push" => ArrPush,
            "arr-len" => ArrLen,
            "var-new" => VarNew,
            "var-get" => VarGet,
            "var-set" => VarSet,
            "block" => Block,
            "loop" => Loop,
            "while" => While,
            "if" => If,
            "loop-idx" => LoopIdx,
            "func-def" => FuncDef,
            "param" => Param,
            "call" => Call,
            "hashmap-new" => HashNew,
            "hashmap-upsert" => HashUpsert,
            "hashmap-lookup" => HashLookup,
            "hashmap-len" => HashLen,
            "csv-open" => CsvOpen,
            "csv-col" => CsvCol,
            "csv-rows" => CsvRows,
            "print-row" => PrintRow,
            "tick" => Tick,
            "phase-mark" => PhaseMark,
            "kernel-matmul" => KernelMatmul,
            "kernel-relu" => KernelRelu,
            "pool-new" => PoolNew,
            "pool-submit" => PoolSubmit,
            "pool-finish" => PoolFinish,
            "pool-batches" => PoolBatches,
            "pool-batch-len" => PoolBatchLen,
            "pool-batch-out" => PoolBatchOut,
            "pool-batch-col" => PoolBatchCol,
            _ => return None,
        })
    }

    /// Structural nodes own nested blocks.
    pub fn is_structural(self) -> bool {
        matches!(self, Op::Loop | Op::While | Op::If | Op::FuncDef)
    }

    /// Scalar primitives go through the folding path when (re)staged.
    pub fn is_scalar_prim(self) -> bool {
        use Op::*;
        matches!(
            self,
            Add | Sub
                | Mul
                | Div
                | Rem
                | Neg
                | Eq
                | Ne
                | Lt
                | Le
                | Gt
                | Ge
                | And
                | Or
                | Not
                | Select
                | IntToFloat
                | Exp
        )
    }
}

/// One row of the node table.
#[derive(Clone, PartialEq, Debug)]
pub struct IrNode {
    pub op: Op,
    pub operands: Vec<NodeId>,
    pub imms: Vec<Imm>,
    pub effect: Effect,
    /// Enclosing block node (the root block is its own scope).
    pub scope: NodeId,
}

/// Append-only node table. Node 0 is always the root block.
#[derive(Clone, PartialEq, Debug, Default)]
pub struct IrGraph {
    pub nodes: Vec<IrNode>,
}

impl IrGraph {
    pub fn node(&self, id: NodeId) -> &IrNode {
        &self.nodes[id.idx()]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn root(&self) -> NodeId {
        NodeId(0)
    }

    pub fn ids(&self) -> impl Iterator<Item = NodeId> {
        (0..self.nodes.len() as u32).map(NodeId)
    }

    /// Number of nodes with a given op, a common structural assertion.
    pub fn count_op(&self, op: Op) -> usize {
        self.nodes.iter().filter(|n| n.op == op).count()
    }

    /// Nodes grouped by enclosing block, in id order.
    pub fn members_by_scope(&self) -> Vec<Vec<NodeId>> {
        let mut m = vec![Vec::new(); self.nodes.len()];
        for id in self.ids() {
            if id.idx() == 0 {
                continue;
            }
            m[self.node(id).scope.idx()].push(id);
        }
        m
    }

    /// Owner structural node of each block (loop, while, if or func-def
    /// that lists the block as an operand).
    pub fn block_owners(&self) -> Vec<Option<NodeId>> {
        let mut owners = vec![None; self.nodes.len()];
        for id in self.ids() {
            let n = self.node(id);
            if n.op.is_structural() {
                for &o in &n.operands {
                    if self.node(o).op == Op::Block {
                        owners[o.idx()] = Some(id);
                    }
                }
            }
        }
        owners
    }

    pub fn block_kind(&self, b: NodeId) -> BlockKind {
        match self.node(b).imms.first() {
            Some(Imm::Kind(k)) => *k,
            _ => BlockKind::Root,
        }
    }

    /// Checks the node table invariants: dense ids, operands strictly
    /// below their user, scopes pointing at block nodes, node 0 a root
    /// block. Returns a description of the first violation.
    pub fn validate(&self) -> Result<(), String> {
        if self.nodes.is_empty() {
            return Err("empty graph: missing root block".into());
        }
        if self.nodes[0].op != Op::Block {
            return Err("node 0 must be the root block".into());
        }
        for id in self.ids() {
            let n = self.node(id);
            for &o in &n.operands {
                if o >= id {
                    return Err(format!(
                        "node {} refers to operand {} which is not below it",
                        id, o
                    ));
                }
            }
            let sc = n.scope;
            if sc.idx() >= self.nodes.len() || self.node(sc).op != Op::Block {
                return Err(format!("node {} has non-block scope {}", id, sc));
            }
            if id.idx() != 0 && sc >= id {
                return Err(format!("node {} is scoped under a later block {}", id, sc));
            }
        }
        Ok(())
    }
}
