//! Deterministic C emitter: lowers a staged graph to one self-contained
//! C11 source file.
//!
//! Emission is a pure function of the graph and the configuration — every
//! table is walked in node-id order and every name set in sorted order,
//! so the same graph always produces byte-identical source. Statements
//! follow the deterministic schedule; functions are lambda-lifted to file
//! scope with captured values passed as trailing parameters; embedded
//! constant arrays, csv dictionaries and print decode tables become
//! static data.
//!
//! Memory policy: every allocation node (array, cell, hash table, pool)
//! is freed at the end of the block that staged it — per iteration for
//! loop bodies, per call for function bodies, at the end of `main` for
//! the root — except when the allocation escapes as the result of its
//! branch or function, in which case ownership passes outward and the
//! storage is left to the process teardown.

use crate::error::{BackendError, Result};
use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;
use tandem_ir::schedule::{schedule, Schedule};
use tandem_ir::stage::{func_meta, FuncMeta};
use tandem_ir::types::*;

/// Lowering knobs.
#[derive(Default, Clone, Debug)]
pub struct EmitConfig {
    /// Lower the batched matrix-multiply kernel to an external BLAS
    /// `dgemm` call instead of the builtin loop nest. Requires linking
    /// against a CBLAS implementation and relaxes bit-exactness of the
    /// kernel's accumulation order.
    pub blas: bool,
}

/// Renders the program as a single C source file.
pub fn emit_c(g: &IrGraph, cfg: &EmitConfig) -> Result<String> {
    g.validate().map_err(BackendError::Emit)?;
    let em = Emitter::new(g, cfg)?;
    em.render()
}

// ---- node typing ---------------------------------------------------------------

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
enum CTy {
    I64,
    F64,
    Bool,
    Unit,
    ArrF,
    ArrI,
    Dict,
    Src,
    Pool,
}

impl CTy {
    fn decl(self) -> Result<&'static str> {
        Ok(match self {
            CTy::I64 => "int64_t",
            CTy::F64 => "double",
            CTy::Bool => "int",
            CTy::ArrF => "arr_f*",
            CTy::ArrI => "arr_i*",
            CTy::Dict => "dict_t*",
            CTy::Pool => "pool_t*",
            CTy::Unit | CTy::Src => {
                return Err(BackendError::Emit("value of a non-materialized type".into()))
            }
        })
    }

    fn from_stype(t: &Stype) -> Result<CTy> {
        Ok(match t {
            Stype::I64 => CTy::I64,
            Stype::F64 => CTy::F64,
            Stype::Bool => CTy::Bool,
            Stype::Unit => CTy::Unit,
            Stype::Arr(e) => match **e {
                Stype::F64 => CTy::ArrF,
                Stype::I64 => CTy::ArrI,
                _ => {
                    return Err(BackendError::Emit(format!(
                        "unsupported array element type {}",
                        e
                    )))
                }
            },
            Stype::Dict => CTy::Dict,
            Stype::Src => CTy::Src,
            Stype::Pool => CTy::Pool,
            Stype::Struct(_) => {
                return Err(BackendError::Emit("struct values never reach the backend".into()))
            }
        })
    }
}

fn scalar_cty(t: ScalarTy) -> CTy {
    match t {
        ScalarTy::I64 => CTy::ArrI,
        ScalarTy::F64 => CTy::ArrF,
    }
}

// ---- emitter state --------------------------------------------------------------

struct FuncInfoC {
    meta: FuncMeta,
    /// Captured outer values threaded through as trailing parameters, in
    /// ascending id order; includes captures of transitively called
    /// functions.
    extras: Vec<NodeId>,
}

struct Emitter<'g> {
    g: &'g IrGraph,
    cfg: &'g EmitConfig,
    sched: Schedule,
    tys: Vec<CTy>,
    funcs: BTreeMap<NodeId, FuncInfoC>,
    /// Sorted counter names -> dense counter index.
    ticks: BTreeMap<String, usize>,
    /// Block id -> allocation that escapes as the block's result.
    escapes: HashMap<NodeId, NodeId>,
    /// Loop body block -> its index node.
    loop_idxs: HashMap<NodeId, NodeId>,
    has_pool: bool,
}

impl<'g> Emitter<'g> {
    fn new(g: &'g IrGraph, cfg: &'g EmitConfig) -> Result<Emitter<'g>> {
        let sched = schedule(g);
        let mut tys = vec![CTy::Unit; g.len()];
        let mut metas: HashMap<NodeId, FuncMeta> = HashMap::new();
        for id in g.ids() {
            let n = g.node(id);
            if n.op == Op::FuncDef {
                metas.insert(id, func_meta(g, id));
            }
        }
        for id in g.ids() {
            tys[id.idx()] = node_ty(g, id, &tys, &metas)?;
        }

        // Captured values per function, callees folded in transitively;
        // ascending id order processes callees before their callers.
        let mut funcs: BTreeMap<NodeId, FuncInfoC> = BTreeMap::new();
        for (&fid, meta) in metas.iter().collect::<BTreeMap<_, _>>() {
            let mut ext: BTreeSet<NodeId> = BTreeSet::new();
            let inside = body_nodes(g, meta.body_block);
            for &id in &inside {
                let node = g.node(id);
                for (i, &o) in node.operands.iter().enumerate() {
                    if inside.contains(&o) || o == meta.body_block {
                        continue;
                    }
                    match g.node(o).op {
                        Op::Const | Op::ConstArrF | Op::ConstArrI => {}
                        Op::FuncDef => {
                            let callee = funcs.get(&o).ok_or_else(|| {
                                BackendError::Emit(format!(
                                    "call of function {} before its definition",
                                    o
                                ))
                            })?;
                            ext.extend(callee.extras.iter().copied());
                        }
                        _ => {
                            // Captured scalar cells cross the call boundary
                            // by value, so a write to one would be lost.
                            if node.op == Op::VarSet && i == 0 {
                                return Err(BackendError::Emit(format!(
                                    "staged function '{}' writes a variable captured from an enclosing scope",
                                    meta.name
                                )));
                            }
                            ext.insert(o);
                        }
                    }
                }
            }
            funcs.insert(
                fid,
                FuncInfoC {
                    meta: meta.clone(),
                    extras: ext.into_iter().collect(),
                },
            );
        }

        let mut ticks = BTreeMap::new();
        let mut name_set = BTreeSet::new();
        for id in g.ids() {
            let n = g.node(id);
            if n.op == Op::Tick {
                if let Some(Imm::S(name)) = n.imms.first() {
                    name_set.insert(name.clone());
                }
            }
        }
        for (i, n) in name_set.into_iter().enumerate() {
            ticks.insert(n, i);
        }

        let mut escapes = HashMap::new();
        for id in g.ids() {
            let n = g.node(id);
            match n.op {
                Op::If if n.operands.len() == 5 => {
                    escapes.insert(n.operands[1], n.operands[3]);
                    escapes.insert(n.operands[2], n.operands[4]);
                }
                Op::FuncDef => {
                    if let Some(r) = metas[&id].result_node {
                        escapes.insert(metas[&id].body_block, r);
                    }
                }
                _ => {}
            }
        }

        let mut loop_idxs = HashMap::new();
        for id in g.ids() {
            if g.node(id).op == Op::LoopIdx {
                loop_idxs.insert(g.node(id).scope, id);
            }
        }

        let has_pool = g.count_op(Op::PoolNew) > 0;
        Ok(Emitter {
            g,
            cfg,
            sched,
            tys,
            funcs,
            ticks,
            escapes,
            loop_idxs,
            has_pool,
        })
    }

    fn ty(&self, id: NodeId) -> CTy {
        self.tys[id.idx()]
    }

    // ---- value references -----------------------------------------------

    fn rf(&self, id: NodeId) -> String {
        let n = self.g.node(id);
        match n.op {
            Op::Const => match &n.imms[0] {
                Imm::I(x) => int_lit(*x),
                Imm::F(x) => float_lit(*x),
                Imm::B(x) => (if *x { "1" } else { "0" }).to_string(),
                _ => "/*bad const*/0".into(),
            },
            Op::ConstArrF | Op::ConstArrI => format!("(&ka{})", id.0),
            _ => format!("v{}", id.0),
        }
    }

    // ---- top-level rendering ----------------------------------------------

    fn render(self) -> Result<String> {
        let mut out = String::with_capacity(1 << 16);
        out.push_str(PRELUDE_TOP);
        if self.has_pool {
            out.push_str("#include <pthread.h>\n");
        }
        out.push_str(PRELUDE_RUNTIME);
        if self.cfg.blas {
            out.push_str(PRELUDE_MM_BLAS);
        } else {
            out.push_str(PRELUDE_MM_LOOPS);
        }
        if self.has_pool {
            out.push_str(PRELUDE_POOL);
        }

        self.render_const_arrays(&mut out)?;
        self.render_csv(&mut out)?;
        self.render_print_tables(&mut out)?;
        self.render_ticks(&mut out)?;
        self.render_funcs(&mut out)?;
        self.render_main(&mut out)?;
        Ok(out)
    }

    fn render_const_arrays(&self, out: &mut String) -> Result<()> {
        for id in self.g.ids() {
            let n = self.g.node(id);
            match (&n.op, n.imms.first()) {
                (Op::ConstArrF, Some(Imm::FVec(vs))) => {
                    let _ = write!(out, "static const double k{}[] = {{", id.0);
                    push_f64_list(out, vs);
                    let _ = writeln!(out, "}};");
                    let _ = writeln!(
                        out,
                        "static arr_f ka{} = {{ (double*)k{}, {}, -1 }};",
                        id.0,
                        id.0,
                        vs.len()
                    );
                }
                (Op::ConstArrI, Some(Imm::IVec(vs))) => {
                    let _ = write!(out, "static const int64_t k{}[] = {{", id.0);
                    for (i, v) in vs.iter().enumerate() {
                        if i > 0 {
                            out.push(',');
                        }
                        out.push_str(&int_lit(*v));
                    }
                    let _ = writeln!(out, "}};");
                    let _ = writeln!(
                        out,
                        "static arr_i ka{} = {{ (int64_t*)k{}, {}, -1 }};",
                        id.0,
                        id.0,
                        vs.len()
                    );
                }
                _ => {}
            }
        }
        out.push('\n');
        Ok(())
    }

    fn render_csv(&self, out: &mut String) -> Result<()> {
        for id in self.g.ids() {
            let n = self.g.node(id);
            if n.op != Op::CsvOpen {
                continue;
            }
            let spec = match n.imms.first() {
                Some(Imm::Csv(s)) => s,
                _ => return Err(BackendError::Emit("malformed csv source".into())),
            };
            let s = id.0;
            for (j, col) in spec.cols.iter().enumerate() {
                let t = match col.ty {
                    ColKind::F64 => "arr_f",
                    _ => "arr_i",
                };
                let _ = writeln!(out, "static {} s{}_c{};", t, s, j);
                if col.ty == ColKind::Str {
                    let _ = write!(out, "static const char* s{}_d{}[] = {{", s, j);
                    for (i, w) in col.dict.iter().enumerate() {
                        if i > 0 {
                            out.push(',');
                        }
                        out.push_str(&c_str(w));
                    }
                    // A dangling comma keeps the initializer non-empty for
                    // an empty dictionary.
                    if col.dict.is_empty() {
                        out.push('0');
                    }
                    let _ = writeln!(out, "}};");
                }
            }
            let _ = writeln!(out, "static int64_t s{}_rows;", s);
            let _ = writeln!(out, "static void s{}_load(void) {{", s);
            let _ = writeln!(out, "  FILE* f = fopen({}, \"r\");", c_str(&spec.path));
            let _ = writeln!(
                out,
                "  if (!f) trap(\"cannot open csv file %s\", {});",
                c_str(&spec.path)
            );
            for (j, col) in spec.cols.iter().enumerate() {
                match col.ty {
                    ColKind::F64 => {
                        let _ = writeln!(out, "  af_init_grow(&s{}_c{});", s, j);
                    }
                    _ => {
                        let _ = writeln!(out, "  ai_init_grow(&s{}_c{});", s, j);
                    }
                }
                if col.ty == ColKind::Str {
                    let _ = writeln!(
                        out,
                        "  sdict sd{}; sd_build(&sd{}, s{}_d{}, {});",
                        j,
                        j,
                        s,
                        j,
                        col.dict.len()
                    );
                }
            }
            let _ = writeln!(out, "  char* line = NULL; size_t lcap = 0;");
            let _ = writeln!(out, "  int64_t rowno = 0; int skip = {};", i32::from(spec.header));
            let _ = writeln!(out, "  for (;;) {{");
            let _ = writeln!(out, "    ssize_t n = getline(&line, &lcap, f);");
            let _ = writeln!(out, "    if (n < 0) break;");
            let _ = writeln!(out, "    if (n > 0 && line[n-1] == '\\n') line[--n] = 0;");
            let _ = writeln!(out, "    if (n > 0 && line[n-1] == '\\r') line[--n] = 0;");
            let _ = writeln!(out, "    if (skip) {{ skip = 0; continue; }}");
            let _ = writeln!(out, "    rowno++;");
            let _ = writeln!(out, "    char* cell = line; char* e;");
            let nc = spec.cols.len();
            for (j, col) in spec.cols.iter().enumerate() {
                let last = j + 1 == nc;
                if last {
                    let _ = writeln!(
                        out,
                        "    e = strchr(cell, ','); if (e) trap(\"%s: row %lld: expected {} fields\", {}, (long long)rowno);",
                        nc,
                        c_str(&spec.path)
                    );
                } else {
                    let _ = writeln!(
                        out,
                        "    e = strchr(cell, ','); if (!e) trap(\"%s: row %lld: expected {} fields\", {}, (long long)rowno); *e = 0;",
                        nc,
                        c_str(&spec.path)
                    );
                }
                match col.ty {
                    ColKind::F64 => {
                        let _ = writeln!(
                            out,
                            "    af_push(&s{}_c{}, parse_f64(cell, {}, rowno, {}));",
                            s,
                            j,
                            c_str(&spec.path),
                            c_str(&col.name)
                        );
                    }
                    ColKind::I64 => {
                        let _ = writeln!(
                            out,
                            "    ai_push(&s{}_c{}, parse_i64(cell, {}, rowno, {}));",
                            s,
                            j,
                            c_str(&spec.path),
                            c_str(&col.name)
                        );
                    }
                    ColKind::Str => {
                        let _ = writeln!(
                            out,
                            "    {{ int64_t code = sd_code(&sd{}, cell); if (code < 0) trap(\"%s: row %lld: unknown string in column '%s': '%s'\", {}, (long long)rowno, {}, cell); ai_push(&s{}_c{}, code); }}",
                            j,
                            c_str(&spec.path),
                            c_str(&col.name),
                            s,
                            j
                        );
                    }
                }
                if !last {
                    let _ = writeln!(out, "    cell = e + 1;");
                }
            }
            let _ = writeln!(out, "  }}");
            let _ = writeln!(out, "  free(line);");
            for (j, col) in spec.cols.iter().enumerate() {
                if col.ty == ColKind::Str {
                    let _ = writeln!(out, "  sd_drop(&sd{});", j);
                }
            }
            let _ = writeln!(out, "  fclose(f);");
            let _ = writeln!(out, "  s{}_rows = rowno;", s);
            let _ = writeln!(out, "}}\n");
        }
        Ok(())
    }

    fn render_print_tables(&self, out: &mut String) -> Result<()> {
        for id in self.g.ids() {
            let n = self.g.node(id);
            if n.op != Op::PrintRow {
                continue;
            }
            if let Some(Imm::Fmt(fmts)) = n.imms.first() {
                for (j, f) in fmts.iter().enumerate() {
                    if let PrintFmt::Str(tab) = f {
                        let _ = write!(out, "static const char* pt{}_{}[] = {{", id.0, j);
                        for (i, w) in tab.iter().enumerate() {
                            if i > 0 {
                                out.push(',');
                            }
                            out.push_str(&c_str(w));
                        }
                        if tab.is_empty() {
                            out.push('0');
                        }
                        let _ = writeln!(out, "}};");
                    }
                }
            }
        }
        Ok(())
    }

    fn render_ticks(&self, out: &mut String) -> Result<()> {
        for i in self.ticks.values() {
            let _ = writeln!(out, "static int64_t tk{};", i);
        }
        let _ = writeln!(out, "static void tk_dump(void) {{");
        for (name, i) in self.ticks.iter() {
            // A counter appears in the trace only once actually hit,
            // matching the interpreted runtime.
            let _ = writeln!(
                out,
                "  if (tk{}) fprintf(stderr, \"#counter %s %lld\\n\", {}, (long long)tk{});",
                i,
                c_str(name),
                i
            );
        }
        let _ = writeln!(out, "}}\n");
        Ok(())
    }

    fn func_sig(&self, fid: NodeId, info: &FuncInfoC) -> Result<String> {
        let ret = match CTy::from_stype(&info.meta.result)? {
            CTy::Unit => "void".to_string(),
            t => t.decl()?.to_string(),
        };
        let mut sig = format!("static {} fn{}(", ret, fid.0);
        let mut first = true;
        for &p in &info.meta.params {
            if !first {
                sig.push_str(", ");
            }
            first = false;
            let _ = write!(sig, "{} v{}", self.ty(p).decl()?, p.0);
        }
        for &e in &info.extras {
            if !first {
                sig.push_str(", ");
            }
            first = false;
            let _ = write!(sig, "{} v{}", self.ty(e).decl()?, e.0);
        }
        if first {
            sig.push_str("void");
        }
        sig.push(')');
        Ok(sig)
    }

    fn render_funcs(&self, out: &mut String) -> Result<()> {
        let ids: Vec<NodeId> = self.funcs.keys().copied().collect();
        for &fid in &ids {
            let sig = self.func_sig(fid, &self.funcs[&fid])?;
            let _ = writeln!(out, "{};", sig);
        }
        out.push('\n');
        for &fid in &ids {
            let info = &self.funcs[&fid];
            let sig = self.func_sig(fid, info)?;
            let name = info.meta.name.clone();
            let body = info.meta.body_block;
            let result = info.meta.result_node;
            let _ = writeln!(out, "/* staged function: {} */", name);
            let _ = writeln!(out, "{} {{", sig);
            self.render_block(out, body, 1)?;
            self.render_frees(out, body, 1);
            if let Some(r) = result {
                let _ = writeln!(out, "  return {};", self.rf(r));
            }
            let _ = writeln!(out, "}}\n");
        }
        Ok(())
    }

    fn render_main(&self, out: &mut String) -> Result<()> {
        let _ = writeln!(out, "int main(int argc, char** argv) {{");
        let _ = writeln!(out, "  g_argc = argc; g_argv = argv;");
        let _ = writeln!(out, "  g_t0 = now_s();");
        let root = self.g.root();
        self.render_block(out, root, 1)?;
        self.render_frees(out, root, 1);
        let _ = writeln!(out, "  tk_dump();");
        let _ = writeln!(out, "  return 0;");
        let _ = writeln!(out, "}}");
        Ok(())
    }

    // ---- statements ---------------------------------------------------------

    fn render_frees(&self, out: &mut String, block: NodeId, depth: usize) {
        let pad = "  ".repeat(depth);
        let esc = self.escapes.get(&block).copied();
        for &id in &self.sched.order[block.idx()] {
            if Some(id) == esc {
                continue;
            }
            let call = match self.g.node(id).op {
                Op::ArrNew | Op::ArrNewGrow | Op::ArrFromConst => match self.ty(id) {
                    CTy::ArrF => "af_free",
                    _ => "ai_free",
                },
                Op::HashNew => "dt_free",
                Op::PoolNew => "pool_free",
                _ => continue,
            };
            let _ = writeln!(out, "{}{}(v{});", pad, call, id.0);
        }
    }

    fn render_block(&self, out: &mut String, block: NodeId, depth: usize) -> Result<()> {
        for &id in &self.sched.order[block.idx()] {
            self.render_stmt(out, id, depth)?;
        }
        Ok(())
    }

    fn render_stmt(&self, out: &mut String, id: NodeId, depth: usize) -> Result<()> {
        let pad = "  ".repeat(depth);
        let n = self.g.node(id);
        let ops = &n.operands;
        let v = format!("v{}", id.0);
        match n.op {
            Op::FuncDef => {} // lifted to file scope

            Op::ArgI64 => {
                let idx = imm_usize(&n.imms[0])?;
                let _ = writeln!(out, "{}int64_t {} = arg_i64({});", pad, v, idx);
            }

            Op::Add | Op::Sub | Op::Mul | Op::Div | Op::Rem => {
                let t = self.ty(id);
                let (a, b) = (self.rf(ops[0]), self.rf(ops[1]));
                let expr = match (n.op, t) {
                    (Op::Div, CTy::I64) => format!("i_div({}, {})", a, b),
                    (Op::Rem, CTy::I64) => format!("i_rem({}, {})", a, b),
                    (op, _) => format!(
                        "{} {} {}",
                        a,
                        match op {
                            Op::Add => "+",
                            Op::Sub => "-",
                            Op::Mul => "*",
                            Op::Div => "/",
                            _ => "%",
                        },
                        b
                    ),
                };
                let _ = writeln!(out, "{}{} {} = {};", pad, t.decl()?, v, expr);
            }
            Op::Neg => {
                let t = self.ty(id);
                let _ = writeln!(out, "{}{} {} = -{};", pad, t.decl()?, v, self.rf(ops[0]));
            }
            Op::Eq | Op::Ne | Op::Lt | Op::Le | Op::Gt | Op::Ge => {
                let cmp = match n.op {
                    Op::Eq => "==",
                    Op::Ne => "!=",
                    Op::Lt => "<",
                    Op::Le => "<=",
                    Op::Gt => ">",
                    _ => ">=",
                };
                let _ = writeln!(
                    out,
                    "{}int {} = {} {} {};",
                    pad,
                    v,
                    self.rf(ops[0]),
                    cmp,
                    self.rf(ops[1])
                );
            }
            Op::And | Op::Or => {
                let op = if n.op == Op::And { "&&" } else { "||" };
                let _ = writeln!(
                    out,
                    "{}int {} = {} {} {};",
                    pad,
                    v,
                    self.rf(ops[0]),
                    op,
                    self.rf(ops[1])
                );
            }
            Op::Not => {
                let _ = writeln!(out, "{}int {} = !{};", pad, v, self.rf(ops[0]));
            }
            Op::Select => {
                let t = self.ty(id);
                let _ = writeln!(
                    out,
                    "{}{} {} = {} ? {} : {};",
                    pad,
                    t.decl()?,
                    v,
                    self.rf(ops[0]),
                    self.rf(ops[1]),
                    self.rf(ops[2])
                );
            }
            Op::IntToFloat => {
                let _ = writeln!(out, "{}double {} = (double){};", pad, v, self.rf(ops[0]));
            }
            Op::Exp => {
                let _ = writeln!(out, "{}double {} = k_exp({});", pad, v, self.rf(ops[0]));
            }

            Op::ArrNew => {
                let f = if self.ty(id) == CTy::ArrF { "af_new" } else { "ai_new" };
                let _ = writeln!(
                    out,
                    "{}{} {} = {}({});",
                    pad,
                    self.ty(id).decl()?,
                    v,
                    f,
                    self.rf(ops[0])
                );
            }
            Op::ArrNewGrow => {
                let f = if self.ty(id) == CTy::ArrF { "af_grow" } else { "ai_grow" };
                let _ = writeln!(out, "{}{} {} = {}();", pad, self.ty(id).decl()?, v, f);
            }
            Op::ArrFromConst => {
                let src = ops[0];
                let len = match self.g.node(src).imms.first() {
                    Some(Imm::FVec(x)) => x.len(),
                    Some(Imm::IVec(x)) => x.len(),
                    _ => return Err(BackendError::Emit("array copy of a non-constant".into())),
                };
                let f = if self.ty(id) == CTy::ArrF { "af_copy" } else { "ai_copy" };
                let _ = writeln!(
                    out,
                    "{}{} {} = {}(k{}, {});",
                    pad,
                    self.ty(id).decl()?,
                    v,
                    f,
                    src.0,
                    len
                );
            }
            Op::ArrGet => {
                let (t, f) = match self.ty(id) {
                    CTy::F64 => ("double", "af_get"),
                    _ => ("int64_t", "ai_get"),
                };
                let _ = writeln!(
                    out,
                    "{}{} {} = {}({}, {});",
                    pad,
                    t,
                    v,
                    f,
                    self.rf(ops[0]),
                    self.rf(ops[1])
                );
            }
            Op::ArrSet => {
                let f = match self.ty(ops[0]) {
                    CTy::ArrF => "af_set",
                    _ => "ai_set",
                };
                let _ = writeln!(
                    out,
                    "{}{}({}, {}, {});",
                    pad,
                    f,
                    self.rf(ops[0]),
                    self.rf(ops[1]),
                    self.rf(ops[2])
                );
            }
            Op::ArrPush => {
                let f = match self.ty(ops[0]) {
                    CTy::ArrF => "af_push",
                    _ => "ai_push",
                };
                let _ = writeln!(
                    out,
                    "{}{}({}, {});",
                    pad,
                    f,
                    self.rf(ops[0]),
                    self.rf(ops[1])
                );
            }
            Op::ArrLen => {
                let _ = writeln!(out, "{}int64_t {} = {}->len;", pad, v, self.rf(ops[0]));
            }

            Op::VarNew => {
                let t = self.ty(id);
                let _ = writeln!(out, "{}{} {} = {};", pad, t.decl()?, v, self.rf(ops[0]));
            }
            Op::VarGet => {
                let t = self.ty(id);
                let _ = writeln!(out, "{}{} {} = v{};", pad, t.decl()?, v, ops[0].0);
            }
            Op::VarSet => {
                let _ = writeln!(out, "{}v{} = {};", pad, ops[0].0, self.rf(ops[1]));
            }

            Op::HashNew => {
                let nk = n.imms.len();
                let _ = writeln!(out, "{}dict_t* {} = dt_new({});", pad, v, nk);
            }
            Op::HashUpsert | Op::HashLookup => {
                let keys = &ops[1..];
                let _ = write!(out, "{}uint64_t kb{}[{}];", pad, id.0, keys.len());
                out.push('\n');
                for (i, &k) in keys.iter().enumerate() {
                    match self.ty(k) {
                        CTy::F64 => {
                            let _ = writeln!(
                                out,
                                "{}{{ double kt = {}; memcpy(&kb{}[{}], &kt, 8); }}",
                                pad,
                                self.rf(k),
                                id.0,
                                i
                            );
                        }
                        _ => {
                            let _ = writeln!(
                                out,
                                "{}kb{}[{}] = (uint64_t){};",
                                pad,
                                id.0,
                                i,
                                self.rf(k)
                            );
                        }
                    }
                }
                let f = if n.op == Op::HashUpsert { "dt_upsert" } else { "dt_lookup" };
                let _ = writeln!(
                    out,
                    "{}int64_t {} = {}({}, kb{});",
                    pad,
                    v,
                    f,
                    self.rf(ops[0]),
                    id.0
                );
            }
            Op::HashLen => {
                let _ = writeln!(out, "{}int64_t {} = {}->len;", pad, v, self.rf(ops[0]));
            }

            Op::CsvOpen => {
                let _ = writeln!(out, "{}s{}_load();", pad, id.0);
            }
            Op::CsvCol => {
                let src = ops[0];
                let j = imm_usize(&n.imms[0])?;
                let _ = writeln!(
                    out,
                    "{}{} {} = &s{}_c{};",
                    pad,
                    self.ty(id).decl()?,
                    v,
                    src.0,
                    j
                );
            }
            Op::CsvRows => {
                let _ = writeln!(out, "{}int64_t {} = s{}_rows;", pad, v, ops[0].0);
            }

            Op::PrintRow => {
                let fmts = match n.imms.first() {
                    Some(Imm::Fmt(f)) => f.clone(),
                    _ => return Err(BackendError::Emit("malformed print formats".into())),
                };
                let mut line = pad.clone();
                for (i, (o, f)) in ops.iter().zip(&fmts).enumerate() {
                    if i > 0 {
                        line.push_str("fputc(',', stdout); ");
                    }
                    match f {
                        PrintFmt::I64 => {
                            let _ = write!(
                                line,
                                "printf(\"%lld\", (long long){}); ",
                                self.rf(*o)
                            );
                        }
                        PrintFmt::F64 => {
                            let _ = write!(line, "printf(\"%.17g\", {}); ", self.rf(*o));
                        }
                        PrintFmt::Str(tab) => {
                            let _ = write!(
                                line,
                                "fputs(str_at(pt{}_{}, {}, {}), stdout); ",
                                id.0,
                                i,
                                tab.len(),
                                self.rf(*o)
                            );
                        }
                    }
                }
                line.push_str("fputc('\\n', stdout);");
                let _ = writeln!(out, "{}", line);
            }
            Op::Tick => {
                let name = imm_str(&n.imms[0])?;
                let idx = self.ticks[&name];
                let _ = writeln!(out, "{}tk{}++;", pad, idx);
            }
            Op::PhaseMark => {
                let name = imm_str(&n.imms[0])?;
                let _ = writeln!(out, "{}ph_mark({});", pad, c_str(&name));
            }

            Op::KernelMatmul => {
                let (k, nn) = (imm_usize(&n.imms[0])?, imm_usize(&n.imms[1])?);
                let _ = writeln!(
                    out,
                    "{}k_mm({}, {}, {}, {}, {}, {});",
                    pad,
                    self.rf(ops[0]),
                    self.rf(ops[1]),
                    self.rf(ops[2]),
                    self.rf(ops[3]),
                    k,
                    nn
                );
            }
            Op::KernelRelu => {
                let _ = writeln!(
                    out,
                    "{}k_relu({}, {}, {});",
                    pad,
                    self.rf(ops[0]),
                    self.rf(ops[1]),
                    self.rf(ops[2])
                );
            }

            Op::PoolNew => self.render_pool_new(out, id, &pad)?,
            Op::PoolSubmit => {
                let cnt = ops[ops.len() - 1];
                let comps = &ops[2..ops.len() - 1];
                let _ = write!(out, "{}{{ const void* cs{}[] = {{", pad, id.0);
                for (i, &c) in comps.iter().enumerate() {
                    if i > 0 {
                        out.push(',');
                    }
                    let _ = write!(out, "{}", self.rf(c));
                }
                if comps.is_empty() {
                    out.push('0');
                }
                let _ = writeln!(
                    out,
                    "}}; pool_submit({}, {}, {}, cs{}); }}",
                    self.rf(ops[0]),
                    self.rf(ops[1]),
                    self.rf(cnt),
                    id.0
                );
            }
            Op::PoolFinish => {
                let _ = writeln!(out, "{}pool_finish({});", pad, self.rf(ops[0]));
            }
            Op::PoolBatches => {
                let _ = writeln!(
                    out,
                    "{}int64_t {} = pool_batches({});",
                    pad,
                    v,
                    self.rf(ops[0])
                );
            }
            Op::PoolBatchLen => {
                let _ = writeln!(
                    out,
                    "{}int64_t {} = pool_batch_len({}, {});",
                    pad,
                    v,
                    self.rf(ops[0]),
                    self.rf(ops[1])
                );
            }
            Op::PoolBatchOut => {
                let _ = writeln!(
                    out,
                    "{}arr_f* {} = pool_batch_out({}, {});",
                    pad,
                    v,
                    self.rf(ops[0]),
                    self.rf(ops[1])
                );
            }
            Op::PoolBatchCol => {
                let j = imm_usize(&n.imms[0])?;
                let t = self.ty(id);
                let cast = if t == CTy::ArrF { "(arr_f*)" } else { "(arr_i*)" };
                let _ = writeln!(
                    out,
                    "{}{} {} = {}pool_batch_col({}, {}, {});",
                    pad,
                    t.decl()?,
                    v,
                    cast,
                    self.rf(ops[0]),
                    self.rf(ops[1]),
                    j
                );
            }

            Op::Loop => {
                let blk = ops[1];
                let idx_name = self
                    .loop_idxs
                    .get(&blk)
                    .map(|ix| format!("v{}", ix.0))
                    .unwrap_or_else(|| format!("it{}", blk.0));
                let _ = writeln!(
                    out,
                    "{}for (int64_t {} = 0; {} < {}; {}++) {{",
                    pad,
                    idx_name,
                    idx_name,
                    self.rf(ops[0]),
                    idx_name
                );
                self.render_block(out, blk, depth + 1)?;
                self.render_frees(out, blk, depth + 1);
                let _ = writeln!(out, "{}}}", pad);
            }
            Op::While => {
                let (cb, cv, bb) = (ops[0], ops[1], ops[2]);
                let _ = writeln!(out, "{}for (;;) {{", pad);
                self.render_block(out, cb, depth + 1)?;
                self.render_frees(out, cb, depth + 1);
                let _ = writeln!(out, "{}  if (!({})) break;", pad, self.rf(cv));
                self.render_block(out, bb, depth + 1)?;
                self.render_frees(out, bb, depth + 1);
                let _ = writeln!(out, "{}}}", pad);
            }
            Op::If => {
                let unit = ops.len() == 3;
                if !unit {
                    let t = self.ty(id);
                    let _ = writeln!(out, "{}{} {};", pad, t.decl()?, v);
                }
                let _ = writeln!(out, "{}if ({}) {{", pad, self.rf(ops[0]));
                self.render_block(out, ops[1], depth + 1)?;
                if !unit {
                    let _ = writeln!(out, "{}  {} = {};", pad, v, self.rf(ops[3]));
                }
                self.render_frees(out, ops[1], depth + 1);
                let _ = writeln!(out, "{}}} else {{", pad);
                self.render_block(out, ops[2], depth + 1)?;
                if !unit {
                    let _ = writeln!(out, "{}  {} = {};", pad, v, self.rf(ops[4]));
                }
                self.render_frees(out, ops[2], depth + 1);
                let _ = writeln!(out, "{}}}", pad);
            }
            Op::Call => {
                let fid = ops[0];
                let info = self
                    .funcs
                    .get(&fid)
                    .ok_or_else(|| BackendError::Emit(format!("call of non-function {}", fid)))?;
                let mut call = format!("fn{}(", fid.0);
                let mut first = true;
                for &a in &ops[1..] {
                    if !first {
                        call.push_str(", ");
                    }
                    first = false;
                    call.push_str(&self.rf(a));
                }
                for &e in &info.extras {
                    if !first {
                        call.push_str(", ");
                    }
                    first = false;
                    call.push_str(&self.rf(e));
                }
                call.push(')');
                match self.ty(id) {
                    CTy::Unit => {
                        let _ = writeln!(out, "{}{};", pad, call);
                    }
                    t => {
                        let _ = writeln!(out, "{}{} {} = {};", pad, t.decl()?, v, call);
                    }
                }
            }

            Op::Const | Op::ConstArrF | Op::ConstArrI | Op::Block | Op::LoopIdx | Op::Param => {
                return Err(BackendError::Emit(format!(
                    "{} cannot appear as a statement",
                    n.op.name()
                )))
            }
        }
        Ok(())
    }

    fn render_pool_new(&self, out: &mut String, id: NodeId, pad: &str) -> Result<()> {
        let n = self.g.node(id);
        let cfg = match n.imms.first() {
            Some(Imm::Pool(c)) => c,
            _ => return Err(BackendError::Emit("malformed pool allocation".into())),
        };
        let kid = n.operands[0];
        let info = self
            .funcs
            .get(&kid)
            .ok_or_else(|| BackendError::Emit("pool kernel is not a function".into()))?;
        if !info.extras.is_empty() {
            return Err(BackendError::Emit(format!(
                "pooled kernel '{}' captures outer values",
                info.meta.name
            )));
        }
        let _ = write!(out, "{}static const int plct{}[] = {{", pad, id.0);
        for (i, t) in cfg.comp.iter().enumerate() {
            if i > 0 {
                out.push(',');
            }
            out.push_str(match t {
                ScalarTy::F64 => "0",
                ScalarTy::I64 => "1",
            });
        }
        if cfg.comp.is_empty() {
            out.push('0');
        }
        let _ = writeln!(out, "}};");
        let _ = writeln!(
            out,
            "{}pool_t* v{} = pool_new({}, {}, {}, {}, plct{}, fn{});",
            pad,
            id.0,
            cfg.workers,
            cfg.queue_cap,
            cfg.arity,
            cfg.comp.len(),
            id.0,
            kid.0
        );
        Ok(())
    }

}

// ---- node type inference ----------------------------------------------------------

fn node_ty(
    g: &IrGraph,
    id: NodeId,
    tys: &[CTy],
    metas: &HashMap<NodeId, FuncMeta>,
) -> Result<CTy> {
    let n = g.node(id);
    let t0 = |tys: &[CTy]| tys[n.operands[0].idx()];
    Ok(match n.op {
        Op::Const => match &n.imms[0] {
            Imm::I(_) => CTy::I64,
            Imm::F(_) => CTy::F64,
            Imm::B(_) => CTy::Bool,
            _ => return Err(BackendError::Emit("malformed constant".into())),
        },
        Op::ConstArrF => CTy::ArrF,
        Op::ConstArrI => CTy::ArrI,
        Op::ArgI64
        | Op::LoopIdx
        | Op::ArrLen
        | Op::HashUpsert
        | Op::HashLookup
        | Op::HashLen
        | Op::CsvRows
        | Op::PoolBatches
        | Op::PoolBatchLen => CTy::I64,
        Op::Add | Op::Sub | Op::Mul | Op::Div | Op::Rem | Op::Neg => t0(tys),
        Op::Eq | Op::Ne | Op::Lt | Op::Le | Op::Gt | Op::Ge | Op::And | Op::Or | Op::Not => {
            CTy::Bool
        }
        Op::Select => tys[n.operands[1].idx()],
        Op::IntToFloat | Op::Exp => CTy::F64,
        Op::ArrNew | Op::ArrNewGrow => match n.imms.first() {
            Some(Imm::Ty(t)) => scalar_cty(*t),
            _ => return Err(BackendError::Emit("malformed array allocation".into())),
        },
        Op::ArrFromConst => t0(tys),
        Op::ArrGet => match t0(tys) {
            CTy::ArrF => CTy::F64,
            CTy::ArrI => CTy::I64,
            other => {
                return Err(BackendError::Emit(format!(
                    "indexing a {:?} value",
                    other
                )))
            }
        },
        Op::VarNew | Op::VarGet => t0(tys),
        Op::VarSet | Op::ArrSet | Op::ArrPush | Op::Block | Op::Loop | Op::While | Op::FuncDef
        | Op::PrintRow | Op::Tick | Op::PhaseMark | Op::KernelMatmul | Op::KernelRelu
        | Op::PoolSubmit | Op::PoolFinish => CTy::Unit,
        Op::If => {
            if n.operands.len() == 5 {
                tys[n.operands[3].idx()]
            } else {
                CTy::Unit
            }
        }
        Op::Param => match n.imms.get(1) {
            Some(Imm::St(t)) => CTy::from_stype(t)?,
            _ => return Err(BackendError::Emit("malformed parameter".into())),
        },
        Op::Call => {
            let meta = metas.get(&n.operands[0]).ok_or_else(|| {
                BackendError::Emit(format!("call of non-function {}", n.operands[0]))
            })?;
            CTy::from_stype(&meta.result)?
        }
        Op::HashNew => CTy::Dict,
        Op::CsvOpen => CTy::Src,
        Op::CsvCol => {
            let src = g.node(n.operands[0]);
            let spec = match src.imms.first() {
                Some(Imm::Csv(s)) => s,
                _ => return Err(BackendError::Emit("column of a non-csv source".into())),
            };
            let j = imm_usize(&n.imms[0])?;
            match spec.cols.get(j).map(|c| c.ty) {
                Some(ColKind::F64) => CTy::ArrF,
                Some(_) => CTy::ArrI,
                None => return Err(BackendError::Emit("csv column out of range".into())),
            }
        }
        Op::PoolNew => CTy::Pool,
        Op::PoolBatchOut => CTy::ArrF,
        Op::PoolBatchCol => {
            let pool = g.node(n.operands[0]);
            let cfg = match pool.imms.first() {
                Some(Imm::Pool(c)) => c,
                _ => return Err(BackendError::Emit("companion of a non-pool".into())),
            };
            let j = imm_usize(&n.imms[0])?;
            match cfg.comp.get(j) {
                Some(ScalarTy::F64) => CTy::ArrF,
                Some(ScalarTy::I64) => CTy::ArrI,
                None => return Err(BackendError::Emit("pool companion out of range".into())),
            }
        }
    })
}

/// All nodes inside a function body subtree (the body block's members,
/// transitively through nested blocks), body block excluded.
fn body_nodes(g: &IrGraph, body: NodeId) -> BTreeSet<NodeId> {
    let mut inside: BTreeSet<NodeId> = BTreeSet::new();
    inside.insert(body);
    for id in g.ids() {
        if id <= body {
            continue;
        }
        if inside.contains(&g.node(id).scope) {
            inside.insert(id);
        }
    }
    inside.remove(&body);
    inside
}

// ---- literals ------------------------------------------------------------------

fn imm_usize(imm: &Imm) -> Result<usize> {
    match imm {
        Imm::U(x) => Ok(*x),
        _ => Err(BackendError::Emit("malformed immediate: expected a size".into())),
    }
}

fn imm_str(imm: &Imm) -> Result<String> {
    match imm {
        Imm::S(x) => Ok(x.clone()),
        _ => Err(BackendError::Emit("malformed immediate: expected a name".into())),
    }
}

fn int_lit(x: i64) -> String {
    if x == i64::MIN {
        "(-9223372036854775807LL - 1)".to_string()
    } else {
        format!("{}LL", x)
    }
}

/// Exact float literal: hexadecimal significand, so the C compiler
/// reconstructs the identical bit pattern.
fn float_lit(x: f64) -> String {
    if x.is_nan() {
        return if x.is_sign_negative() { "(-NAN)".into() } else { "NAN".into() };
    }
    if x.is_infinite() {
        return if x < 0.0 { "(-INFINITY)".into() } else { "INFINITY".into() };
    }
    let bits = x.to_bits();
    let neg = bits >> 63 == 1;
    let exp = ((bits >> 52) & 0x7ff) as i64;
    let mant = bits & ((1u64 << 52) - 1);
    let body = if exp == 0 {
        if mant == 0 {
            "0.0".to_string()
        } else {
            format!("0x0.{:013x}p-1022", mant)
        }
    } else {
        format!("0x1.{:013x}p{:+}", mant, exp - 1023)
    };
    if neg {
        format!("(-{})", body)
    } else {
        body
    }
}

fn c_str(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    out.push('"');
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            '\t' => out.push_str("\\t"),
            c if (c as u32) < 0x20 => {
                let _ = write!(out, "\\x{:02x}", c as u32);
            }
            c => out.push(c),
        }
    }
    out.push('"');
    out
}

fn push_f64_list(out: &mut String, vs: &[f64]) {
    for (i, v) in vs.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        out.push_str(&float_lit(*v));
    }
    if vs.is_empty() {
        out.push('0');
    }
}

// ---- C runtime prelude ------------------------------------------------------------

const PRELUDE_TOP: &str = r##"/* generated - do not edit */
#define _POSIX_C_SOURCE 200809L
#include <stdio.h>
#include <stdlib.h>
#include <stdint.h>
#include <string.h>
#include <stdarg.h>
#include <math.h>
#include <errno.h>
#include <time.h>
"##;

const PRELUDE_RUNTIME: &str = r##"
static int g_argc; static char** g_argv;
static double g_t0;

static void trap(const char* fmt, ...) {
  va_list ap;
  fputs("error: ", stderr);
  va_start(ap, fmt);
  vfprintf(stderr, fmt, ap);
  va_end(ap);
  fputc('\n', stderr);
  exit(2);
}

static double now_s(void) {
  struct timespec ts;
  clock_gettime(CLOCK_MONOTONIC, &ts);
  return (double)ts.tv_sec + 1e-9 * (double)ts.tv_nsec;
}

static void ph_mark(const char* name) {
  fprintf(stderr, "#phase %s %.9f\n", name, now_s() - g_t0);
}

static int64_t arg_i64(int64_t i) {
  if (i + 1 >= (int64_t)g_argc) trap("missing program argument %lld", (long long)i);
  const char* s = g_argv[i + 1];
  errno = 0;
  char* end;
  long long v = strtoll(s, &end, 10);
  if (end == s || *end || errno) trap("bad program argument %lld: '%s'", (long long)i, s);
  return (int64_t)v;
}

static int64_t i_div(int64_t a, int64_t b) {
  if (b == 0) trap("integer division by zero");
  if (a == INT64_MIN && b == -1) trap("integer division overflow");
  return a / b;
}

static int64_t i_rem(int64_t a, int64_t b) {
  if (b == 0) trap("integer remainder by zero");
  if (a == INT64_MIN && b == -1) trap("integer remainder overflow");
  return a % b;
}

/* portable exponential; same operation sequence as the host runtime */
static double k_pow2(long long n) {
  uint64_t b = (uint64_t)(n + 1023) << 52;
  double d;
  memcpy(&d, &b, 8);
  return d;
}

static double k_exp(double x) {
  if (x != x) return x;
  if (x > 709.782712893384) return INFINITY;
  if (x < -745.1332191019412) return 0.0;
  double nf = floor(x * 1.4426950408889634 + 0.5);
  double r = x - nf * 0.6931471805599453;
  r -= nf * 2.3190468138462996e-17;
  double p = 1.0 / 6227020800.0;
  p = p * r + 1.0 / 479001600.0;
  p = p * r + 1.0 / 39916800.0;
  p = p * r + 1.0 / 3628800.0;
  p = p * r + 1.0 / 362880.0;
  p = p * r + 1.0 / 40320.0;
  p = p * r + 1.0 / 5040.0;
  p = p * r + 1.0 / 720.0;
  p = p * r + 1.0 / 120.0;
  p = p * r + 1.0 / 24.0;
  p = p * r + 1.0 / 6.0;
  p = p * r + 0.5;
  p = p * r + 1.0;
  p = p * r + 1.0;
  long long n = (long long)nf;
  if (n >= -1021 && n <= 1023) return p * k_pow2(n);
  if (n < 0) return (p * k_pow2(-1021)) * k_pow2(n + 1021);
  return (p * k_pow2(1023)) * k_pow2(n - 1023);
}

/* arrays: len/cap in elements; cap -1 marks immutable views */
typedef struct { double* p; int64_t len; int64_t cap; } arr_f;
typedef struct { int64_t* p; int64_t len; int64_t cap; } arr_i;

static void* xmalloc(size_t n) {
  void* p = malloc(n ? n : 1);
  if (!p) trap("out of memory");
  return p;
}

static void* xcalloc(size_t n, size_t sz) {
  void* p = calloc(n ? n : 1, sz);
  if (!p) trap("out of memory");
  return p;
}

static arr_f* af_new(int64_t n) {
  if (n < 0) trap("negative array length");
  arr_f* a = (arr_f*)xmalloc(sizeof(arr_f));
  a->p = (double*)xcalloc((size_t)n, sizeof(double));
  a->len = n; a->cap = n;
  return a;
}

static arr_i* ai_new(int64_t n) {
  if (n < 0) trap("negative array length");
  arr_i* a = (arr_i*)xmalloc(sizeof(arr_i));
  a->p = (int64_t*)xcalloc((size_t)n, sizeof(int64_t));
  a->len = n; a->cap = n;
  return a;
}

static arr_f* af_grow(void) {
  arr_f* a = (arr_f*)xmalloc(sizeof(arr_f));
  a->p = NULL; a->len = 0; a->cap = 0;
  return a;
}

static arr_i* ai_grow(void) {
  arr_i* a = (arr_i*)xmalloc(sizeof(arr_i));
  a->p = NULL; a->len = 0; a->cap = 0;
  return a;
}

static arr_f* af_copy(const double* src, int64_t n) {
  arr_f* a = af_new(n);
  memcpy(a->p, src, (size_t)n * sizeof(double));
  return a;
}

static arr_i* ai_copy(const int64_t* src, int64_t n) {
  arr_i* a = ai_new(n);
  memcpy(a->p, src, (size_t)n * sizeof(int64_t));
  return a;
}

static void af_init_grow(arr_f* a) { a->p = NULL; a->len = 0; a->cap = 0; }
static void ai_init_grow(arr_i* a) { a->p = NULL; a->len = 0; a->cap = 0; }

static double af_get(const arr_f* a, int64_t i) {
  if (i < 0 || i >= a->len) trap("array index %lld out of range (length %lld)", (long long)i, (long long)a->len);
  return a->p[i];
}

static int64_t ai_get(const arr_i* a, int64_t i) {
  if (i < 0 || i >= a->len) trap("array index %lld out of range (length %lld)", (long long)i, (long long)a->len);
  return a->p[i];
}

static void af_set(arr_f* a, int64_t i, double v) {
  if (i < 0 || i >= a->len) trap("array index %lld out of range (length %lld)", (long long)i, (long long)a->len);
  if (a->cap < 0) trap("write to constant array");
  a->p[i] = v;
}

static void ai_set(arr_i* a, int64_t i, int64_t v) {
  if (i < 0 || i >= a->len) trap("array index %lld out of range (length %lld)", (long long)i, (long long)a->len);
  if (a->cap < 0) trap("write to constant array");
  a->p[i] = v;
}

static void af_push(arr_f* a, double v) {
  if (a->cap < 0) trap("write to constant array");
  if (a->len == a->cap) {
    int64_t nc = a->cap ? a->cap * 2 : 1024;
    a->p = (double*)realloc(a->p, (size_t)nc * sizeof(double));
    if (!a->p) trap("out of memory");
    a->cap = nc;
  }
  a->p[a->len++] = v;
}

static void ai_push(arr_i* a, int64_t v) {
  if (a->cap < 0) trap("write to constant array");
  if (a->len == a->cap) {
    int64_t nc = a->cap ? a->cap * 2 : 1024;
    a->p = (int64_t*)realloc(a->p, (size_t)nc * sizeof(int64_t));
    if (!a->p) trap("out of memory");
    a->cap = nc;
  }
  a->p[a->len++] = v;
}

static void af_free(arr_f* a) { if (a) { free(a->p); free(a); } }
static void ai_free(arr_i* a) { if (a) { free(a->p); free(a); } }

/* insertion-ordered hash table: composite 64-bit keys -> dense index */
typedef struct {
  uint64_t* keys;
  int64_t* val;
  uint8_t* used;
  int64_t cap;
  int64_t len;
  int64_t nk;
} dict_t;

static uint64_t dt_hash(const uint64_t* k, int64_t nk) {
  uint64_t h = 1469598103934665603ULL;
  for (int64_t i = 0; i < nk; i++) {
    const unsigned char* b = (const unsigned char*)&k[i];
    for (int j = 0; j < 8; j++) { h ^= b[j]; h *= 1099511628211ULL; }
  }
  return h;
}

static dict_t* dt_new(int64_t nk) {
  dict_t* d = (dict_t*)xmalloc(sizeof(dict_t));
  d->cap = 16; d->len = 0; d->nk = nk;
  d->keys = (uint64_t*)xcalloc((size_t)(d->cap * nk), 8);
  d->val = (int64_t*)xcalloc((size_t)d->cap, 8);
  d->used = (uint8_t*)xcalloc((size_t)d->cap, 1);
  return d;
}

static int64_t dt_slot(const dict_t* d, const uint64_t* k) {
  int64_t mask = d->cap - 1;
  int64_t i = (int64_t)(dt_hash(k, d->nk) & (uint64_t)mask);
  while (d->used[i] && memcmp(&d->keys[i * d->nk], k, (size_t)d->nk * 8) != 0) {
    i = (i + 1) & mask;
  }
  return i;
}

static void dt_grow(dict_t* d) {
  int64_t ocap = d->cap;
  uint64_t* okeys = d->keys;
  int64_t* oval = d->val;
  uint8_t* oused = d->used;
  d->cap = ocap * 2;
  d->keys = (uint64_t*)xcalloc((size_t)(d->cap * d->nk), 8);
  d->val = (int64_t*)xcalloc((size_t)d->cap, 8);
  d->used = (uint8_t*)xcalloc((size_t)d->cap, 1);
  for (int64_t i = 0; i < ocap; i++) {
    if (!oused[i]) continue;
    int64_t s = dt_slot(d, &okeys[i * d->nk]);
    memcpy(&d->keys[s * d->nk], &okeys[i * d->nk], (size_t)d->nk * 8);
    d->val[s] = oval[i];
    d->used[s] = 1;
  }
  free(okeys); free(oval); free(oused);
}

static int64_t dt_upsert(dict_t* d, const uint64_t* k) {
  /* grow at 0.7 load */
  if ((d->len + 1) * 10 > d->cap * 7) dt_grow(d);
  int64_t s = dt_slot(d, k);
  if (d->used[s]) return d->val[s];
  memcpy(&d->keys[s * d->nk], k, (size_t)d->nk * 8);
  d->val[s] = d->len;
  d->used[s] = 1;
  return d->len++;
}

static int64_t dt_lookup(const dict_t* d, const uint64_t* k) {
  int64_t s = dt_slot(d, k);
  return d->used[s] ? d->val[s] : -1;
}

static void dt_free(dict_t* d) {
  if (d) { free(d->keys); free(d->val); free(d->used); free(d); }
}

/* string dictionary for csv loading: embedded table -> first-seen code */
typedef struct { const char** tab; int64_t n; int64_t* idx; int64_t cap; } sdict;

static uint64_t s_hash(const char* s) {
  uint64_t h = 1469598103934665603ULL;
  for (; *s; s++) { h ^= (unsigned char)*s; h *= 1099511628211ULL; }
  return h;
}

static void sd_build(sdict* d, const char** tab, int64_t n) {
  d->tab = tab; d->n = n;
  d->cap = 16;
  while (d->cap * 7 < n * 10) d->cap <<= 1;
  d->idx = (int64_t*)xmalloc((size_t)d->cap * 8);
  for (int64_t i = 0; i < d->cap; i++) d->idx[i] = -1;
  for (int64_t i = 0; i < n; i++) {
    int64_t mask = d->cap - 1;
    int64_t s = (int64_t)(s_hash(tab[i]) & (uint64_t)mask);
    while (d->idx[s] >= 0) s = (s + 1) & mask;
    d->idx[s] = i;
  }
}

static int64_t sd_code(const sdict* d, const char* w) {
  int64_t mask = d->cap - 1;
  int64_t s = (int64_t)(s_hash(w) & (uint64_t)mask);
  while (d->idx[s] >= 0) {
    if (strcmp(d->tab[d->idx[s]], w) == 0) return d->idx[s];
    s = (s + 1) & mask;
  }
  return -1;
}

static void sd_drop(sdict* d) { free(d->idx); }

static const char* str_at(const char** tab, int64_t n, int64_t code) {
  if (code < 0 || code >= n) trap("string code %lld out of range (table size %lld)", (long long)code, (long long)n);
  return tab[code];
}

static double parse_f64(const char* s, const char* path, int64_t row, const char* col) {
  if (!*s || *s == ' ' || *s == '\t' || strchr(s, 'x') || strchr(s, 'X')) {
    trap("%s: row %lld: bad float64 in column '%s': '%s'", path, (long long)row, col, s);
  }
  char* end;
  double v = strtod(s, &end);
  if (end == s || *end) trap("%s: row %lld: bad float64 in column '%s': '%s'", path, (long long)row, col, s);
  return v;
}

static int64_t parse_i64(const char* s, const char* path, int64_t row, const char* col) {
  if (!*s || *s == ' ' || *s == '\t') {
    trap("%s: row %lld: bad int64 in column '%s': '%s'", path, (long long)row, col, s);
  }
  errno = 0;
  char* end;
  long long v = strtoll(s, &end, 10);
  if (end == s || *end || errno) trap("%s: row %lld: bad int64 in column '%s': '%s'", path, (long long)row, col, s);
  return (int64_t)v;
}

static void k_relu(const arr_f* x, arr_f* o, int64_t n) {
  if (n < 0 || x->len < n || o->len < n) trap("kernel shape mismatch");
  for (int64_t i = 0; i < n; i++) o->p[i] = x->p[i] > 0.0 ? x->p[i] : 0.0;
}
"##;

const PRELUDE_MM_LOOPS: &str = r##"
static void k_mm(const arr_f* a, const arr_f* b, arr_f* o, int64_t m, int64_t k, int64_t n) {
  if (m < 0 || a->len < m * k || b->len < k * n || o->len < m * n) trap("kernel shape mismatch");
  for (int64_t i = 0; i < m; i++) {
    for (int64_t j = 0; j < n; j++) {
      double acc = 0.0;
      for (int64_t t = 0; t < k; t++) acc += a->p[i * k + t] * b->p[t * n + j];
      o->p[i * n + j] = acc;
    }
  }
}
"##;

const PRELUDE_MM_BLAS: &str = r##"
extern void cblas_dgemm(int order, int transa, int transb, int m, int n, int k,
                        double alpha, const double* a, int lda,
                        const double* b, int ldb,
                        double beta, double* c, int ldc);

static void k_mm(const arr_f* a, const arr_f* b, arr_f* o, int64_t m, int64_t k, int64_t n) {
  if (m < 0 || a->len < m * k || b->len < k * n || o->len < m * n) trap("kernel shape mismatch");
  /* 101 = row major, 111 = no transpose */
  cblas_dgemm(101, 111, 111, (int)m, (int)n, (int)k, 1.0, a->p, (int)k, b->p, (int)n, 0.0, o->p, (int)n);
}
"##;

const PRELUDE_POOL: &str = r##"
/* batching worker pool */
typedef struct { double* in; int64_t cnt; void** comps; int64_t seq; } pjob;

typedef struct {
  pjob* ring;
  int64_t qcap, head, count;
  int closed, finished;
  pthread_mutex_t mu;
  pthread_cond_t can_push, can_pop;
  arr_f* outs;
  void*** rcomps;
  int64_t rcap, nsub;
  pthread_t* ws;
  int64_t nw;
  void (*kern)(arr_f*, int64_t, arr_f*);
  int64_t arity, ncomp;
  const int* compty; /* 0 = f64 companion, 1 = i64 companion */
} pool_t;

static void* pool_worker(void* arg) {
  pool_t* p = (pool_t*)arg;
  for (;;) {
    pthread_mutex_lock(&p->mu);
    while (p->count == 0 && !p->closed) pthread_cond_wait(&p->can_pop, &p->mu);
    if (p->count == 0) { pthread_mutex_unlock(&p->mu); return NULL; }
    pjob j = p->ring[p->head];
    p->head = (p->head + 1) % p->qcap;
    p->count--;
    pthread_cond_signal(&p->can_push);
    pthread_mutex_unlock(&p->mu);

    double* out = (double*)xcalloc((size_t)j.cnt, sizeof(double));
    arr_f ia = { j.in, j.cnt * p->arity, -1 };
    arr_f oa = { out, j.cnt, j.cnt };
    p->kern(&ia, j.cnt, &oa);
    free(j.in);

    pthread_mutex_lock(&p->mu);
    p->outs[j.seq].p = out;
    p->outs[j.seq].len = j.cnt;
    p->outs[j.seq].cap = -1;
    p->rcomps[j.seq] = j.comps;
    pthread_mutex_unlock(&p->mu);
  }
}

static pool_t* pool_new(int64_t nw, int64_t qcap, int64_t arity, int64_t ncomp,
                        const int* compty, void (*kern)(arr_f*, int64_t, arr_f*)) {
  if (nw < 1) trap("pool requires at least one worker");
  if (qcap < 1) qcap = 1;
  pool_t* p = (pool_t*)xmalloc(sizeof(pool_t));
  p->ring = (pjob*)xmalloc((size_t)qcap * sizeof(pjob));
  p->qcap = qcap; p->head = 0; p->count = 0;
  p->closed = 0; p->finished = 0;
  pthread_mutex_init(&p->mu, NULL);
  pthread_cond_init(&p->can_push, NULL);
  pthread_cond_init(&p->can_pop, NULL);
  p->rcap = 16;
  p->outs = (arr_f*)xmalloc((size_t)p->rcap * sizeof(arr_f));
  p->rcomps = (void***)xmalloc((size_t)p->rcap * sizeof(void**));
  p->nsub = 0;
  p->kern = kern; p->arity = arity; p->ncomp = ncomp; p->compty = compty;
  p->nw = nw;
  p->ws = (pthread_t*)xmalloc((size_t)nw * sizeof(pthread_t));
  for (int64_t i = 0; i < nw; i++) {
    if (pthread_create(&p->ws[i], NULL, pool_worker, p) != 0) trap("cannot start pool worker");
  }
  return p;
}

static void pool_submit(pool_t* p, const arr_f* in, int64_t cnt, const void** comps) {
  if (cnt < 0) trap("negative pool batch count");
  int64_t need = cnt * p->arity;
  if (in->len < need) trap("pool batch shorter than its row count");
  double* ci = (double*)xmalloc((size_t)(need ? need : 1) * sizeof(double));
  memcpy(ci, in->p, (size_t)need * sizeof(double));
  void** cc = (void**)xmalloc((size_t)(p->ncomp ? p->ncomp : 1) * sizeof(void*));
  for (int64_t j = 0; j < p->ncomp; j++) {
    if (p->compty[j] == 0) {
      const arr_f* c = (const arr_f*)comps[j];
      if (c->len < cnt) trap("pool companion shorter than the batch row count");
      arr_f* w = (arr_f*)xmalloc(sizeof(arr_f));
      w->p = (double*)xmalloc((size_t)(cnt ? cnt : 1) * sizeof(double));
      memcpy(w->p, c->p, (size_t)cnt * sizeof(double));
      w->len = cnt; w->cap = -1;
      cc[j] = w;
    } else {
      const arr_i* c = (const arr_i*)comps[j];
      if (c->len < cnt) trap("pool companion shorter than the batch row count");
      arr_i* w = (arr_i*)xmalloc(sizeof(arr_i));
      w->p = (int64_t*)xmalloc((size_t)(cnt ? cnt : 1) * sizeof(int64_t));
      memcpy(w->p, c->p, (size_t)cnt * sizeof(int64_t));
      w->len = cnt; w->cap = -1;
      cc[j] = w;
    }
  }
  pthread_mutex_lock(&p->mu);
  if (p->closed) trap("submit to a finished pool");
  int64_t seq = p->nsub++;
  if (seq >= p->rcap) {
    int64_t nc = p->rcap * 2;
    p->outs = (arr_f*)realloc(p->outs, (size_t)nc * sizeof(arr_f));
    p->rcomps = (void***)realloc(p->rcomps, (size_t)nc * sizeof(void**));
    if (!p->outs || !p->rcomps) trap("out of memory");
    p->rcap = nc;
  }
  while (p->count == p->qcap) pthread_cond_wait(&p->can_push, &p->mu);
  pjob* slot = &p->ring[(p->head + p->count) % p->qcap];
  slot->in = ci; slot->cnt = cnt; slot->comps = cc; slot->seq = seq;
  p->count++;
  pthread_cond_signal(&p->can_pop);
  pthread_mutex_unlock(&p->mu);
}

static void pool_finish(pool_t* p) {
  if (p->finished) return;
  pthread_mutex_lock(&p->mu);
  p->closed = 1;
  pthread_cond_broadcast(&p->can_pop);
  pthread_mutex_unlock(&p->mu);
  for (int64_t i = 0; i < p->nw; i++) pthread_join(p->ws[i], NULL);
  p->finished = 1;
}

static int64_t pool_batches(pool_t* p) {
  if (!p->finished) trap("pool results read before finish");
  return p->nsub;
}

static int64_t pool_batch_len(pool_t* p, int64_t seq) {
  if (!p->finished) trap("pool results read before finish");
  if (seq < 0 || seq >= p->nsub) trap("pool batch index out of range");
  return p->outs[seq].len;
}

static arr_f* pool_batch_out(pool_t* p, int64_t seq) {
  if (!p->finished) trap("pool results read before finish");
  if (seq < 0 || seq >= p->nsub) trap("pool batch index out of range");
  return &p->outs[seq];
}

static void* pool_batch_col(pool_t* p, int64_t seq, int64_t j) {
  if (!p->finished) trap("pool results read before finish");
  if (seq < 0 || seq >= p->nsub) trap("pool batch index out of range");
  if (j < 0 || j >= p->ncomp) trap("pool companion column out of range");
  return p->rcomps[seq][j];
}

static void pool_free(pool_t* p) {
  if (!p) return;
  pool_finish(p);
  for (int64_t s = 0; s < p->nsub; s++) {
    free(p->outs[s].p);
    for (int64_t j = 0; j < p->ncomp; j++) {
      if (p->compty[j] == 0) { arr_f* w = (arr_f*)p->rcomps[s][j]; free(w->p); free(w); }
      else { arr_i* w = (arr_i*)p->rcomps[s][j]; free(w->p); free(w); }
    }
    free(p->rcomps[s]);
  }
  free(p->outs); free(p->rcomps); free(p->ring); free(p->ws);
  pthread_mutex_destroy(&p->mu);
  pthread_cond_destroy(&p->can_push);
  pthread_cond_destroy(&p->can_pop);
  free(p);
}
"##;
