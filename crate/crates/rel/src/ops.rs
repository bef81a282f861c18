//! Push-model operators. Each `RelOp` knows the fields it produces and,
//! when driven, stages its own control flow and invokes the consumer's
//! callback once per staged record position. Driving an operator consumes
//! it: staging happens exactly once per pipeline.

use std::fs;

use tandem_ir::{CsvColTy, CsvSpec, ScalarTy, StageError, StagedValue, Stager, Stype};

use crate::error::{RelError, Result};
use crate::plan::AggKind;
use crate::schema::{FieldInfo, FieldTy, RelSchema, StrInterner};

/// Growable staged arrays start at this capacity and double (matches the
/// emitted runtime).
pub const GROW_INITIAL_CAPACITY: usize = 1024;

/// One record flowing through a staged pipeline: the producing operator's
/// fields paired with the staged value of each. The staged values live in
/// the scope of the callback that received them; using them outside is
/// rejected by the graph's scope check.
#[derive(Clone)]
pub struct Record {
    fields: Vec<FieldInfo>,
    vals: Vec<StagedValue>,
}

impl Record {
    pub fn new(fields: Vec<FieldInfo>, vals: Vec<StagedValue>) -> Record {
        assert_eq!(fields.len(), vals.len(), "field/value arity");
        Record { fields, vals }
    }

    pub fn fields(&self) -> &[FieldInfo] {
        &self.fields
    }

    pub fn vals(&self) -> &[StagedValue] {
        &self.vals
    }

    /// Field by name; ambiguous or missing names are staging errors.
    pub fn get(&self, name: &str) -> Result<(&FieldInfo, &StagedValue)> {
        let mut found = None;
        for (i, f) in self.fields.iter().enumerate() {
            if f.name == name {
                if found.is_some() {
                    return Err(RelError::Plan(format!("ambiguous field '{}'", name)));
                }
                found = Some(i);
            }
        }
        match found {
            Some(i) => Ok((&self.fields[i], &self.vals[i])),
            None => Err(RelError::Plan(format!("unknown field '{}'", name))),
        }
    }
}

/// Consumer callback: staged once per record position the producer emits.
pub type RecordSink<'a> = &'a mut dyn FnMut(&mut Stager, Record) -> Result<()>;

/// Expression callback used by filter/project/join/group operators.
pub type ExprFn = Box<dyn FnMut(&mut Stager, &Record) -> Result<StagedValue>>;

type RunFn = Box<dyn FnOnce(&mut Stager, RecordSink<'_>) -> Result<()>>;

/// A staged push operator: output fields plus a one-shot staging driver.
pub struct RelOp {
    fields: Vec<FieldInfo>,
    run: RunFn,
}

impl RelOp {
    /// Assembles an operator from parts; used by the operators here and by
    /// boundary transforms that splice model evaluation into a pipeline.
    pub fn from_parts(fields: Vec<FieldInfo>, run: RunFn) -> RelOp {
        RelOp { fields, run }
    }

    pub fn fields(&self) -> &[FieldInfo] {
        &self.fields
    }

    /// Stages the operator tree, invoking `sink` for every record the tree
    /// produces.
    pub fn drive(self, s: &mut Stager, sink: RecordSink<'_>) -> Result<()> {
        (self.run)(s, sink)
    }
}

// ---- error plumbing through staged control flow ---------------------------

/// Runs a relational body inside a staged loop, carrying `RelError` out
/// through the graph layer's error channel. Public so boundary transforms
/// can stage their own buffering control flow around records.
pub fn loop_rel(
    s: &mut Stager,
    count: &StagedValue,
    body: impl FnOnce(&mut Stager, &StagedValue) -> Result<()>,
) -> Result<()> {
    let mut pending = None;
    let r = s.staged_loop(count, |s, i| {
        body(s, i).map_err(|e| {
            let msg = e.to_string();
            pending = Some(e);
            StageError::Internal(msg)
        })
    });
    match (r, pending) {
        (Err(_), Some(e)) => Err(e),
        (Err(e), None) => Err(e.into()),
        (Ok(()), _) => Ok(()),
    }
}

/// [`loop_rel`]'s counterpart for a staged one-armed conditional.
pub fn when_rel(
    s: &mut Stager,
    cond: &StagedValue,
    body: impl FnOnce(&mut Stager) -> Result<()>,
) -> Result<()> {
    let mut pending = None;
    let r = s.staged_when(cond, |s| {
        body(s).map_err(|e| {
            let msg = e.to_string();
            pending = Some(e);
            StageError::Internal(msg)
        })
    });
    match (r, pending) {
        (Err(_), Some(e)) => Err(e),
        (Err(e), None) => Err(e.into()),
        (Ok(()), _) => Ok(()),
    }
}

/// [`loop_rel`]'s counterpart for a staged while loop.
pub fn while_rel(
    s: &mut Stager,
    cond: impl FnOnce(&mut Stager) -> tandem_ir::stage::Result<StagedValue>,
    body: impl FnOnce(&mut Stager) -> Result<()>,
) -> Result<()> {
    let mut pending = None;
    let r = s.staged_while(cond, |s| {
        body(s).map_err(|e| {
            let msg = e.to_string();
            pending = Some(e);
            StageError::Internal(msg)
        })
    });
    match (r, pending) {
        (Err(_), Some(e)) => Err(e),
        (Err(e), None) => Err(e.into()),
        (Ok(()), _) => Ok(()),
    }
}

// ---- scan ------------------------------------------------------------------

/// Stages a CSV loader and a row loop pushing one record per row. String
/// columns are read once now, at staging time, to intern their values into
/// the pipeline dictionary; the generated program re-reads the file at run
/// time and encodes through the embedded table.
pub fn scan_csv(
    path: &str,
    schema: &RelSchema,
    header: bool,
    interner: &mut StrInterner,
) -> Result<RelOp> {
    let needs_dict = schema.fields.iter().any(|(_, t)| *t == FieldTy::Str);
    if needs_dict {
        intern_file(path, schema, header, interner)?;
    }
    let snapshot = if needs_dict {
        Some(interner.snapshot())
    } else {
        None
    };
    let fields: Vec<FieldInfo> = schema
        .fields
        .iter()
        .map(|(n, t)| FieldInfo {
            name: n.clone(),
            ty: *t,
            dict: if *t == FieldTy::Str {
                snapshot.clone()
            } else {
                None
            },
        })
        .collect();
    let spec = CsvSpec {
        path: path.to_string(),
        header,
        cols: schema
            .fields
            .iter()
            .map(|(n, t)| CsvColTy {
                name: n.clone(),
                ty: t.col_kind(),
                dict: match (*t, &snapshot) {
                    (FieldTy::Str, Some(d)) => d.as_ref().clone(),
                    _ => Vec::new(),
                },
            })
            .collect(),
    };
    let out_fields = fields.clone();
    let run: RunFn = Box::new(move |s, sink| {
        let src = s.csv_open(spec)?;
        let rows = s.csv_rows(&src)?;
        let cols: Vec<StagedValue> = (0..fields.len())
            .map(|j| s.csv_col(&src, j))
            .collect::<tandem_ir::stage::Result<_>>()?;
        loop_rel(s, &rows, |s, i| {
            let vals: Vec<StagedValue> = cols
                .iter()
                .map(|c| s.arr_get(c, i))
                .collect::<tandem_ir::stage::Result<_>>()?;
            sink(s, Record::new(fields.clone(), vals))
        })
    });
    Ok(RelOp {
        fields: out_fields,
        run,
    })
}

/// Staging-time pass over a CSV file interning every string cell. Width
/// problems surface here, early, with the same row numbering the runtime
/// loader uses (1-based over data rows).
fn intern_file(
    path: &str,
    schema: &RelSchema,
    header: bool,
    interner: &mut StrInterner,
) -> Result<()> {
    let text = fs::read_to_string(path)
        .map_err(|e| RelError::Io(format!("reading {}: {}", path, e)))?;
    let mut lines = text.lines();
    if header {
        let _ = lines.next();
    }
    for (rowno, line) in lines.enumerate() {
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != schema.fields.len() {
            return Err(RelError::Io(format!(
                "{}: row {}: expected {} fields, found {}",
                path,
                rowno + 1,
                schema.fields.len(),
                cells.len()
            )));
        }
        for (cell, (_, ty)) in cells.iter().zip(&schema.fields) {
            if *ty == FieldTy::Str {
                interner.intern(cell);
            }
        }
    }
    Ok(())
}

// ---- filter ----------------------------------------------------------------

/// Wraps the consumer in a staged conditional. A constant-true predicate
/// folds away entirely; a constant-false one stages nothing downstream.
pub fn filter(up: RelOp, mut pred: ExprFn) -> RelOp {
    let fields = up.fields.clone();
    let run: RunFn = Box::new(move |s, sink| {
        up.drive(s, &mut |s, rec| {
            let p = pred(s, &rec)?;
            if p.stype != Stype::Bool {
                return Err(RelError::Plan(format!(
                    "filter predicate must be bool, got {}",
                    p.stype
                )));
            }
            when_rel(s, &p, |s| sink(s, rec.clone()))
        })
    });
    RelOp { fields, run }
}

// ---- project ---------------------------------------------------------------

/// Replaces the record with exactly the declared output fields, each
/// computed by its expression. Output names must be unique and nonempty.
pub fn project(up: RelOp, outs: Vec<(FieldInfo, ExprFn)>) -> Result<RelOp> {
    if outs.is_empty() {
        return Err(RelError::Plan("project of zero expressions".into()));
    }
    let mut seen = std::collections::HashSet::new();
    for (f, _) in &outs {
        if !seen.insert(f.name.clone()) {
            return Err(RelError::Plan(format!(
                "duplicate output field '{}'",
                f.name
            )));
        }
    }
    let fields: Vec<FieldInfo> = outs.iter().map(|(f, _)| f.clone()).collect();
    let out_fields = fields.clone();
    let run: RunFn = Box::new(move |s, sink| {
        let mut outs = outs;
        up.drive(s, &mut |s, rec| {
            let mut vals = Vec::with_capacity(outs.len());
            for (f, e) in outs.iter_mut() {
                let v = e(s, &rec)?;
                if v.stype != f.ty.stype() {
                    return Err(RelError::Plan(format!(
                        "projected field '{}' declared {} but stages {}",
                        f.name, f.ty, v.stype
                    )));
                }
                vals.push(v);
            }
            sink(s, Record::new(fields.clone(), vals))
        })
    });
    Ok(RelOp {
        fields: out_fields,
        run,
    })
}

// ---- hash join ---------------------------------------------------------------

/// Join key: the expression plus its declared field type (key pairs must
/// match across sides).
pub struct KeySpec {
    pub ty: FieldTy,
    pub expr: ExprFn,
}

/// Equi-join. The left side is materialized into flat arrays plus a
/// hash table of per-key row chains (build phase); the right side then
/// probes, walking each chain in left insertion order (probe phase).
/// Output order: right row order, then left insertion order within a key.
pub fn hash_join(
    left: RelOp,
    right: RelOp,
    lkeys: Vec<KeySpec>,
    rkeys: Vec<KeySpec>,
) -> Result<RelOp> {
    if lkeys.is_empty() || lkeys.len() != rkeys.len() {
        return Err(RelError::Plan(format!(
            "join needs matching non-empty key lists, got {} vs {}",
            lkeys.len(),
            rkeys.len()
        )));
    }
    for (l, r) in lkeys.iter().zip(&rkeys) {
        if l.ty.scalar_ty() != r.ty.scalar_ty() {
            return Err(RelError::Plan(format!(
                "join key type mismatch: {} vs {}",
                l.ty, r.ty
            )));
        }
    }
    let mut fields = left.fields.clone();
    fields.extend(right.fields.iter().cloned());
    {
        let mut seen = std::collections::HashSet::new();
        for f in &fields {
            if !seen.insert(f.name.clone()) {
                return Err(RelError::Plan(format!(
                    "join output would duplicate field '{}'; project/rename first",
                    f.name
                )));
            }
        }
    }
    let out_fields = fields.clone();
    let lfields = left.fields.clone();
    let run: RunFn = Box::new(move |s, sink| {
        let mut lkeys = lkeys;
        let mut rkeys = rkeys;
        let key_tys: Vec<ScalarTy> = lkeys.iter().map(|k| k.ty.scalar_ty()).collect();
        // Build-side storage: one growable array per left field, plus the
        // chain arrays (head/tail per key group, next per left row).
        let lcols: Vec<StagedValue> = lfields
            .iter()
            .map(|f| s.arr_new_grow(f.ty.scalar_ty()))
            .collect::<tandem_ir::stage::Result<_>>()?;
        let table = s.hash_new(&key_tys)?;
        let head = s.arr_new_grow(ScalarTy::I64)?;
        let tail = s.arr_new_grow(ScalarTy::I64)?;
        let next = s.arr_new_grow(ScalarTy::I64)?;
        left.drive(s, &mut |s, rec| {
            let row = s.arr_len(&next)?;
            for (col, v) in lcols.iter().zip(rec.vals()) {
                s.arr_push(col, v)?;
            }
            let minus1 = s.const_i64(-1);
            s.arr_push(&next, &minus1)?;
            let keys: Vec<StagedValue> = lkeys
                .iter_mut()
                .map(|k| stage_key(s, &rec, k))
                .collect::<Result<_>>()?;
            let before = s.hash_len(&table)?;
            let gid = s.hash_upsert(&table, &keys)?;
            let is_new = s.eq(&gid, &before)?;
            let (head, tail, next) = (&head, &tail, &next);
            s.staged_if(
                &is_new,
                |s| {
                    s.arr_push(head, &row)?;
                    s.arr_push(tail, &row)?;
                    Ok(s.unit())
                },
                |s| {
                    let t = s.arr_get(tail, &gid)?;
                    s.arr_set(next, &t, &row)?;
                    s.arr_set(tail, &gid, &row)?;
                    Ok(s.unit())
                },
            )?;
            Ok(())
        })?;
        // Probe side: for each right record, walk the matching chain.
        right.drive(s, &mut |s, rec| {
            let keys: Vec<StagedValue> = rkeys
                .iter_mut()
                .map(|k| stage_key(s, &rec, k))
                .collect::<Result<_>>()?;
            let gid = s.hash_lookup(&table, &keys)?;
            let zero = s.const_i64(0);
            let found = s.ge(&gid, &zero)?;
            when_rel(s, &found, |s| {
                let first = s.arr_get(&head, &gid)?;
                let cur = s.var_new(&first)?;
                while_rel(
                    s,
                    |s| {
                        let c = s.var_get(&cur)?;
                        let minus1 = s.const_i64(-1);
                        s.ne(&c, &minus1)
                    },
                    |s| {
                        let c = s.var_get(&cur)?;
                        let mut vals: Vec<StagedValue> = lcols
                            .iter()
                            .map(|col| s.arr_get(col, &c))
                            .collect::<tandem_ir::stage::Result<_>>()?;
                        vals.extend(rec.vals().iter().cloned());
                        sink(s, Record::new(fields.clone(), vals))?;
                        let nx = s.arr_get(&next, &c)?;
                        s.var_set(&cur, &nx)?;
                        Ok(())
                    },
                )
            })
        })
    });
    Ok(RelOp {
        fields: out_fields,
        run,
    })
}

fn stage_key(s: &mut Stager, rec: &Record, k: &mut KeySpec) -> Result<StagedValue> {
    let v = (k.expr)(s, rec)?;
    if v.stype != k.ty.stype() {
        return Err(RelError::Plan(format!(
            "join key declared {} but stages {}",
            k.ty, v.stype
        )));
    }
    Ok(v)
}

// ---- group-by aggregate -------------------------------------------------------

/// One aggregate column: output name, kind, input expression (absent only
/// for count), and the input expression's field type.
pub struct AggSpec {
    pub name: String,
    pub kind: AggKind,
    pub expr: Option<ExprFn>,
    pub input_ty: FieldTy,
}

/// Groups records by key expressions and folds aggregates per group in
/// arrival order; once the upstream finishes, emits one record per group
/// in key-first-seen order.
pub fn group_by_agg(up: RelOp, keys: Vec<(FieldInfo, ExprFn)>, aggs: Vec<AggSpec>) -> Result<RelOp> {
    if keys.is_empty() {
        return Err(RelError::Plan("group-by needs at least one key".into()));
    }
    for a in &aggs {
        if a.kind != AggKind::Count && a.input_ty == FieldTy::Str {
            return Err(RelError::Plan(format!(
                "aggregate '{}' ({}) over a string column",
                a.name, a.kind
            )));
        }
        if a.kind != AggKind::Count && a.expr.is_none() {
            return Err(RelError::Plan(format!(
                "aggregate '{}' ({}) needs an input expression",
                a.name, a.kind
            )));
        }
    }
    let mut fields: Vec<FieldInfo> = keys.iter().map(|(f, _)| f.clone()).collect();
    for a in &aggs {
        fields.push(FieldInfo {
            name: a.name.clone(),
            ty: a.output_ty(),
            dict: None,
        });
    }
    {
        let mut seen = std::collections::HashSet::new();
        for f in &fields {
            if !seen.insert(f.name.clone()) {
                return Err(RelError::Plan(format!(
                    "duplicate group-by output field '{}'",
                    f.name
                )));
            }
        }
    }
    let out_fields = fields.clone();
    let run: RunFn = Box::new(move |s, sink| {
        let mut keys = keys;
        let mut aggs = aggs;
        let key_tys: Vec<ScalarTy> = keys.iter().map(|(f, _)| f.ty.scalar_ty()).collect();
        let table = s.hash_new(&key_tys)?;
        let kcols: Vec<StagedValue> = keys
            .iter()
            .map(|(f, _)| s.arr_new_grow(f.ty.scalar_ty()))
            .collect::<tandem_ir::stage::Result<_>>()?;
        // Accumulator arrays: one per aggregate, except avg which keeps a
        // float sum and an int count.
        let mut accs: Vec<Vec<StagedValue>> = Vec::with_capacity(aggs.len());
        for a in &aggs {
            let arrs = match a.kind {
                AggKind::Avg => vec![
                    s.arr_new_grow(ScalarTy::F64)?,
                    s.arr_new_grow(ScalarTy::I64)?,
                ],
                AggKind::Count => vec![s.arr_new_grow(ScalarTy::I64)?],
                _ => vec![s.arr_new_grow(a.input_ty.scalar_ty())?],
            };
            accs.push(arrs);
        }
        up.drive(s, &mut |s, rec| {
            let kv: Vec<StagedValue> = keys
                .iter_mut()
                .map(|(f, e)| {
                    let v = e(s, &rec)?;
                    if v.stype != f.ty.stype() {
                        return Err(RelError::Plan(format!(
                            "group key '{}' declared {} but stages {}",
                            f.name, f.ty, v.stype
                        )));
                    }
                    Ok(v)
                })
                .collect::<Result<_>>()?;
            let before = s.hash_len(&table)?;
            let gid = s.hash_upsert(&table, &kv)?;
            let is_new = s.eq(&gid, &before)?;
            // New group: remember its key values and push neutral
            // accumulators; every row then folds into slot `gid`.
            {
                let kcols = &kcols;
                let accs = &accs;
                let aggs_ref = &aggs;
                let kv2 = kv.clone();
                when_rel(s, &is_new, move |s| {
                    for (col, v) in kcols.iter().zip(&kv2) {
                        s.arr_push(col, v)?;
                    }
                    for (a, arrs) in aggs_ref.iter().zip(accs.iter()) {
                        match a.kind {
                            AggKind::Sum => {
                                let z = neutral_zero(s, a.input_ty);
                                s.arr_push(&arrs[0], &z)?;
                            }
                            AggKind::Count => {
                                let z = s.const_i64(0);
                                s.arr_push(&arrs[0], &z)?;
                            }
                            AggKind::Avg => {
                                let zf = s.const_f64(0.0);
                                let zi = s.const_i64(0);
                                s.arr_push(&arrs[0], &zf)?;
                                s.arr_push(&arrs[1], &zi)?;
                            }
                            AggKind::Min => {
                                let v = neutral_extreme(s, a.input_ty, true);
                                s.arr_push(&arrs[0], &v)?;
                            }
                            AggKind::Max => {
                                let v = neutral_extreme(s, a.input_ty, false);
                                s.arr_push(&arrs[0], &v)?;
                            }
                        }
                    }
                    Ok(())
                })?;
            }
            for (a, arrs) in aggs.iter_mut().zip(accs.iter()) {
                match a.kind {
                    AggKind::Count => {
                        let cur = s.arr_get(&arrs[0], &gid)?;
                        let one = s.const_i64(1);
                        let upd = s.add(&cur, &one)?;
                        s.arr_set(&arrs[0], &gid, &upd)?;
                    }
                    AggKind::Sum => {
                        let v = eval_agg_input(s, &rec, a)?;
                        let cur = s.arr_get(&arrs[0], &gid)?;
                        let upd = s.add(&cur, &v)?;
                        s.arr_set(&arrs[0], &gid, &upd)?;
                    }
                    AggKind::Avg => {
                        let v = eval_agg_input(s, &rec, a)?;
                        let vf = if a.input_ty == FieldTy::F64 {
                            v
                        } else {
                            s.i2f(&v)?
                        };
                        let cur = s.arr_get(&arrs[0], &gid)?;
                        let upd = s.add(&cur, &vf)?;
                        s.arr_set(&arrs[0], &gid, &upd)?;
                        let cnt = s.arr_get(&arrs[1], &gid)?;
                        let one = s.const_i64(1);
                        let cnt2 = s.add(&cnt, &one)?;
                        s.arr_set(&arrs[1], &gid, &cnt2)?;
                    }
                    AggKind::Min | AggKind::Max => {
                        let v = eval_agg_input(s, &rec, a)?;
                        let cur = s.arr_get(&arrs[0], &gid)?;
                        let cond = if a.kind == AggKind::Min {
                            s.lt(&v, &cur)?
                        } else {
                            s.gt(&v, &cur)?
                        };
                        let upd = s.select(&cond, &v, &cur)?;
                        s.arr_set(&arrs[0], &gid, &upd)?;
                    }
                }
            }
            Ok(())
        })?;
        // Emit one record per group, first-seen order.
        let n = s.hash_len(&table)?;
        loop_rel(s, &n, |s, g| {
            let mut vals: Vec<StagedValue> = kcols
                .iter()
                .map(|c| s.arr_get(c, g))
                .collect::<tandem_ir::stage::Result<_>>()?;
            for (a, arrs) in aggs.iter().zip(accs.iter()) {
                let v = match a.kind {
                    AggKind::Avg => {
                        let sum = s.arr_get(&arrs[0], g)?;
                        let cnt = s.arr_get(&arrs[1], g)?;
                        let cf = s.i2f(&cnt)?;
                        s.div(&sum, &cf)?
                    }
                    _ => s.arr_get(&arrs[0], g)?,
                };
                vals.push(v);
            }
            sink(s, Record::new(fields.clone(), vals))
        })
    });
    Ok(RelOp {
        fields: out_fields,
        run,
    })
}

impl AggSpec {
    pub fn output_ty(&self) -> FieldTy {
        match self.kind {
            AggKind::Count => FieldTy::I64,
            AggKind::Avg => FieldTy::F64,
            AggKind::Sum | AggKind::Min | AggKind::Max => self.input_ty,
        }
    }
}

fn eval_agg_input(s: &mut Stager, rec: &Record, a: &mut AggSpec) -> Result<StagedValue> {
    let e = a.expr.as_mut().expect("validated non-count aggregate");
    let v = e(s, rec)?;
    if v.stype != a.input_ty.stype() {
        return Err(RelError::Plan(format!(
            "aggregate '{}' input declared {} but stages {}",
            a.name, a.input_ty, v.stype
        )));
    }
    Ok(v)
}

fn neutral_zero(s: &mut Stager, ty: FieldTy) -> StagedValue {
    match ty {
        FieldTy::F64 => s.const_f64(0.0),
        _ => s.const_i64(0),
    }
}

fn neutral_extreme(s: &mut Stager, ty: FieldTy, min: bool) -> StagedValue {
    match (ty, min) {
        (FieldTy::F64, true) => s.const_f64(f64::INFINITY),
        (FieldTy::F64, false) => s.const_f64(f64::NEG_INFINITY),
        (_, true) => s.const_i64(i64::MAX),
        (_, false) => s.const_i64(i64::MIN),
    }
}

// ---- materialize ----------------------------------------------------------

/// A pipeline result captured as one growable staged array per field.
#[derive(Clone)]
pub struct ColumnBuffer {
    pub fields: Vec<FieldInfo>,
    pub cols: Vec<StagedValue>,
    /// Staged row count set when the driving pipeline finished staging.
    pub rows: StagedValue,
    /// Initial capacity of the growable columns (they double as needed).
    pub capacity: usize,
}

/// Terminal operator: drives the tree, appending every record into fresh
/// growable columns, and returns the buffer handle.
pub fn materialize(op: RelOp, s: &mut Stager) -> Result<ColumnBuffer> {
    let fields = op.fields().to_vec();
    let cols: Vec<StagedValue> = fields
        .iter()
        .map(|f| s.arr_new_grow(f.ty.scalar_ty()))
        .collect::<tandem_ir::stage::Result<_>>()?;
    {
        let cols = &cols;
        op.drive(s, &mut |s, rec| {
            for (col, v) in cols.iter().zip(rec.vals()) {
                s.arr_push(col, v)?;
            }
            Ok(())
        })?;
    }
    let rows = s.arr_len(&cols[0])?;
    Ok(ColumnBuffer {
        fields,
        cols,
        rows,
        capacity: GROW_INITIAL_CAPACITY,
    })
}

/// Loop-mode helper shared with consumers that iterate a buffer, pushing
/// one record per stored row.
pub fn buffer_records(
    buf: &ColumnBuffer,
    s: &mut Stager,
    sink: RecordSink<'_>,
) -> Result<()> {
    let rows = buf.rows.clone();
    loop_rel(s, &rows, |s, i| {
        let vals: Vec<StagedValue> = buf
            .cols
            .iter()
            .map(|c| s.arr_get(c, i))
            .collect::<tandem_ir::stage::Result<_>>()?;
        sink(s, Record::new(buf.fields.clone(), vals))
    })
}

