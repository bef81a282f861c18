//! The three ways a registered function is applied to pipeline records.
//!
//! * **Scalar** — the function body is staged as a (freely inlinable) staged
//!   function and called once per record inside the producing loop; after
//!   optimization the body sits inline in that loop.
//! * **Vectorized** — records accumulate into fixed batch buffers; each full
//!   batch (and one final partial batch) runs a single closed batch-kernel
//!   call, then results are pushed downstream paired with the buffered
//!   companion fields, preserving record order.
//! * **Pooled** — like vectorized, but filled batches are handed to a bounded
//!   queue consumed by dedicated worker threads, and a final merge walks the
//!   completed batches in submission order, re-establishing input order.
//!
//! All three stage the same per-row arithmetic (weights as constants), so
//! their outputs agree bit-for-bit.

use std::rc::Rc;

use tandem_ir::{PoolCfg, ScalarTy, StagedValue, Stager, Stype};
use tandem_rel::{
    loop_rel, when_rel, ExprFn, FieldInfo, FieldTy, Record, RecordSink, RelError, RelOp,
};

use crate::error::{BridgeError, Result};
use crate::registry::UdfDef;

/// Validate arity and output-name uniqueness; build the output field list.
fn output_fields(up: &RelOp, def: &UdfDef, args: &[ExprFn], out_name: &str) -> Result<Vec<FieldInfo>> {
    if args.len() != def.arity {
        return Err(BridgeError::Config(format!(
            "\"{}\" takes {} arguments, got {}",
            def.name,
            def.arity,
            args.len()
        )));
    }
    if up.fields().iter().any(|f| f.name == out_name) {
        return Err(BridgeError::Config(format!(
            "output field \"{out_name}\" collides with an input field; project/rename first"
        )));
    }
    let mut fields = up.fields().to_vec();
    fields.push(FieldInfo::new(out_name, FieldTy::F64));
    Ok(fields)
}

/// Pick an unused staged-function name derived from `base`.
fn fresh_func_name(s: &Stager, base: &str) -> String {
    if s.func_info(base).is_none() {
        return base.to_string();
    }
    let mut k = 2;
    loop {
        let cand = format!("{base}_{k}");
        if s.func_info(&cand).is_none() {
            return cand;
        }
        k += 1;
    }
}

/// Stage one argument expression and require a float64 result.
fn stage_arg(
    s: &mut Stager,
    a: &mut ExprFn,
    rec: &Record,
    udf: &str,
) -> tandem_rel::Result<StagedValue> {
    let v = a(s, rec)?;
    if v.stype != Stype::F64 {
        return Err(RelError::Plan(format!(
            "arguments of \"{udf}\" must be float64, got {}",
            v.stype
        )));
    }
    Ok(v)
}

/// Stage the closed batch kernel shared by vectorized and pooled modes:
/// `(input rows, live row count, outputs) -> unit`, reading `arity` floats
/// per row. The body is a row loop around the same arithmetic chain the
/// scalar mode stages — or opaque matrix-kernel nodes when requested.
fn stage_batch_kernel(
    s: &mut Stager,
    def: &UdfDef,
) -> tandem_rel::Result<tandem_ir::FuncHandle> {
    let name = fresh_func_name(s, &format!("udfk_{}", def.name));
    let params = [
        Stype::arr(Stype::F64),
        Stype::I64,
        Stype::arr(Stype::F64),
    ];
    let arity = def.arity;
    let builder = def.builder.clone();
    let kernel_model = if def.kernel_nodes { def.model.clone() } else { None };
    let f = s.staged_func(&name, &params, true, move |s, ps| {
        let (xin, n, out) = (ps[0].clone(), ps[1].clone(), ps[2].clone());
        match kernel_model {
            Some(model) => {
                tandem_ml::stage_batch(s, &model, &xin, &n, &out, tandem_ml::KernelMode::KernelNode)
                    .map_err(|e| match e {
                        tandem_ml::MlError::Stage(se) => se,
                        other => tandem_ir::StageError::Internal(other.to_string()),
                    })?;
            }
            None => {
                s.staged_loop(&n, |s, r| {
                    let ac = s.const_i64(arity as i64);
                    let base = s.mul(r, &ac)?;
                    let mut vals = Vec::with_capacity(arity);
                    for j in 0..arity {
                        let jc = s.const_i64(j as i64);
                        let at = s.add(&base, &jc)?;
                        vals.push(s.arr_get(&xin, &at)?);
                    }
                    let y = builder(s, &vals)?;
                    s.arr_set(&out, r, &y)?;
                    Ok(())
                })?;
            }
        }
        Ok(s.unit())
    })?;
    Ok(f)
}

/// Batch buffers shared by the vectorized and pooled transforms.
struct BatchBufs {
    in_buf: StagedValue,
    out_buf: StagedValue,
    comp: Vec<StagedValue>,
    cnt: tandem_ir::VarRef,
    batch_c: StagedValue,
    arity_c: StagedValue,
}

fn stage_batch_bufs(
    s: &mut Stager,
    fields: &[FieldInfo],
    batch: usize,
    arity: usize,
) -> tandem_rel::Result<BatchBufs> {
    let batch_c = s.const_i64(batch as i64);
    let cap = s.const_i64((batch * arity) as i64);
    let in_buf = s.arr_new(&cap, ScalarTy::F64)?;
    let out_buf = s.arr_new(&batch_c, ScalarTy::F64)?;
    let comp = fields
        .iter()
        .map(|f| s.arr_new(&batch_c, f.ty.scalar_ty()))
        .collect::<tandem_ir::stage::Result<Vec<_>>>()?;
    let zero = s.const_i64(0);
    let cnt = s.var_new(&zero)?;
    let arity_c = s.const_i64(arity as i64);
    Ok(BatchBufs { in_buf, out_buf, comp, cnt, batch_c, arity_c })
}

/// Store one record's argument row and companion values at slot `idx`,
/// then return the incremented fill count.
fn stage_fill(
    s: &mut Stager,
    bufs: &BatchBufs,
    args: &mut [ExprFn],
    rec: &Record,
    udf: &str,
) -> tandem_rel::Result<StagedValue> {
    let idx = s.var_get(&bufs.cnt)?;
    let base = s.mul(&idx, &bufs.arity_c)?;
    for (j, a) in args.iter_mut().enumerate() {
        let v = stage_arg(s, a, rec, udf)?;
        let jc = s.const_i64(j as i64);
        let at = s.add(&base, &jc)?;
        s.arr_set(&bufs.in_buf, &at, &v)?;
    }
    for (c, v) in bufs.comp.iter().zip(rec.vals()) {
        s.arr_set(c, &idx, v)?;
    }
    let one = s.const_i64(1);
    let nidx = s.add(&idx, &one)?;
    s.var_set(&bufs.cnt, &nidx)?;
    Ok(nidx)
}

/// Push `n` buffered records downstream, each paired with its model output.
fn stage_flush(
    s: &mut Stager,
    bufs: &BatchBufs,
    out_fields: &[FieldInfo],
    n: &StagedValue,
    sink: RecordSink<'_>,
) -> tandem_rel::Result<()> {
    loop_rel(s, n, |s, r| {
        let mut vals = bufs
            .comp
            .iter()
            .map(|c| s.arr_get(c, r))
            .collect::<tandem_ir::stage::Result<Vec<_>>>()?;
        vals.push(s.arr_get(&bufs.out_buf, r)?);
        sink(s, Record::new(out_fields.to_vec(), vals))
    })
}

/// Apply per record: the function body is staged once and called inside the
/// producing loop; the optimizer inlines it there.
pub fn apply_udf_scalar(
    up: RelOp,
    def: Rc<UdfDef>,
    mut args: Vec<ExprFn>,
    out_name: &str,
) -> Result<RelOp> {
    let out_fields = output_fields(&up, &def, &args, out_name)?;
    let fields_for_run = out_fields.clone();
    let out_name = out_name.to_string();
    let run = Box::new(move |s: &mut Stager, sink: RecordSink<'_>| -> tandem_rel::Result<()> {
        let fname = fresh_func_name(s, &format!("udf_{}", def.name));
        let params = vec![Stype::F64; def.arity];
        let builder = def.builder.clone();
        let f = s.staged_func(&fname, &params, false, move |s, ps| builder(s, ps))?;
        let out_field = FieldInfo::new(&out_name, FieldTy::F64);
        up.drive(s, &mut |s, rec| {
            let mut vals = Vec::with_capacity(def.arity);
            for a in args.iter_mut() {
                vals.push(stage_arg(s, a, &rec, &def.name)?);
            }
            let y = s.call(&f, &vals)?;
            let mut fields = rec.fields().to_vec();
            fields.push(out_field.clone());
            let mut vv = rec.vals().to_vec();
            vv.push(y);
            sink(s, Record::new(fields, vv))
        })
    });
    Ok(RelOp::from_parts(fields_for_run, run))
}

/// Apply in batches within the producing thread: fill, run the kernel when
/// full, flush downstream; the final partial batch runs as a smaller call.
/// Kernel invocations are counted on the `udf.<name>.kernel` counter.
pub fn apply_udf_vectorized(
    up: RelOp,
    def: Rc<UdfDef>,
    mut args: Vec<ExprFn>,
    out_name: &str,
) -> Result<RelOp> {
    def.cfg.validate()?;
    let out_fields = output_fields(&up, &def, &args, out_name)?;
    let fields_for_run = out_fields.clone();
    let run = Box::new(move |s: &mut Stager, sink: RecordSink<'_>| -> tandem_rel::Result<()> {
        let kernel = stage_batch_kernel(s, &def)?;
        let up_fields = up.fields().to_vec();
        let bufs = stage_batch_bufs(s, &up_fields, def.cfg.batch, def.arity)?;
        let tick_name = format!("udf.{}.kernel", def.name);
        up.drive(s, &mut |s, rec| {
            let nidx = stage_fill(s, &bufs, &mut args, &rec, &def.name)?;
            let full = s.eq(&nidx, &bufs.batch_c)?;
            when_rel(s, &full, |s| {
                s.tick(&tick_name)?;
                s.call(&kernel, &[bufs.in_buf.clone(), bufs.batch_c.clone(), bufs.out_buf.clone()])?;
                stage_flush(s, &bufs, &out_fields, &bufs.batch_c.clone(), sink)?;
                let z = s.const_i64(0);
                s.var_set(&bufs.cnt, &z)?;
                Ok(())
            })
        })?;
        let rem = s.var_get(&bufs.cnt)?;
        let z = s.const_i64(0);
        let partial = s.gt(&rem, &z)?;
        when_rel(s, &partial, |s| {
            s.tick(&tick_name)?;
            s.call(&kernel, &[bufs.in_buf.clone(), rem.clone(), bufs.out_buf.clone()])?;
            stage_flush(s, &bufs, &out_fields, &rem, sink)
        })
    });
    Ok(RelOp::from_parts(fields_for_run, run))
}

/// Apply on dedicated worker threads: filled batches go through a bounded
/// queue (the producer blocks when it is full), workers run the kernel, and
/// after the producer finishes, completed batches are merged downstream in
/// submission order. Batch hand-offs are counted on `udf.<name>.kernel`.
pub fn apply_udf_pooled(
    up: RelOp,
    def: Rc<UdfDef>,
    mut args: Vec<ExprFn>,
    out_name: &str,
) -> Result<RelOp> {
    def.cfg.validate()?;
    if def.cfg.workers < 1 {
        return Err(BridgeError::Config(format!(
            "pooled application of \"{}\" needs at least one worker",
            def.name
        )));
    }
    let out_fields = output_fields(&up, &def, &args, out_name)?;
    let fields_for_run = out_fields.clone();
    let run = Box::new(move |s: &mut Stager, sink: RecordSink<'_>| -> tandem_rel::Result<()> {
        let kernel = stage_batch_kernel(s, &def)?;
        let up_fields = up.fields().to_vec();
        let cfg = PoolCfg {
            workers: def.cfg.workers,
            queue_cap: def.cfg.queue_cap,
            batch: def.cfg.batch,
            arity: def.arity,
            comp: up_fields.iter().map(|f| f.ty.scalar_ty()).collect(),
        };
        let pool = s.pool_new(cfg, &kernel)?;
        let bufs = stage_batch_bufs(s, &up_fields, def.cfg.batch, def.arity)?;
        let tick_name = format!("udf.{}.kernel", def.name);
        up.drive(s, &mut |s, rec| {
            let nidx = stage_fill(s, &bufs, &mut args, &rec, &def.name)?;
            let full = s.eq(&nidx, &bufs.batch_c)?;
            when_rel(s, &full, |s| {
                s.tick(&tick_name)?;
                s.pool_submit(&pool, &bufs.in_buf, &bufs.comp, &bufs.batch_c)?;
                let z = s.const_i64(0);
                s.var_set(&bufs.cnt, &z)?;
                Ok(())
            })
        })?;
        let rem = s.var_get(&bufs.cnt)?;
        let z = s.const_i64(0);
        let partial = s.gt(&rem, &z)?;
        when_rel(s, &partial, |s| {
            s.tick(&tick_name)?;
            s.pool_submit(&pool, &bufs.in_buf, &bufs.comp, &rem)?;
            Ok(())
        })?;
        s.pool_finish(&pool)?;
        let nb = s.pool_batches(&pool)?;
        loop_rel(s, &nb, |s, b| {
            let n_b = s.pool_batch_len(&pool, b)?;
            let out_b = s.pool_batch_out(&pool, b)?;
            let cols = (0..up_fields.len())
                .map(|j| s.pool_batch_col(&pool, b, j))
                .collect::<tandem_ir::stage::Result<Vec<_>>>()?;
            loop_rel(s, &n_b, |s, r| {
                let mut vals = cols
                    .iter()
                    .map(|c| s.arr_get(c, r))
                    .collect::<tandem_ir::stage::Result<Vec<_>>>()?;
                vals.push(s.arr_get(&out_b, r)?);
                sink(s, Record::new(out_fields.to_vec(), vals))
            })
        })
    });
    Ok(RelOp::from_parts(fields_for_run, run))
}
