//! Compiling a logical plan into a staged operator tree.
//!
//! This is where the relational and model layers meet: every node compiles
//! to a push operator from the relational crate, except function application,
//! which resolves its name against the registry (unknown names fail here,
//! before anything is staged) and splices in the requested application mode.

use tandem_rel::{
    filter, group_by_agg, hash_join, infer_expr, project, scan_csv, stage_expr, AggSpec, ExprFn,
    FieldInfo, KeySpec, LogicalPlan, PlanExpr, RelError, RelOp, StrInterner, UdfMode,
};

use crate::apply::{apply_udf_pooled, apply_udf_scalar, apply_udf_vectorized};
use crate::error::{BridgeError, Result};
use crate::registry::UdfRegistry;

/// Wrap a plan expression as a staging callback.
fn expr_fn(e: PlanExpr) -> ExprFn {
    Box::new(move |s, rec| stage_expr(s, &e, rec))
}

/// Compile a plan against a registry. String columns intern into the shared
/// pipeline dictionary as each scan is compiled (files are read in plan
/// order, left before right under joins).
pub fn compile_plan(
    plan: &LogicalPlan,
    reg: &UdfRegistry,
    interner: &mut StrInterner,
) -> Result<RelOp> {
    // Type-check the whole tree first so every error surfaces at compile
    // time with plan context, including unregistered function names.
    let resolver = reg.out_ty_resolver();
    plan.output_fields(&resolver).map_err(BridgeError::Rel)?;
    compile(plan, reg, interner)
}

fn compile(plan: &LogicalPlan, reg: &UdfRegistry, interner: &mut StrInterner) -> Result<RelOp> {
    match plan {
        LogicalPlan::Scan { path, schema, header } => {
            Ok(scan_csv(path, schema, *header, interner)?)
        }
        LogicalPlan::Filter { input, pred } => {
            let up = compile(input, reg, interner)?;
            Ok(filter(up, expr_fn(pred.clone())))
        }
        LogicalPlan::Project { input, fields } => {
            let up = compile(input, reg, interner)?;
            let inf = up.fields().to_vec();
            let mut outs = Vec::with_capacity(fields.len());
            for (name, e) in fields {
                let (ty, dict) = infer_expr(e, &inf)
                    .map_err(BridgeError::Rel)?
                    .as_field(&format!("field '{name}'"))
                    .map_err(BridgeError::Rel)?;
                outs.push((FieldInfo { name: name.clone(), ty, dict }, expr_fn(e.clone())));
            }
            Ok(project(up, outs)?)
        }
        LogicalPlan::HashJoin { left, right, lkeys, rkeys } => {
            let l = compile(left, reg, interner)?;
            let r = compile(right, reg, interner)?;
            let lk = key_specs(lkeys, l.fields())?;
            let rk = key_specs(rkeys, r.fields())?;
            Ok(hash_join(l, r, lk, rk)?)
        }
        LogicalPlan::GroupByAgg { input, keys, aggs } => {
            let up = compile(input, reg, interner)?;
            let inf = up.fields().to_vec();
            let mut ks = Vec::with_capacity(keys.len());
            for (name, e) in keys {
                let (ty, dict) = infer_expr(e, &inf)
                    .map_err(BridgeError::Rel)?
                    .as_field(&format!("group key '{name}'"))
                    .map_err(BridgeError::Rel)?;
                ks.push((FieldInfo { name: name.clone(), ty, dict }, expr_fn(e.clone())));
            }
            let mut specs = Vec::with_capacity(aggs.len());
            for (name, kind, e) in aggs {
                let (input_ty, ef) = match e {
                    Some(e) => {
                        let (ty, _) = infer_expr(e, &inf)
                            .map_err(BridgeError::Rel)?
                            .as_field(&format!("aggregate '{name}'"))
                            .map_err(BridgeError::Rel)?;
                        (ty, Some(expr_fn(e.clone())))
                    }
                    None => (tandem_rel::FieldTy::I64, None),
                };
                specs.push(AggSpec { name: name.clone(), kind: *kind, expr: ef, input_ty });
            }
            Ok(group_by_agg(up, ks, specs)?)
        }
        LogicalPlan::UdfApply { input, name, out, args, mode } => {
            let up = compile(input, reg, interner)?;
            let def = reg.lookup(name)?;
            let inf = up.fields().to_vec();
            for (i, a) in args.iter().enumerate() {
                let (ty, _) = infer_expr(a, &inf)
                    .map_err(BridgeError::Rel)?
                    .as_field(&format!("argument {i} of \"{name}\""))
                    .map_err(BridgeError::Rel)?;
                if ty != tandem_rel::FieldTy::F64 {
                    return Err(BridgeError::Rel(RelError::Plan(format!(
                        "argument {i} of \"{name}\" must be float64, got {ty}"
                    ))));
                }
            }
            let arg_fns: Vec<ExprFn> = args.iter().map(|a| expr_fn(a.clone())).collect();
            match mode {
                UdfMode::Scalar => apply_udf_scalar(up, def, arg_fns, out),
                UdfMode::Vectorized => apply_udf_vectorized(up, def, arg_fns, out),
                UdfMode::Pooled => apply_udf_pooled(up, def, arg_fns, out),
            }
        }
    }
}

fn key_specs(keys: &[PlanExpr], fields: &[FieldInfo]) -> Result<Vec<KeySpec>> {
    keys.iter()
        .map(|e| {
            let (ty, _) = infer_expr(e, fields)
                .map_err(BridgeError::Rel)?
                .as_field("join key")
                .map_err(BridgeError::Rel)?;
            Ok(KeySpec { ty, expr: expr_fn(e.clone()) })
        })
        .collect()
}
