//! Declarative plan tree and its expression language. Plans are data:
//! they are type-checked against input schemas and then compiled into the
//! push operators of [`crate::ops`] by the pipeline driver.

use std::sync::Arc;

use tandem_ir::{StagedValue, Stager};

use crate::error::{RelError, Result};
use crate::ops::Record;
use crate::schema::{FieldInfo, FieldTy, RelSchema};

/// Scalar expression over the fields of a record.
#[derive(Clone, Debug, PartialEq)]
pub enum PlanExpr {
    Col(String),
    LitI(i64),
    LitF(f64),
    Add(Box<PlanExpr>, Box<PlanExpr>),
    Sub(Box<PlanExpr>, Box<PlanExpr>),
    Mul(Box<PlanExpr>, Box<PlanExpr>),
    Div(Box<PlanExpr>, Box<PlanExpr>),
    Rem(Box<PlanExpr>, Box<PlanExpr>),
    Neg(Box<PlanExpr>),
    Eq(Box<PlanExpr>, Box<PlanExpr>),
    Ne(Box<PlanExpr>, Box<PlanExpr>),
    Lt(Box<PlanExpr>, Box<PlanExpr>),
    Le(Box<PlanExpr>, Box<PlanExpr>),
    Gt(Box<PlanExpr>, Box<PlanExpr>),
    Ge(Box<PlanExpr>, Box<PlanExpr>),
    And(Box<PlanExpr>, Box<PlanExpr>),
    Or(Box<PlanExpr>, Box<PlanExpr>),
    Not(Box<PlanExpr>),
    /// if-then-else value expression
    Cond(Box<PlanExpr>, Box<PlanExpr>, Box<PlanExpr>),
    I2F(Box<PlanExpr>),
}

/// Aggregate kinds for group-by.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AggKind {
    Sum,
    Count,
    Avg,
    Min,
    Max,
}

impl std::fmt::Display for AggKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            AggKind::Sum => "sum",
            AggKind::Count => "count",
            AggKind::Avg => "avg",
            AggKind::Min => "min",
            AggKind::Max => "max",
        };
        f.write_str(s)
    }
}

/// Execution mode for a model applied inside a plan.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UdfMode {
    Scalar,
    Vectorized,
    Pooled,
}

/// Operator tree. `UdfApply` is resolved against the registry by the
/// boundary layer; everything else compiles directly to push operators.
#[derive(Clone, Debug)]
pub enum LogicalPlan {
    Scan {
        path: String,
        schema: RelSchema,
        header: bool,
    },
    Filter {
        input: Box<LogicalPlan>,
        pred: PlanExpr,
    },
    Project {
        input: Box<LogicalPlan>,
        fields: Vec<(String, PlanExpr)>,
    },
    HashJoin {
        left: Box<LogicalPlan>,
        right: Box<LogicalPlan>,
        lkeys: Vec<PlanExpr>,
        rkeys: Vec<PlanExpr>,
    },
    GroupByAgg {
        input: Box<LogicalPlan>,
        keys: Vec<(String, PlanExpr)>,
        aggs: Vec<(String, AggKind, Option<PlanExpr>)>,
    },
    UdfApply {
        input: Box<LogicalPlan>,
        name: String,
        out: String,
        args: Vec<PlanExpr>,
        mode: UdfMode,
    },
}

/// Inferred expression type: a storable field type or a boolean, which
/// only exists transiently inside predicates and conditionals.
#[derive(Clone, Debug)]
pub enum ExprTy {
    Field(FieldTy, Option<Arc<Vec<String>>>),
    Bool,
}

impl ExprTy {
    pub fn as_field(&self, what: &str) -> Result<(FieldTy, Option<Arc<Vec<String>>>)> {
        match self {
            ExprTy::Field(t, d) => Ok((*t, d.clone())),
            ExprTy::Bool => Err(RelError::Plan(format!(
                "{} is boolean; wrap it in a conditional to store it",
                what
            ))),
        }
    }
}

fn numeric(t: &ExprTy, what: &str) -> Result<FieldTy> {
    match t {
        ExprTy::Field(FieldTy::I64, _) => Ok(FieldTy::I64),
        ExprTy::Field(FieldTy::F64, _) => Ok(FieldTy::F64),
        ExprTy::Field(FieldTy::Str, _) => {
            Err(RelError::Plan(format!("{} applied to a string field", what)))
        }
        ExprTy::Bool => Err(RelError::Plan(format!("{} applied to a boolean", what))),
    }
}

/// Type-checks an expression against the fields it will see.
pub fn infer_expr(e: &PlanExpr, fields: &[FieldInfo]) -> Result<ExprTy> {
    use PlanExpr::*;
    Ok(match e {
        Col(n) => {
            let mut found = None;
            for f in fields {
                if &f.name == n {
                    if found.is_some() {
                        return Err(RelError::Plan(format!("ambiguous field '{}'", n)));
                    }
                    found = Some(f);
                }
            }
            let f = found.ok_or_else(|| RelError::Plan(format!("unknown field '{}'", n)))?;
            ExprTy::Field(f.ty, f.dict.clone())
        }
        LitI(_) => ExprTy::Field(FieldTy::I64, None),
        LitF(_) => ExprTy::Field(FieldTy::F64, None),
        Add(a, b) | Sub(a, b) | Mul(a, b) | Div(a, b) | Rem(a, b) => {
            let ta = numeric(&infer_expr(a, fields)?, "arithmetic")?;
            let tb = numeric(&infer_expr(b, fields)?, "arithmetic")?;
            if ta != tb {
                return Err(RelError::Plan(format!(
                    "arithmetic over mixed types {} and {}; convert explicitly",
                    ta, tb
                )));
            }
            if matches!(e, Rem(..)) && ta != FieldTy::I64 {
                return Err(RelError::Plan("remainder needs int64 operands".into()));
            }
            ExprTy::Field(ta, None)
        }
        Neg(a) => ExprTy::Field(numeric(&infer_expr(a, fields)?, "negation")?, None),
        Eq(a, b) | Ne(a, b) => {
            let ta = infer_expr(a, fields)?;
            let tb = infer_expr(b, fields)?;
            match (&ta, &tb) {
                (ExprTy::Field(x, _), ExprTy::Field(y, _)) if x == y => ExprTy::Bool,
                _ => {
                    return Err(RelError::Plan(
                        "equality needs two fields of the same type".into(),
                    ))
                }
            }
        }
        Lt(a, b) | Le(a, b) | Gt(a, b) | Ge(a, b) => {
            let ta = numeric(&infer_expr(a, fields)?, "comparison")?;
            let tb = numeric(&infer_expr(b, fields)?, "comparison")?;
            if ta != tb {
                return Err(RelError::Plan(format!(
                    "comparison over mixed types {} and {}",
                    ta, tb
                )));
            }
            ExprTy::Bool
        }
        And(a, b) | Or(a, b) => {
            for x in [a, b] {
                if !matches!(infer_expr(x, fields)?, ExprTy::Bool) {
                    return Err(RelError::Plan("and/or needs boolean operands".into()));
                }
            }
            ExprTy::Bool
        }
        Not(a) => {
            if !matches!(infer_expr(a, fields)?, ExprTy::Bool) {
                return Err(RelError::Plan("not needs a boolean operand".into()));
            }
            ExprTy::Bool
        }
        Cond(c, t, f) => {
            if !matches!(infer_expr(c, fields)?, ExprTy::Bool) {
                return Err(RelError::Plan("conditional test must be boolean".into()));
            }
            let tt = numeric(&infer_expr(t, fields)?, "conditional arm")?;
            let tf = numeric(&infer_expr(f, fields)?, "conditional arm")?;
            if tt != tf {
                return Err(RelError::Plan(format!(
                    "conditional arms disagree: {} vs {}",
                    tt, tf
                )));
            }
            ExprTy::Field(tt, None)
        }
        I2F(a) => {
            match infer_expr(a, fields)? {
                ExprTy::Field(FieldTy::I64, _) => {}
                other => {
                    return Err(RelError::Plan(format!(
                        "int-to-float conversion needs int64, got {:?}",
                        other
                    )))
                }
            }
            ExprTy::Field(FieldTy::F64, None)
        }
    })
}

/// Stages an expression against a live record. Mirrors `infer_expr`
/// exactly; the staged value's type always matches the inferred one.
pub fn stage_expr(s: &mut Stager, e: &PlanExpr, rec: &Record) -> Result<StagedValue> {
    use PlanExpr::*;
    Ok(match e {
        Col(n) => rec.get(n)?.1.clone(),
        LitI(v) => s.const_i64(*v),
        LitF(v) => s.const_f64(*v),
        Add(a, b) => bin(s, rec, a, b, Stager::add)?,
        Sub(a, b) => bin(s, rec, a, b, Stager::sub)?,
        Mul(a, b) => bin(s, rec, a, b, Stager::mul)?,
        Div(a, b) => bin(s, rec, a, b, Stager::div)?,
        Rem(a, b) => bin(s, rec, a, b, Stager::rem)?,
        Neg(a) => {
            let va = stage_expr(s, a, rec)?;
            s.neg(&va)?
        }
        Eq(a, b) => bin(s, rec, a, b, Stager::eq)?,
        Ne(a, b) => bin(s, rec, a, b, Stager::ne)?,
        Lt(a, b) => bin(s, rec, a, b, Stager::lt)?,
        Le(a, b) => bin(s, rec, a, b, Stager::le)?,
        Gt(a, b) => bin(s, rec, a, b, Stager::gt)?,
        Ge(a, b) => bin(s, rec, a, b, Stager::ge)?,
        And(a, b) => bin(s, rec, a, b, Stager::and)?,
        Or(a, b) => bin(s, rec, a, b, Stager::or)?,
        Not(a) => {
            let va = stage_expr(s, a, rec)?;
            s.not(&va)?
        }
        Cond(c, t, f) => {
            let vc = stage_expr(s, c, rec)?;
            let vt = stage_expr(s, t, rec)?;
            let vf = stage_expr(s, f, rec)?;
            s.select(&vc, &vt, &vf)?
        }
        I2F(a) => {
            let va = stage_expr(s, a, rec)?;
            s.i2f(&va)?
        }
    })
}

fn bin(
    s: &mut Stager,
    rec: &Record,
    a: &PlanExpr,
    b: &PlanExpr,
    f: fn(&mut Stager, &StagedValue, &StagedValue) -> tandem_ir::stage::Result<StagedValue>,
) -> Result<StagedValue> {
    let va = stage_expr(s, a, rec)?;
    let vb = stage_expr(s, b, rec)?;
    Ok(f(s, &va, &vb)?)
}

impl LogicalPlan {
    /// Fields this plan node produces, without staging anything. UDF
    /// output types come from the resolver the boundary layer supplies.
    pub fn output_fields(
        &self,
        udf_out_ty: &dyn Fn(&str) -> Option<FieldTy>,
    ) -> Result<Vec<FieldInfo>> {
        match self {
            LogicalPlan::Scan { schema, .. } => Ok(schema
                .fields
                .iter()
                .map(|(n, t)| FieldInfo::new(n, *t))
                .collect()),
            LogicalPlan::Filter { input, pred } => {
                let fields = input.output_fields(udf_out_ty)?;
                match infer_expr(pred, &fields)? {
                    ExprTy::Bool => Ok(fields),
                    _ => Err(RelError::Plan("filter predicate must be boolean".into())),
                }
            }
            LogicalPlan::Project { input, fields } => {
                let inf = input.output_fields(udf_out_ty)?;
                let mut out = Vec::with_capacity(fields.len());
                for (n, e) in fields {
                    let (ty, dict) = infer_expr(e, &inf)?.as_field(&format!("field '{}'", n))?;
                    out.push(FieldInfo {
                        name: n.clone(),
                        ty,
                        dict,
                    });
                }
                Ok(out)
            }
            LogicalPlan::HashJoin {
                left,
                right,
                lkeys,
                rkeys,
            } => {
                let lf = left.output_fields(udf_out_ty)?;
                let rf = right.output_fields(udf_out_ty)?;
                if lkeys.len() != rkeys.len() || lkeys.is_empty() {
                    return Err(RelError::Plan("join key lists must match".into()));
                }
                for (lk, rk) in lkeys.iter().zip(rkeys) {
                    let (lt, _) = infer_expr(lk, &lf)?.as_field("join key")?;
                    let (rt, _) = infer_expr(rk, &rf)?.as_field("join key")?;
                    if lt.scalar_ty() != rt.scalar_ty() {
                        return Err(RelError::Plan(format!(
                            "join key type mismatch: {} vs {}",
                            lt, rt
                        )));
                    }
                }
                let mut out = lf;
                out.extend(rf);
                Ok(out)
            }
            LogicalPlan::GroupByAgg { input, keys, aggs } => {
                let inf = input.output_fields(udf_out_ty)?;
                let mut out = Vec::new();
                for (n, e) in keys {
                    let (ty, dict) = infer_expr(e, &inf)?.as_field(&format!("key '{}'", n))?;
                    out.push(FieldInfo {
                        name: n.clone(),
                        ty,
                        dict,
                    });
                }
                for (n, k, e) in aggs {
                    let ty = match (k, e) {
                        (AggKind::Count, _) => FieldTy::I64,
                        (AggKind::Avg, Some(e)) => {
                            numeric(&infer_expr(e, &inf)?, "avg")?;
                            FieldTy::F64
                        }
                        (_, Some(e)) => numeric(&infer_expr(e, &inf)?, "aggregate")?,
                        (_, None) => {
                            return Err(RelError::Plan(format!(
                                "aggregate '{}' needs an input expression",
                                n
                            )))
                        }
                    };
                    out.push(FieldInfo::new(n, ty));
                }
                Ok(out)
            }
            LogicalPlan::UdfApply {
                input, name, out, ..
            } => {
                let mut fields = input.output_fields(udf_out_ty)?;
                let ty = udf_out_ty(name)
                    .ok_or_else(|| RelError::Plan(format!("unregistered model '{}'", name)))?;
                fields.push(FieldInfo::new(out, ty));
                Ok(fields)
            }
        }
    }
}
