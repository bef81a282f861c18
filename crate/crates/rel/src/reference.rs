//! Independent reference evaluator: plain nested loops over in-memory
//! rows, never touching the staged graph. Arithmetic follows the same
//! operation order as the staged operators so float results are
//! bit-comparable.

use std::collections::HashMap;
use std::fs;

use crate::plan::{AggKind, LogicalPlan, PlanExpr};
use crate::schema::FieldTy;

/// A concrete value in the reference world. Strings stay strings.
#[derive(Clone, Debug, PartialEq)]
pub enum RVal {
    I(i64),
    F(f64),
    S(String),
    B(bool),
}

impl RVal {
    fn kind(&self) -> &'static str {
        match self {
            RVal::I(_) => "int64",
            RVal::F(_) => "float64",
            RVal::S(_) => "str",
            RVal::B(_) => "bool",
        }
    }

    /// Key representation: bit-for-bit, mirroring how the staged hash
    /// table keys values (floats by bit pattern, strings by dictionary
    /// code which is equivalent to the string itself).
    fn key_bits(&self) -> Result<KeyPart, String> {
        Ok(match self {
            RVal::I(v) => KeyPart::Bits(*v as u64),
            RVal::F(v) => KeyPart::Bits(v.to_bits()),
            RVal::S(v) => KeyPart::Str(v.clone()),
            RVal::B(_) => return Err("boolean used as a key".into()),
        })
    }
}

#[derive(Clone, PartialEq, Eq, Hash, Debug)]
enum KeyPart {
    Bits(u64),
    Str(String),
}

pub type Row = Vec<RVal>;

/// Evaluated table: field names/types plus rows in output order.
#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub fields: Vec<(String, FieldTy)>,
    pub rows: Vec<Row>,
}

/// Scalar model evaluation hook for plans that apply one.
pub type UdfOracle<'a> = &'a dyn Fn(&str, &[RVal]) -> Result<RVal, String>;

/// Evaluates a plan directly. Output row order matches the contract of
/// the staged operators: scans in file order, joins right-major with left
/// insertion order inside a key, groups in key-first-seen order, model
/// application in input order.
pub fn eval_plan(plan: &LogicalPlan, udf: UdfOracle<'_>) -> Result<Table, String> {
    match plan {
        LogicalPlan::Scan {
            path,
            schema,
            header,
        } => read_csv(path, &schema.fields, *header),
        LogicalPlan::Filter { input, pred } => {
            let t = eval_plan(input, udf)?;
            let mut rows = Vec::new();
            for r in &t.rows {
                match eval_expr(pred, &t.fields, r)? {
                    RVal::B(true) => rows.push(r.clone()),
                    RVal::B(false) => {}
                    other => return Err(format!("predicate produced {}", other.kind())),
                }
            }
            Ok(Table {
                fields: t.fields,
                rows,
            })
        }
        LogicalPlan::Project { input, fields } => {
            let t = eval_plan(input, udf)?;
            let mut out_fields = Vec::new();
            let mut rows: Vec<Row> = vec![Vec::new(); t.rows.len()];
            for (name, e) in fields {
                let mut ty = None;
                for (i, r) in t.rows.iter().enumerate() {
                    let v = eval_expr(e, &t.fields, r)?;
                    ty = Some(field_ty_of(&v)?);
                    rows[i].push(v);
                }
                out_fields.push((
                    name.clone(),
                    ty.unwrap_or(infer_static(e, &t.fields)?),
                ));
            }
            Ok(Table {
                fields: out_fields,
                rows,
            })
        }
        LogicalPlan::HashJoin {
            left,
            right,
            lkeys,
            rkeys,
        } => {
            let lt = eval_plan(left, udf)?;
            let rt = eval_plan(right, udf)?;
            let mut fields = lt.fields.clone();
            fields.extend(rt.fields.iter().cloned());
            let mut rows = Vec::new();
            for rr in &rt.rows {
                let rk = key_of(rkeys, &rt.fields, rr)?;
                for lr in &lt.rows {
                    let lk = key_of(lkeys, &lt.fields, lr)?;
                    if lk == rk {
                        let mut row = lr.clone();
                        row.extend(rr.iter().cloned());
                        rows.push(row);
                    }
                }
            }
            Ok(Table { fields, rows })
        }
        LogicalPlan::GroupByAgg { input, keys, aggs } => {
            let t = eval_plan(input, udf)?;
            eval_group_by(&t, keys, aggs)
        }
        LogicalPlan::UdfApply {
            input,
            name,
            out,
            args,
            ..
        } => {
            let t = eval_plan(input, udf)?;
            let mut fields = t.fields.clone();
            let mut rows = Vec::with_capacity(t.rows.len());
            let mut out_ty = FieldTy::F64;
            for r in &t.rows {
                let argv: Vec<RVal> = args
                    .iter()
                    .map(|a| eval_expr(a, &t.fields, r))
                    .collect::<Result<_, _>>()?;
                let v = udf(name, &argv)?;
                out_ty = field_ty_of(&v)?;
                let mut row = r.clone();
                row.push(v);
                rows.push(row);
            }
            fields.push((out.clone(), out_ty));
            Ok(Table { fields, rows })
        }
    }
}

fn field_ty_of(v: &RVal) -> Result<FieldTy, String> {
    Ok(match v {
        RVal::I(_) => FieldTy::I64,
        RVal::F(_) => FieldTy::F64,
        RVal::S(_) => FieldTy::Str,
        RVal::B(_) => return Err("boolean cannot be stored in a field".into()),
    })
}

fn infer_static(e: &PlanExpr, _fields: &[(String, FieldTy)]) -> Result<FieldTy, String> {
    // Only reached for empty inputs, where any numeric type prints the
    // same empty result; default by literal shape.
    Ok(match e {
        PlanExpr::LitF(_) | PlanExpr::I2F(_) | PlanExpr::Div(..) => FieldTy::F64,
        _ => FieldTy::I64,
    })
}

fn key_of(
    keys: &[PlanExpr],
    fields: &[(String, FieldTy)],
    row: &Row,
) -> Result<Vec<KeyPart>, String> {
    keys.iter()
        .map(|k| eval_expr(k, fields, row)?.key_bits())
        .collect()
}

enum Acc {
    SumI(i64),
    SumF(f64),
    Count(i64),
    Avg(f64, i64),
    MinI(i64),
    MinF(f64),
    MaxI(i64),
    MaxF(f64),
}

fn eval_group_by(
    t: &Table,
    keys: &[(String, PlanExpr)],
    aggs: &[(String, AggKind, Option<PlanExpr>)],
) -> Result<Table, String> {
    struct Group {
        key_vals: Row,
        accs: Vec<Acc>,
    }
    let mut index: HashMap<Vec<KeyPart>, usize> = HashMap::new();
    let mut groups: Vec<Group> = Vec::new();
    for r in &t.rows {
        let kexprs: Vec<PlanExpr> = keys.iter().map(|(_, e)| e.clone()).collect();
        let kb = key_of(&kexprs, &t.fields, r)?;
        let gi = match index.get(&kb) {
            Some(&i) => i,
            None => {
                let key_vals: Row = keys
                    .iter()
                    .map(|(_, e)| eval_expr(e, &t.fields, r))
                    .collect::<Result<_, _>>()?;
                let accs = aggs
                    .iter()
                    .map(|(_, k, e)| init_acc(*k, e, &t.fields))
                    .collect::<Result<_, _>>()?;
                groups.push(Group { key_vals, accs });
                index.insert(kb, groups.len() - 1);
                groups.len() - 1
            }
        };
        for ((_, k, e), acc) in aggs.iter().zip(groups[gi].accs.iter_mut()) {
            let v = match e {
                Some(e) => Some(eval_expr(e, &t.fields, r)?),
                None => None,
            };
            match (acc, *k, v) {
                (Acc::Count(c), AggKind::Count, _) => *c += 1,
                (Acc::SumI(a), AggKind::Sum, Some(RVal::I(v))) => *a = a.wrapping_add(v),
                (Acc::SumF(a), AggKind::Sum, Some(RVal::F(v))) => *a += v,
                (Acc::Avg(sf, c), AggKind::Avg, Some(v)) => {
                    let vf = match v {
                        RVal::F(x) => x,
                        RVal::I(x) => x as f64,
                        other => return Err(format!("avg over {}", other.kind())),
                    };
                    *sf += vf;
                    *c += 1;
                }
                (Acc::MinI(a), AggKind::Min, Some(RVal::I(v))) => {
                    if v < *a {
                        *a = v;
                    }
                }
                (Acc::MinF(a), AggKind::Min, Some(RVal::F(v))) => {
                    // select(v < cur, v, cur): mirrors the staged fold.
                    if v < *a {
                        *a = v;
                    }
                }
                (Acc::MaxI(a), AggKind::Max, Some(RVal::I(v))) => {
                    if v > *a {
                        *a = v;
                    }
                }
                (Acc::MaxF(a), AggKind::Max, Some(RVal::F(v))) => {
                    if v > *a {
                        *a = v;
                    }
                }
                (_, k, v) => {
                    return Err(format!(
                        "aggregate {} over {:?}",
                        k,
                        v.map(|x| x.kind().to_string())
                    ))
                }
            }
        }
    }
    let mut fields: Vec<(String, FieldTy)> = Vec::new();
    for (i, (n, _)) in keys.iter().enumerate() {
        let ty = groups
            .first()
            .map(|g| field_ty_of(&g.key_vals[i]))
            .transpose()?
            .unwrap_or(FieldTy::I64);
        fields.push((n.clone(), ty));
    }
    for (n, k, e) in aggs {
        let ty = match k {
            AggKind::Count => FieldTy::I64,
            AggKind::Avg => FieldTy::F64,
            _ => match e {
                Some(e) => infer_numeric_ty(e, &t.fields)?,
                None => return Err("aggregate needs an expression".into()),
            },
        };
        fields.push((n.clone(), ty));
    }
    let rows = groups
        .into_iter()
        .map(|g| {
            let mut row = g.key_vals;
            for acc in g.accs {
                row.push(match acc {
                    Acc::SumI(v) | Acc::Count(v) | Acc::MinI(v) | Acc::MaxI(v) => RVal::I(v),
                    Acc::SumF(v) | Acc::MinF(v) | Acc::MaxF(v) => RVal::F(v),
                    Acc::Avg(s, c) => RVal::F(s / c as f64),
                });
            }
            row
        })
        .collect();
    Ok(Table { fields, rows })
}

/// Numeric result type of an expression. Mixed-type arithmetic is
/// rejected by the plan type checker before this runs, so propagating the
/// first numeric leaf's type matches the checker's answer.
fn infer_numeric_ty(e: &PlanExpr, fields: &[(String, FieldTy)]) -> Result<FieldTy, String> {
    use PlanExpr::*;
    Ok(match e {
        Col(n) => {
            fields
                .iter()
                .find(|(fname, _)| fname == n)
                .ok_or_else(|| format!("unknown field '{}'", n))?
                .1
        }
        LitI(_) => FieldTy::I64,
        LitF(_) | I2F(_) => FieldTy::F64,
        Add(a, _) | Sub(a, _) | Mul(a, _) | Div(a, _) | Rem(a, _) | Neg(a) => {
            infer_numeric_ty(a, fields)?
        }
        Cond(_, t, _) => infer_numeric_ty(t, fields)?,
        _ => return Err("aggregate input must be numeric".into()),
    })
}

fn init_acc(
    k: AggKind,
    e: &Option<PlanExpr>,
    fields: &[(String, FieldTy)],
) -> Result<Acc, String> {
    let ty = match (k, e) {
        (AggKind::Count, _) => FieldTy::I64,
        (_, Some(e)) => infer_numeric_ty(e, fields)?,
        (_, None) => return Err("aggregate needs an expression".into()),
    };
    Ok(match (k, ty) {
        (AggKind::Count, _) => Acc::Count(0),
        (AggKind::Sum, FieldTy::I64) => Acc::SumI(0),
        (AggKind::Sum, _) => Acc::SumF(0.0),
        (AggKind::Avg, _) => Acc::Avg(0.0, 0),
        (AggKind::Min, FieldTy::I64) => Acc::MinI(i64::MAX),
        (AggKind::Min, _) => Acc::MinF(f64::INFINITY),
        (AggKind::Max, FieldTy::I64) => Acc::MaxI(i64::MIN),
        (AggKind::Max, _) => Acc::MaxF(f64::NEG_INFINITY),
    })
}

/// Evaluates one expression over a row.
pub fn eval_expr(
    e: &PlanExpr,
    fields: &[(String, FieldTy)],
    row: &Row,
) -> Result<RVal, String> {
    use PlanExpr::*;
    Ok(match e {
        Col(n) => {
            let mut found = None;
            for (i, (fname, _)) in fields.iter().enumerate() {
                if fname == n {
                    if found.is_some() {
                        return Err(format!("ambiguous field '{}'", n));
                    }
                    found = Some(i);
                }
            }
            let i = found.ok_or_else(|| format!("unknown field '{}'", n))?;
            row[i].clone()
        }
        LitI(v) => RVal::I(*v),
        LitF(v) => RVal::F(*v),
        Add(a, b) => arith(e, eval_expr(a, fields, row)?, eval_expr(b, fields, row)?)?,
        Sub(a, b) | Mul(a, b) | Div(a, b) | Rem(a, b) => {
            arith(e, eval_expr(a, fields, row)?, eval_expr(b, fields, row)?)?
        }
        Neg(a) => match eval_expr(a, fields, row)? {
            RVal::I(v) => RVal::I(v.wrapping_neg()),
            RVal::F(v) => RVal::F(-v),
            other => return Err(format!("negation of {}", other.kind())),
        },
        Eq(a, b) | Ne(a, b) | Lt(a, b) | Le(a, b) | Gt(a, b) | Ge(a, b) => {
            compare(e, eval_expr(a, fields, row)?, eval_expr(b, fields, row)?)?
        }
        And(a, b) => match (eval_expr(a, fields, row)?, eval_expr(b, fields, row)?) {
            (RVal::B(x), RVal::B(y)) => RVal::B(x && y),
            _ => return Err("and over non-booleans".into()),
        },
        Or(a, b) => match (eval_expr(a, fields, row)?, eval_expr(b, fields, row)?) {
            (RVal::B(x), RVal::B(y)) => RVal::B(x || y),
            _ => return Err("or over non-booleans".into()),
        },
        Not(a) => match eval_expr(a, fields, row)? {
            RVal::B(x) => RVal::B(!x),
            _ => return Err("not over a non-boolean".into()),
        },
        Cond(c, t, f) => match eval_expr(c, fields, row)? {
            // Both arms evaluate, like the staged select.
            RVal::B(cond) => {
                let vt = eval_expr(t, fields, row)?;
                let vf = eval_expr(f, fields, row)?;
                if cond {
                    vt
                } else {
                    vf
                }
            }
            _ => return Err("conditional test must be boolean".into()),
        },
        I2F(a) => match eval_expr(a, fields, row)? {
            RVal::I(v) => RVal::F(v as f64),
            other => return Err(format!("int-to-float of {}", other.kind())),
        },
    })
}

fn arith(e: &PlanExpr, a: RVal, b: RVal) -> Result<RVal, String> {
    use PlanExpr::*;
    Ok(match (a, b) {
        (RVal::I(x), RVal::I(y)) => RVal::I(match e {
            Add(..) => x.wrapping_add(y),
            Sub(..) => x.wrapping_sub(y),
            Mul(..) => x.wrapping_mul(y),
            Div(..) => {
                if y == 0 {
                    return Err("division by zero".into());
                }
                x.wrapping_div(y)
            }
            Rem(..) => {
                if y == 0 {
                    return Err("remainder by zero".into());
                }
                x.wrapping_rem(y)
            }
            _ => unreachable!(),
        }),
        (RVal::F(x), RVal::F(y)) => RVal::F(match e {
            Add(..) => x + y,
            Sub(..) => x - y,
            Mul(..) => x * y,
            Div(..) => x / y,
            Rem(..) => return Err("remainder over floats".into()),
            _ => unreachable!(),
        }),
        (a, b) => return Err(format!("arithmetic over {} and {}", a.kind(), b.kind())),
    })
}

fn compare(e: &PlanExpr, a: RVal, b: RVal) -> Result<RVal, String> {
    use PlanExpr::*;
    let b_of = |o: std::cmp::Ordering| -> bool {
        match e {
            Lt(..) => o == std::cmp::Ordering::Less,
            Le(..) => o != std::cmp::Ordering::Greater,
            Gt(..) => o == std::cmp::Ordering::Greater,
            Ge(..) => o != std::cmp::Ordering::Less,
            _ => unreachable!(),
        }
    };
    Ok(RVal::B(match (e, a, b) {
        (Eq(..), RVal::I(x), RVal::I(y)) => x == y,
        (Ne(..), RVal::I(x), RVal::I(y)) => x != y,
        (Eq(..), RVal::F(x), RVal::F(y)) => x == y,
        (Ne(..), RVal::F(x), RVal::F(y)) => x != y,
        (Eq(..), RVal::S(x), RVal::S(y)) => x == y,
        (Ne(..), RVal::S(x), RVal::S(y)) => x != y,
        (_, RVal::I(x), RVal::I(y)) => b_of(x.cmp(&y)),
        (_, RVal::F(x), RVal::F(y)) => match x.partial_cmp(&y) {
            Some(o) => b_of(o),
            None => false,
        },
        (_, a, b) => return Err(format!("comparison over {} and {}", a.kind(), b.kind())),
    }))
}

/// Reads a CSV with the same dialect and validation as the staged loader:
/// comma separated, optional header, no quoting, 1-based data-row numbers
/// in errors.
pub fn read_csv(
    path: &str,
    fields: &[(String, FieldTy)],
    header: bool,
) -> Result<Table, String> {
    let text = fs::read_to_string(path).map_err(|e| format!("reading {}: {}", path, e))?;
    let mut lines = text.lines();
    if header {
        let _ = lines.next();
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != fields.len() {
            return Err(format!(
                "{}: row {}: expected {} fields, found {}",
                path,
                i + 1,
                fields.len(),
                cells.len()
            ));
        }
        let mut row = Vec::with_capacity(cells.len());
        for (cell, (fname, ty)) in cells.iter().zip(fields) {
            row.push(match ty {
                FieldTy::I64 => RVal::I(cell.parse::<i64>().map_err(|_| {
                    format!("{}: row {}: field '{}': bad int64 '{}'", path, i + 1, fname, cell)
                })?),
                FieldTy::F64 => RVal::F(cell.parse::<f64>().map_err(|_| {
                    format!(
                        "{}: row {}: field '{}': bad float64 '{}'",
                        path,
                        i + 1,
                        fname,
                        cell
                    )
                })?),
                FieldTy::Str => RVal::S((*cell).to_string()),
            });
        }
        rows.push(row);
    }
    Ok(Table {
        fields: fields.to_vec(),
        rows,
    })
}

/// Formats a table exactly like the staged print sink: comma-separated
/// fields, ints in decimal, floats with 17 significant digits, strings
/// verbatim.
pub fn format_rows(t: &Table) -> Vec<String> {
    t.rows
        .iter()
        .map(|r| {
            r.iter()
                .map(|v| match v {
                    RVal::I(x) => x.to_string(),
                    RVal::F(x) => tandem_ir::numeric::fmt_g17(*x),
                    RVal::S(x) => x.clone(),
                    RVal::B(x) => x.to_string(),
                })
                .collect::<Vec<_>>()
                .join(",")
        })
        .collect()
}
