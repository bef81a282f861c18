//! Structural checks on the graphs the operators stage: fusion into a
//! single pass, staged-but-empty control flow, and staging-time rejection
//! of ill-typed pipelines.

use std::io::Write;

use tandem_ir::{Op, PrintFmt, Stager};
use tandem_rel::*;

fn write_tmp(name: &str, content: &str) -> String {
    let dir = std::env::temp_dir().join("tandem-rel-shape");
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join(name);
    let mut f = std::fs::File::create(&path).unwrap();
    f.write_all(content.as_bytes()).unwrap();
    path.to_string_lossy().into_owned()
}

fn col(n: &str) -> PlanExpr {
    PlanExpr::Col(n.into())
}

#[test]
fn scan_filter_project_materialize_stages_one_loop() {
    let path = write_tmp("simple.csv", "1,1.5\n2,2.5\n3,3.5\n");
    let schema = RelSchema::of(&[("id", FieldTy::I64), ("x", FieldTy::F64)]).unwrap();
    let mut interner = StrInterner::new();
    let mut s = Stager::new();
    let scan = scan_csv(&path, &schema, false, &mut interner).unwrap();
    let filtered = filter(
        scan,
        Box::new(|s, rec| {
            let id = rec.get("id")?.1.clone();
            let two = s.const_i64(2);
            Ok(s.ge(&id, &two)?)
        }),
    );
    let projected = project(
        filtered,
        vec![(
            FieldInfo::new("x2", FieldTy::F64),
            Box::new(|s: &mut Stager, rec: &Record| {
                let x = rec.get("x")?.1.clone();
                Ok(s.add(&x, &x)?)
            }) as ExprFn,
        )],
    )
    .unwrap();
    let buf = materialize(projected, &mut s).unwrap();
    assert_eq!(buf.fields.len(), 1);
    let g = s.finish();
    g.validate().unwrap();
    assert_eq!(g.count_op(Op::Loop), 1, "the whole pipeline is one pass");
    assert_eq!(g.count_op(Op::CsvOpen), 1);
}

#[test]
fn constant_true_predicate_folds_the_branch_away() {
    let path = write_tmp("fold.csv", "1\n2\n");
    let schema = RelSchema::of(&[("id", FieldTy::I64)]).unwrap();
    let mut interner = StrInterner::new();
    let mut s = Stager::new();
    let scan = scan_csv(&path, &schema, false, &mut interner).unwrap();
    let filtered = filter(scan, Box::new(|s, _| Ok(s.const_bool(true))));
    let _ = materialize(filtered, &mut s).unwrap();
    let g = s.finish();
    assert_eq!(g.count_op(Op::If), 0, "constant predicate leaves no branch");
}

#[test]
fn join_stages_build_then_probe_with_chain_walk() {
    let lpath = write_tmp("jl.csv", "1,10\n2,20\n");
    let rpath = write_tmp("jr.csv", "2,200\n3,300\n");
    let ls = RelSchema::of(&[("lk", FieldTy::I64), ("lv", FieldTy::I64)]).unwrap();
    let rs = RelSchema::of(&[("rk", FieldTy::I64), ("rv", FieldTy::I64)]).unwrap();
    let mut interner = StrInterner::new();
    let mut s = Stager::new();
    let left = scan_csv(&lpath, &ls, false, &mut interner).unwrap();
    let right = scan_csv(&rpath, &rs, false, &mut interner).unwrap();
    let joined = hash_join(
        left,
        right,
        vec![KeySpec {
            ty: FieldTy::I64,
            expr: Box::new(|_, rec| Ok(rec.get("lk")?.1.clone())),
        }],
        vec![KeySpec {
            ty: FieldTy::I64,
            expr: Box::new(|_, rec| Ok(rec.get("rk")?.1.clone())),
        }],
    )
    .unwrap();
    assert_eq!(
        joined
            .fields()
            .iter()
            .map(|f| f.name.as_str())
            .collect::<Vec<_>>(),
        ["lk", "lv", "rk", "rv"]
    );
    let mut rows = 0;
    joined
        .drive(&mut s, &mut |s, rec| {
            rows += 1;
            let vals: Vec<_> = rec.vals().to_vec();
            s.print_row(
                &vals,
                vec![PrintFmt::I64, PrintFmt::I64, PrintFmt::I64, PrintFmt::I64],
            )?;
            Ok(())
        })
        .unwrap();
    assert_eq!(rows, 1, "the consumer callback is staged exactly once");
    let g = s.finish();
    g.validate().unwrap();
    assert_eq!(g.count_op(Op::Loop), 2, "build pass plus probe pass");
    assert_eq!(g.count_op(Op::While), 1, "chain walk inside the probe");
    assert_eq!(g.count_op(Op::HashUpsert), 1);
    assert_eq!(g.count_op(Op::HashLookup), 1);
}

#[test]
fn join_key_type_mismatch_is_rejected() {
    let lpath = write_tmp("kl.csv", "1\n");
    let rpath = write_tmp("kr.csv", "1.5\n");
    let ls = RelSchema::of(&[("lk", FieldTy::I64)]).unwrap();
    let rs = RelSchema::of(&[("rk", FieldTy::F64)]).unwrap();
    let mut interner = StrInterner::new();
    let left = scan_csv(&lpath, &ls, false, &mut interner).unwrap();
    let right = scan_csv(&rpath, &rs, false, &mut interner).unwrap();
    let r = hash_join(
        left,
        right,
        vec![KeySpec {
            ty: FieldTy::I64,
            expr: Box::new(|_, rec| Ok(rec.get("lk")?.1.clone())),
        }],
        vec![KeySpec {
            ty: FieldTy::F64,
            expr: Box::new(|_, rec| Ok(rec.get("rk")?.1.clone())),
        }],
    );
    assert!(r.is_err());
}

#[test]
fn project_validation_rejects_empty_and_duplicates() {
    let path = write_tmp("p.csv", "1\n");
    let schema = RelSchema::of(&[("id", FieldTy::I64)]).unwrap();
    let mut interner = StrInterner::new();
    let scan = scan_csv(&path, &schema, false, &mut interner).unwrap();
    assert!(project(scan, vec![]).is_err());

    let scan = scan_csv(&path, &schema, false, &mut interner).unwrap();
    let dup = project(
        scan,
        vec![
            (
                FieldInfo::new("a", FieldTy::I64),
                Box::new(|_: &mut Stager, rec: &Record| Ok(rec.get("id")?.1.clone())) as ExprFn,
            ),
            (
                FieldInfo::new("a", FieldTy::I64),
                Box::new(|_: &mut Stager, rec: &Record| Ok(rec.get("id")?.1.clone())) as ExprFn,
            ),
        ],
    );
    assert!(dup.is_err());
}

#[test]
fn unknown_field_reference_fails_at_staging_time() {
    let path = write_tmp("u.csv", "1\n");
    let schema = RelSchema::of(&[("id", FieldTy::I64)]).unwrap();
    let mut interner = StrInterner::new();
    let mut s = Stager::new();
    let scan = scan_csv(&path, &schema, false, &mut interner).unwrap();
    let filtered = filter(
        scan,
        Box::new(|s, rec| {
            let v = rec.get("missing")?.1.clone();
            let z = s.const_i64(0);
            Ok(s.gt(&v, &z)?)
        }),
    );
    let r = materialize(filtered, &mut s);
    assert!(matches!(r, Err(RelError::Plan(_))));
}

#[test]
fn string_sum_is_rejected_but_count_is_fine() {
    let path = write_tmp("s.csv", "north,1\nsouth,2\n");
    let schema = RelSchema::of(&[("region", FieldTy::Str), ("v", FieldTy::I64)]).unwrap();
    let mut interner = StrInterner::new();
    let scan = scan_csv(&path, &schema, false, &mut interner).unwrap();
    let bad = group_by_agg(
        scan,
        vec![(
            FieldInfo::new("k", FieldTy::I64),
            Box::new(|_: &mut Stager, rec: &Record| Ok(rec.get("v")?.1.clone())) as ExprFn,
        )],
        vec![AggSpec {
            name: "total".into(),
            kind: AggKind::Sum,
            expr: Some(Box::new(|_, rec| Ok(rec.get("region")?.1.clone()))),
            input_ty: FieldTy::Str,
        }],
    );
    assert!(bad.is_err());

    let mut s = Stager::new();
    let scan = scan_csv(&path, &schema, false, &mut interner).unwrap();
    let dict = scan.fields()[0].dict.clone().unwrap();
    assert_eq!(dict.as_slice(), ["north", "south"]);
    let grouped = group_by_agg(
        scan,
        vec![(
            FieldInfo::with_dict("region", dict),
            Box::new(|_: &mut Stager, rec: &Record| Ok(rec.get("region")?.1.clone())) as ExprFn,
        )],
        vec![AggSpec {
            name: "n".into(),
            kind: AggKind::Count,
            expr: None,
            input_ty: FieldTy::I64,
        }],
    )
    .unwrap();
    let buf = materialize(grouped, &mut s).unwrap();
    assert_eq!(buf.fields[0].ty, FieldTy::Str);
    assert_eq!(buf.fields[1].ty, FieldTy::I64);
    let g = s.finish();
    g.validate().unwrap();
    // Accumulation pass over input plus emission pass over groups.
    assert_eq!(g.count_op(Op::Loop), 2);
}

#[test]
fn interner_codes_are_shared_across_files() {
    let p1 = write_tmp("i1.csv", "north\nsouth\n");
    let p2 = write_tmp("i2.csv", "south\neast\n");
    let schema = RelSchema::of(&[("region", FieldTy::Str)]).unwrap();
    let mut interner = StrInterner::new();
    let _ = scan_csv(&p1, &schema, false, &mut interner).unwrap();
    let _ = scan_csv(&p2, &schema, false, &mut interner).unwrap();
    assert_eq!(interner.len(), 3, "south interned once");
    assert_eq!(interner.lookup("south"), Some(1));
    assert_eq!(interner.lookup("east"), Some(2));
}

#[test]
fn plan_type_checking_catches_field_and_type_errors() {
    let schema = RelSchema::of(&[("id", FieldTy::I64), ("x", FieldTy::F64)]).unwrap();
    let scan = LogicalPlan::Scan {
        path: "unused.csv".into(),
        schema,
        header: false,
    };
    let none = |_: &str| None;
    // Mixed-type arithmetic is rejected.
    let bad = LogicalPlan::Project {
        input: Box::new(scan.clone()),
        fields: vec![(
            "y".into(),
            PlanExpr::Add(Box::new(col("id")), Box::new(col("x"))),
        )],
    };
    assert!(bad.output_fields(&none).is_err());
    // Explicit conversion fixes it.
    let good = LogicalPlan::Project {
        input: Box::new(scan.clone()),
        fields: vec![(
            "y".into(),
            PlanExpr::Add(
                Box::new(PlanExpr::I2F(Box::new(col("id")))),
                Box::new(col("x")),
            ),
        )],
    };
    let fields = good.output_fields(&none).unwrap();
    assert_eq!(fields[0].ty, FieldTy::F64);
    // Unregistered model names fail plan validation.
    let udf = LogicalPlan::UdfApply {
        input: Box::new(scan),
        name: "mystery".into(),
        out: "score".into(),
        args: vec![col("x")],
        mode: UdfMode::Scalar,
    };
    assert!(udf.output_fields(&none).is_err());
}

#[test]
fn reference_evaluator_handles_join_group_and_order() {
    let lpath = write_tmp("ol.csv", "1,a\n2,b\n2,c\n");
    let rpath = write_tmp("or.csv", "2,x\n3,y\n2,z\n");
    let ls = RelSchema::of(&[("k", FieldTy::I64), ("lv", FieldTy::Str)]).unwrap();
    let rs = RelSchema::of(&[("rk", FieldTy::I64), ("rv", FieldTy::Str)]).unwrap();
    let plan = LogicalPlan::HashJoin {
        left: Box::new(LogicalPlan::Scan {
            path: lpath,
            schema: ls,
            header: false,
        }),
        right: Box::new(LogicalPlan::Scan {
            path: rpath,
            schema: rs,
            header: false,
        }),
        lkeys: vec![col("k")],
        rkeys: vec![col("rk")],
    };
    let t = reference::eval_plan(&plan, &|_, _| Err("no models".into())).unwrap();
    let lines = reference::format_rows(&t);
    // Probe order: right rows in file order; duplicate-key left rows in
    // insertion order.
    assert_eq!(lines, ["2,b,2,x", "2,c,2,x", "2,b,2,z", "2,c,2,z"]);

    let g = LogicalPlan::GroupByAgg {
        input: Box::new(LogicalPlan::Scan {
            path: write_tmp("og.csv", "1,10\n1,5\n2,7\n"),
            schema: RelSchema::of(&[("k", FieldTy::I64), ("v", FieldTy::I64)]).unwrap(),
            header: false,
        }),
        keys: vec![("k".into(), col("k"))],
        aggs: vec![
            ("total".into(), AggKind::Sum, Some(col("v"))),
            ("mean".into(), AggKind::Avg, Some(col("v"))),
            ("n".into(), AggKind::Count, None),
        ],
    };
    let t = reference::eval_plan(&g, &|_, _| Err("no models".into())).unwrap();
    assert_eq!(
        reference::format_rows(&t),
        ["1,15,7.5,2", "2,7,7,1"],
        "sum, exact avg, count in first-seen key order"
    );
}
