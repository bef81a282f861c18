//! Structural checks on boundary crossings: queue back-pressure, aliasing
//! conversions (node-count assertions), staged shapes of the three
//! application modes, and plan compilation against the registry.

use std::io::Write;
use std::rc::Rc;
use std::sync::Arc;
use std::time::Duration;

use tandem_bridge::*;
use tandem_ir::{optimize, Op, OptimizeConfig, Stager};
use tandem_ml::{Head, MlpModel};
use tandem_rel::{
    materialize, scan_csv, FieldTy, LogicalPlan, PlanExpr, RelSchema, StrInterner, UdfMode,
};

fn write_tmp(name: &str, content: &str) -> String {
    let dir = std::env::temp_dir().join("tandem-bridge-shape");
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join(name);
    let mut f = std::fs::File::create(&path).unwrap();
    f.write_all(content.as_bytes()).unwrap();
    path.to_string_lossy().into_owned()
}

fn col(n: &str) -> PlanExpr {
    PlanExpr::Col(n.into())
}

/// Identity function of one argument, registered without a model.
fn identity_udf(reg: &mut UdfRegistry, name: &str, cfg: BatchConfig) {
    reg.register_custom(
        name,
        1,
        Rc::new(|_s, args| Ok(args[0].clone())),
        cfg,
    )
    .unwrap();
}

// ---- queue -----------------------------------------------------------------

#[test]
fn full_queue_blocks_the_producer_instead_of_dropping() {
    let q: Arc<BoundedQueue<u32>> = Arc::new(BoundedQueue::new(2));
    let qc = q.clone();
    let producer = std::thread::spawn(move || {
        for i in 0..10 {
            qc.push(i).unwrap();
        }
        qc.close();
    });
    // Let the producer hit the capacity wall before consuming anything.
    std::thread::sleep(Duration::from_millis(50));
    let mut got = Vec::new();
    while let Some(v) = q.pop() {
        got.push(v);
    }
    producer.join().unwrap();
    assert_eq!(got, (0..10).collect::<Vec<_>>(), "order preserved, nothing dropped");
    let stats = q.stats();
    assert!(stats.block_events >= 1, "producer never blocked: {stats:?}");
    assert!(stats.max_depth <= 2, "capacity exceeded: {stats:?}");
}

#[test]
fn closed_queue_rejects_pushes_and_drains() {
    let q: BoundedQueue<u8> = BoundedQueue::new(4);
    q.push(1).unwrap();
    q.close();
    assert_eq!(q.push(2), Err(QueueClosed));
    assert_eq!(q.pop(), Some(1));
    assert_eq!(q.pop(), None);
}

// ---- conversions -------------------------------------------------------------

fn small_buffer(s: &mut Stager) -> tandem_rel::ColumnBuffer {
    let path = write_tmp("conv.csv", "1,1.5,2.5\n2,3.5,4.5\n");
    let schema = RelSchema::of(&[
        ("id", FieldTy::I64),
        ("x", FieldTy::F64),
        ("y", FieldTy::F64),
    ])
    .unwrap();
    let mut interner = StrInterner::new();
    let scan = scan_csv(&path, &schema, false, &mut interner).unwrap();
    materialize(scan, s).unwrap()
}

#[test]
fn single_column_tensor_aliases_the_buffer() {
    let mut s = Stager::new();
    let buf = small_buffer(&mut s);
    let before_allocs = s.graph().count_op(Op::ArrNew) + s.graph().count_op(Op::ArrNewGrow);
    let before_loops = s.graph().count_op(Op::Loop);
    let t = buffer_to_tensor(&mut s, &buf, &["x"]).unwrap();
    assert!(t.aliased);
    assert_eq!(t.cols, 1);
    assert_eq!(t.data.node, buf.cols[1].node, "tensor storage IS the column");
    let after_allocs = s.graph().count_op(Op::ArrNew) + s.graph().count_op(Op::ArrNewGrow);
    assert_eq!(after_allocs, before_allocs, "no allocation staged");
    assert_eq!(s.graph().count_op(Op::Loop), before_loops, "no copy loop staged");
    assert!(s.warnings().is_empty());
}

#[test]
fn two_column_tensor_gathers_with_one_loop_and_warns() {
    let mut s = Stager::new();
    let buf = small_buffer(&mut s);
    let before_loops = s.graph().count_op(Op::Loop);
    let t = buffer_to_tensor(&mut s, &buf, &["x", "y"]).unwrap();
    assert!(!t.aliased);
    assert_eq!(t.cols, 2);
    assert_eq!(s.graph().count_op(Op::Loop), before_loops + 1, "exactly one gather loop");
    assert_eq!(s.warnings().len(), 1);
}

#[test]
fn integer_column_cannot_become_a_tensor() {
    let mut s = Stager::new();
    let buf = small_buffer(&mut s);
    let r = buffer_to_tensor(&mut s, &buf, &["id"]);
    assert!(matches!(r, Err(BridgeError::Config(_))), "got {r:?}");
}

#[test]
fn tensor_to_value_reads_single_cells_only() {
    let mut s = Stager::new();
    let one = tandem_ml::tensor_from_literals(&mut s, &[1], &[0.7]).unwrap();
    let before = s.graph().nodes.len();
    let v = tensor_to_value(&mut s, &one).unwrap();
    assert_eq!(v.stype, tandem_ir::Stype::F64);
    // One constant index plus one element read; no allocations.
    assert!(s.graph().nodes.len() - before <= 2);
    assert_eq!(s.graph().count_op(Op::ArrFromConst), 1, "only the tensor's own storage");
    assert_eq!(s.graph().count_op(Op::ArrNew), 0);

    let batch = tandem_ml::tensor_zeros(&mut s, &[3, 1]).unwrap();
    assert!(tensor_to_value(&mut s, &batch).is_err(), "a 3-row tensor is not a scalar");
    let deep = tandem_ml::tensor_zeros(&mut s, &[1, 1, 1]).unwrap();
    assert!(tensor_to_value(&mut s, &deep).is_err(), "rank 3 rejected");
}

// ---- registry ----------------------------------------------------------------

#[test]
fn registry_rejects_duplicates_and_names_unknowns() {
    let mut reg = UdfRegistry::new();
    let model = MlpModel::mlp3([2, 3, 3, 1], Head::Regress, 1).unwrap();
    reg.register_model("score", model.clone(), BatchConfig::default(), false)
        .unwrap();
    let dup = reg.register_model("score", model, BatchConfig::default(), false);
    assert!(matches!(dup, Err(BridgeError::Config(_))), "got {dup:?}");
    let missing = reg.lookup("mystery");
    let msg = match missing {
        Err(e) => format!("{e}"),
        Ok(_) => panic!("lookup of unregistered name must fail"),
    };
    assert!(msg.contains("mystery"), "error must carry the name: {msg}");
}

#[test]
fn batch_config_constraints_are_enforced() {
    assert!(BatchConfig { batch: 0, workers: 0, queue_cap: 2 }.validate().is_err());
    assert!(BatchConfig { batch: 8, workers: 2, queue_cap: 3 }.validate().is_err());
    assert!(BatchConfig { batch: 8, workers: 2, queue_cap: 4 }.validate().is_ok());
    assert!(BatchConfig { batch: 8, workers: 0, queue_cap: 1 }.validate().is_ok());
}

// ---- application modes --------------------------------------------------------

fn scan_xy(s: &mut Stager, name: &str) -> tandem_rel::RelOp {
    let path = write_tmp(name, "1,0.5\n2,1.5\n3,2.5\n4,3.5\n5,4.5\n");
    let schema = RelSchema::of(&[("id", FieldTy::I64), ("x", FieldTy::F64)]).unwrap();
    let mut interner = StrInterner::new();
    let _ = s; // staging happens when the operator tree is driven
    scan_csv(&path, &schema, false, &mut interner).unwrap()
}

#[test]
fn scalar_mode_stages_one_call_that_inlining_removes() {
    let mut s = Stager::new();
    let mut reg = UdfRegistry::new();
    let model = MlpModel::mlp3([1, 2, 2, 1], Head::Regress, 5).unwrap();
    reg.register_model("score", model, BatchConfig::default(), false).unwrap();

    let scan = scan_xy(&mut s, "scalar.csv");
    let def = reg.lookup("score").unwrap();
    let op = apply_udf_scalar(
        scan,
        def,
        vec![Box::new(|_s: &mut Stager, rec: &tandem_rel::Record| {
            Ok(rec.get("x")?.1.clone())
        })],
        "y",
    )
    .unwrap();
    assert_eq!(
        op.fields().iter().map(|f| f.name.as_str()).collect::<Vec<_>>(),
        ["id", "x", "y"]
    );
    materialize(op, &mut s).unwrap();
    let g = s.finish();
    g.validate().unwrap();
    assert_eq!(g.count_op(Op::Loop), 1, "one record loop");
    assert_eq!(g.count_op(Op::Call), 1, "one call per record position");
    assert_eq!(g.count_op(Op::FuncDef), 1);

    let opt = optimize(&g, &OptimizeConfig { inline_max: 4096 }).unwrap();
    assert_eq!(opt.count_op(Op::Call), 0, "the body is inlined into the loop");
    assert_eq!(opt.count_op(Op::Loop), 1, "still a single pass");
}

#[test]
fn vectorized_mode_stages_kernel_calls_and_flush_loops() {
    let mut s = Stager::new();
    let mut reg = UdfRegistry::new();
    identity_udf(&mut reg, "same", BatchConfig { batch: 2, workers: 0, queue_cap: 2 });

    let scan = scan_xy(&mut s, "vector.csv");
    let def = reg.lookup("same").unwrap();
    let op = apply_udf_vectorized(
        scan,
        def,
        vec![Box::new(|_s: &mut Stager, rec: &tandem_rel::Record| {
            Ok(rec.get("x")?.1.clone())
        })],
        "y",
    )
    .unwrap();
    materialize(op, &mut s).unwrap();
    let g = s.finish();
    g.validate().unwrap();
    // Record loop, the kernel's internal row loop, a flush loop inside the
    // batch-full branch, and the tail flush loop.
    assert_eq!(g.count_op(Op::Loop), 4);
    assert_eq!(g.count_op(Op::Call), 2, "full-batch call + tail call");
    assert_eq!(g.count_op(Op::FuncDef), 1, "one shared batch kernel");
    assert_eq!(g.count_op(Op::If), 2, "batch-full branch + tail branch");
    assert_eq!(g.count_op(Op::Tick), 2);
}

#[test]
fn pooled_mode_stages_a_closed_kernel_pool_and_ordered_merge() {
    let mut s = Stager::new();
    let mut reg = UdfRegistry::new();
    let model = MlpModel::mlp3([1, 2, 2, 1], Head::Classify, 6).unwrap();
    reg.register_model(
        "cls",
        model,
        BatchConfig { batch: 2, workers: 2, queue_cap: 4 },
        false,
    )
    .unwrap();

    let scan = scan_xy(&mut s, "pooled.csv");
    let def = reg.lookup("cls").unwrap();
    let op = apply_udf_pooled(
        scan,
        def,
        vec![Box::new(|_s: &mut Stager, rec: &tandem_rel::Record| {
            Ok(rec.get("x")?.1.clone())
        })],
        "y",
    )
    .unwrap();
    materialize(op, &mut s).unwrap();
    let g = s.finish();
    g.validate().unwrap();
    assert_eq!(g.count_op(Op::PoolNew), 1);
    assert_eq!(g.count_op(Op::PoolSubmit), 2, "full-batch submit + tail submit");
    assert_eq!(g.count_op(Op::PoolFinish), 1);
    // Record loop, kernel row loop, merge-batches loop, merge-rows loop.
    assert_eq!(g.count_op(Op::Loop), 4);
    assert_eq!(g.count_op(Op::Call), 0, "workers run the kernel; no staged calls");
}

#[test]
fn pooled_mode_requires_workers() {
    let mut s = Stager::new();
    let mut reg = UdfRegistry::new();
    identity_udf(&mut reg, "same", BatchConfig { batch: 2, workers: 0, queue_cap: 2 });
    let scan = scan_xy(&mut s, "noworkers.csv");
    let def = reg.lookup("same").unwrap();
    let r = apply_udf_pooled(
        scan,
        def,
        vec![Box::new(|_s: &mut Stager, rec: &tandem_rel::Record| {
            Ok(rec.get("x")?.1.clone())
        })],
        "y",
    );
    assert!(matches!(r, Err(BridgeError::Config(_))));
}

// ---- plan compilation ----------------------------------------------------------

#[test]
fn compile_plan_resolves_functions_and_rejects_unknowns() {
    let path = write_tmp("plan.csv", "1,0.5\n2,1.5\n");
    let schema = RelSchema::of(&[("id", FieldTy::I64), ("x", FieldTy::F64)]).unwrap();
    let plan = LogicalPlan::UdfApply {
        input: Box::new(LogicalPlan::Scan { path, schema, header: false }),
        name: "f".into(),
        out: "y".into(),
        args: vec![col("x")],
        mode: UdfMode::Scalar,
    };
    let reg = UdfRegistry::new();
    let mut interner = StrInterner::new();
    let r = compile_plan(&plan, &reg, &mut interner);
    let msg = format!("{}", r.err().unwrap());
    assert!(msg.contains('f'), "error names the function: {msg}");

    let mut reg = UdfRegistry::new();
    identity_udf(&mut reg, "f", BatchConfig::default());
    let mut s = Stager::new();
    let op = compile_plan(&plan, &reg, &mut interner).unwrap();
    materialize(op, &mut s).unwrap();
    s.finish().validate().unwrap();
}

#[test]
fn compile_plan_requires_float_arguments() {
    let path = write_tmp("plan2.csv", "1,0.5\n");
    let schema = RelSchema::of(&[("id", FieldTy::I64), ("x", FieldTy::F64)]).unwrap();
    let plan = LogicalPlan::UdfApply {
        input: Box::new(LogicalPlan::Scan { path, schema, header: false }),
        name: "f".into(),
        out: "y".into(),
        args: vec![col("id")],
        mode: UdfMode::Scalar,
    };
    let mut reg = UdfRegistry::new();
    identity_udf(&mut reg, "f", BatchConfig::default());
    let mut interner = StrInterner::new();
    let r = compile_plan(&plan, &reg, &mut interner);
    assert!(r.is_err(), "integer argument must be rejected");
}
