//! Interpreter semantics against hand-computed expectations: scalar
//! arithmetic and traps, arrays, mutable cells, control flow, functions,
//! hash tables, csv loading, instrumentation, worker pools, and value
//! probes.

use std::io::Write as _;
use tandem_backend::{interpret, ProbeVal, RunConfig, RunOutput};
use tandem_ir::stage::{StagedValue, Stager};
use tandem_ir::types::*;

fn run_args(g: &IrGraph, args: &[i64]) -> RunOutput {
    interpret(
        g,
        &RunConfig {
            args: args.to_vec(),
            probes: vec![],
        },
    )
    .expect("program must run")
}

fn run(g: &IrGraph) -> RunOutput {
    run_args(g, &[])
}

fn run_err(g: &IrGraph, args: &[i64]) -> String {
    match interpret(
        g,
        &RunConfig {
            args: args.to_vec(),
            probes: vec![],
        },
    ) {
        Err(e) => format!("{e}"),
        Ok(_) => panic!("program must trap"),
    }
}

fn print_i(s: &mut Stager, v: &StagedValue) {
    s.print_row(std::slice::from_ref(v), vec![PrintFmt::I64]).unwrap();
}

fn print_f(s: &mut Stager, v: &StagedValue) {
    s.print_row(std::slice::from_ref(v), vec![PrintFmt::F64]).unwrap();
}

#[test]
fn scalar_arithmetic_from_runtime_inputs() {
    let mut s = Stager::new();
    let a = s.arg_i64(0).unwrap(); // 7
    let b = s.arg_i64(1).unwrap(); // 5
    let s3 = s.const_i64(3);
    let c100 = s.const_i64(100);
    let c4 = s.const_i64(4);

    let sum = s.add(&a, &b).unwrap(); // 12
    let prod = s.mul(&sum, &s3).unwrap(); // 36
    let quot = s.div(&c100, &c4).unwrap(); // 25
    let r = s.sub(&prod, &quot).unwrap(); // 11
    print_i(&mut s, &r);

    let c17 = s.const_i64(17);
    let rem = s.rem(&c17, &b).unwrap(); // 17 % 5 = 2
    print_i(&mut s, &rem);

    let neg = s.neg(&a).unwrap(); // -7
    print_i(&mut s, &neg);

    // Wrapping: i64::MAX + 1 lands on i64::MIN.
    let mx = s.const_i64(i64::MAX);
    let one = s.const_i64(1);
    let x = s.mul(&mx, &a).unwrap(); // keep it runtime-dependent
    let _ = x;
    let wrapped = {
        let m = s.mul(&mx, &one).unwrap();
        let aa = s.div(&a, &a).unwrap(); // 1, runtime
        s.add(&m, &aa).unwrap()
    };
    print_i(&mut s, &wrapped);

    let fa = s.i2f(&a).unwrap(); // 7.0
    let tenth = s.const_f64(0.1);
    let fifth = s.const_f64(0.2);
    let t = s.add(&tenth, &fifth).unwrap();
    let ft = s.mul(&t, &fa).unwrap(); // (0.1+0.2)*7
    print_f(&mut s, &ft);

    let le = s.le(&a, &b).unwrap(); // false
    let big = s.const_i64(999);
    let small = s.const_i64(-999);
    let sel = s.select(&le, &big, &small).unwrap();
    print_i(&mut s, &sel);

    let out = run_args(&s.finish(), &[7, 5]);
    assert_eq!(
        out.rows,
        vec![
            "11",
            "2",
            "-7",
            "-9223372036854775808",
            &tandem_ir::numeric::fmt_g17((0.1f64 + 0.2) * 7.0)[..],
            "-999",
        ]
    );
}

#[test]
fn exponential_routes_through_the_portable_kernel() {
    let mut s = Stager::new();
    let a = s.arg_i64(0).unwrap();
    let x = s.i2f(&a).unwrap();
    let e = s.exp(&x).unwrap();
    print_f(&mut s, &e);
    let out = run_args(&s.finish(), &[1]);
    assert_eq!(out.rows[0], tandem_ir::numeric::fmt_g17(tandem_ir::numeric::kexp(1.0)));
}

#[test]
fn integer_division_traps() {
    // Division by a runtime zero.
    let mut s = Stager::new();
    let a = s.arg_i64(0).unwrap();
    let b = s.arg_i64(1).unwrap();
    let d = s.div(&a, &b).unwrap();
    print_i(&mut s, &d);
    let g = s.finish();
    assert!(run_err(&g, &[1, 0]).contains("integer division by zero"));

    // MIN / -1 overflows.
    assert!(run_err(&g, &[i64::MIN, -1]).contains("integer division overflow"));

    let mut s = Stager::new();
    let a = s.arg_i64(0).unwrap();
    let b = s.arg_i64(1).unwrap();
    let d = s.rem(&a, &b).unwrap();
    print_i(&mut s, &d);
    let g = s.finish();
    assert!(run_err(&g, &[1, 0]).contains("integer remainder by zero"));
    assert!(run_err(&g, &[i64::MIN, -1]).contains("integer remainder overflow"));
}

#[test]
fn array_lifecycle_and_aliasing() {
    let mut s = Stager::new();
    let n = s.arg_i64(0).unwrap(); // 5
    let arr = s.arr_new(&n, ScalarTy::F64).unwrap();
    let i2 = s.const_i64(2);
    let v42 = s.const_f64(42.5);
    // Fresh storage is zeroed.
    let z = s.arr_get(&arr, &i2).unwrap();
    print_f(&mut s, &z);
    s.arr_set(&arr, &i2, &v42).unwrap();
    let got = s.arr_get(&arr, &i2).unwrap();
    print_f(&mut s, &got);
    let len = s.arr_len(&arr).unwrap();
    print_i(&mut s, &len);

    // Growable arrays count their appends.
    let grow = s.arr_new_grow(ScalarTy::I64).unwrap();
    let seven = s.const_i64(7);
    s.arr_push(&grow, &seven).unwrap();
    s.arr_push(&grow, &n).unwrap();
    let glen = s.arr_len(&grow).unwrap();
    print_i(&mut s, &glen);
    let i1 = s.const_i64(1);
    let back = s.arr_get(&grow, &i1).unwrap();
    print_i(&mut s, &back);

    // A mutable copy of an embedded constant leaves the constant intact.
    let c = s.const_arr_f64(vec![1.5, 2.5, 3.5]).unwrap();
    let m = s.arr_from_const(&c).unwrap();
    let i0 = s.const_i64(0);
    let v99 = s.const_f64(99.0);
    s.arr_set(&m, &i0, &v99).unwrap();
    let from_const = s.arr_get(&c, &i0).unwrap();
    let from_copy = s.arr_get(&m, &i0).unwrap();
    print_f(&mut s, &from_const);
    print_f(&mut s, &from_copy);

    let out = run_args(&s.finish(), &[5]);
    assert_eq!(out.rows, vec!["0", "42.5", "5", "2", "5", "1.5", "99"]);
}

#[test]
fn array_misuse_traps() {
    // Out-of-range read.
    let mut s = Stager::new();
    let n = s.arg_i64(0).unwrap();
    let arr = s.arr_new(&n, ScalarTy::I64).unwrap();
    let idx = s.arg_i64(1).unwrap();
    let v = s.arr_get(&arr, &idx).unwrap();
    print_i(&mut s, &v);
    let msg = run_err(&s.finish(), &[3, 5]);
    assert!(
        msg.contains("array index 5 out of range (length 3)"),
        "got: {msg}"
    );

    // Writing into an embedded constant array.
    let mut s = Stager::new();
    let c = s.const_arr_i64(vec![1, 2]).unwrap();
    let i = s.arg_i64(0).unwrap();
    s.arr_set(&c, &i, &i).unwrap();
    let msg = run_err(&s.finish(), &[0]);
    assert!(msg.contains("write to constant array"), "got: {msg}");

    // Negative allocation size.
    let mut s = Stager::new();
    let n = s.arg_i64(0).unwrap();
    let arr = s.arr_new(&n, ScalarTy::F64).unwrap();
    let len = s.arr_len(&arr).unwrap();
    print_i(&mut s, &len);
    let msg = run_err(&s.finish(), &[-4]);
    assert!(msg.contains("negative array length"), "got: {msg}");
}

#[test]
fn cells_loops_and_conditionals() {
    // Sum of 0..n via a mutable cell updated in a counted loop.
    let mut s = Stager::new();
    let n = s.arg_i64(0).unwrap();
    let zero = s.const_i64(0);
    let acc = s.var_new(&zero).unwrap();
    s.staged_loop(&n, |s, i| {
        let cur = s.var_get(&acc)?;
        let nxt = s.add(&cur, i)?;
        s.var_set(&acc, &nxt)
    })
    .unwrap();
    let total = s.var_get(&acc).unwrap();
    print_i(&mut s, &total);

    // Collatz-style while: halve even, stop at 1; count steps for 24.
    let m = s.arg_i64(1).unwrap();
    let cur = s.var_new(&m).unwrap();
    let steps = s.var_new(&zero).unwrap();
    let one = s.const_i64(1);
    let two = s.const_i64(2);
    s.staged_while(
        |s| {
            let c = s.var_get(&cur)?;
            s.gt(&c, &one)
        },
        |s| {
            let c = s.var_get(&cur)?;
            let h = s.div(&c, &two)?;
            s.var_set(&cur, &h)?;
            let st = s.var_get(&steps)?;
            let st1 = s.add(&st, &one)?;
            s.var_set(&steps, &st1)
        },
    )
    .unwrap();
    let nsteps = s.var_get(&steps).unwrap();
    print_i(&mut s, &nsteps);

    // Branch with a value: |a - b|.
    let a = s.arg_i64(2).unwrap();
    let b = s.arg_i64(3).unwrap();
    let lt = s.lt(&a, &b).unwrap();
    let diff = s
        .staged_if(&lt, |s| s.sub(&b, &a), |s| s.sub(&a, &b))
        .unwrap();
    print_i(&mut s, &diff);

    let out = run_args(&s.finish(), &[10, 24, 3, 11]);
    assert_eq!(out.rows, vec!["45", "4", "8"]);
}

#[test]
fn functions_params_captures_and_array_writes() {
    let mut s = Stager::new();

    // Plain scalar function.
    let sq = s
        .staged_func("sq_plus_one", &[Stype::I64], false, |s, ps| {
            let p = &ps[0];
            let m = s.mul(p, p)?;
            let one = s.const_i64(1);
            s.add(&m, &one)
        })
        .unwrap();
    let five = s.arg_i64(0).unwrap();
    let r = s.call(&sq, std::slice::from_ref(&five)).unwrap();
    print_i(&mut s, &r);

    // Function writing through an array parameter: visible to the caller.
    let fill = s
        .staged_func(
            "fill_squares",
            &[Stype::arr(Stype::I64), Stype::I64],
            false,
            |s, ps| {
                let (arr, n) = (ps[0].clone(), ps[1].clone());
                s.staged_loop(&n, |s, i| {
                    let sqv = s.mul(i, i)?;
                    s.arr_set(&arr, i, &sqv)
                })?;
                Ok(s.unit())
            },
        )
        .unwrap();
    let n = s.arg_i64(1).unwrap();
    let arr = s.arr_new(&n, ScalarTy::I64).unwrap();
    s.call(&fill, &[arr.clone(), n.clone()]).unwrap();
    let i3 = s.const_i64(3);
    let got = s.arr_get(&arr, &i3).unwrap();
    print_i(&mut s, &got);

    // Function capturing a value staged before it.
    let base = s.arg_i64(2).unwrap();
    let scaled = s
        .staged_func("capture_scale", &[Stype::I64], false, |s, ps| {
            s.mul(&base, &ps[0])
        })
        .unwrap();
    let k = s.const_i64(10);
    let c = s.call(&scaled, &[k]).unwrap();
    print_i(&mut s, &c);

    let out = run_args(&s.finish(), &[5, 6, 7]);
    assert_eq!(out.rows, vec!["26", "9", "70"]);
}

#[test]
fn hash_table_assigns_dense_ids_in_first_seen_order() {
    let mut s = Stager::new();
    let d = s.hash_new(&[ScalarTy::I64]).unwrap();
    // Feed keys [20, 10, 20, 30] through runtime inputs.
    for i in 0..4 {
        let k = s.arg_i64(i).unwrap();
        let id = s.hash_upsert(&d, &[k]).unwrap();
        print_i(&mut s, &id);
    }
    let len = s.hash_len(&d).unwrap();
    print_i(&mut s, &len);
    let missing = s.const_i64(77);
    let lk = s.hash_lookup(&d, &[missing]).unwrap();
    print_i(&mut s, &lk);
    let hit = s.const_i64(10);
    let lk2 = s.hash_lookup(&d, &[hit]).unwrap();
    print_i(&mut s, &lk2);

    let out = run_args(&s.finish(), &[20, 10, 20, 30]);
    assert_eq!(out.rows, vec!["0", "1", "0", "2", "3", "-1", "1"]);
}

#[test]
fn hash_float_keys_use_bit_patterns() {
    let mut s = Stager::new();
    let d = s.hash_new(&[ScalarTy::F64, ScalarTy::I64]).unwrap();
    let a = s.arg_i64(0).unwrap();
    let fa = s.i2f(&a).unwrap(); // 0.0
    let nfa = s.neg(&fa).unwrap(); // -0.0: a distinct key
    let one = s.const_i64(1);
    let id0 = s.hash_upsert(&d, &[fa, one.clone()]).unwrap();
    let id1 = s.hash_upsert(&d, &[nfa, one]).unwrap();
    print_i(&mut s, &id0);
    print_i(&mut s, &id1);
    let out = run_args(&s.finish(), &[0]);
    assert_eq!(out.rows, vec!["0", "1"]);
}

fn write_temp_csv(text: &str) -> (tempfile::TempDir, String) {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("data.csv");
    let mut f = std::fs::File::create(&path).unwrap();
    f.write_all(text.as_bytes()).unwrap();
    (dir, path.to_string_lossy().into_owned())
}

fn fruit_spec(path: &str) -> CsvSpec {
    CsvSpec {
        path: path.to_string(),
        header: true,
        cols: vec![
            CsvColTy {
                name: "id".into(),
                ty: ColKind::I64,
                dict: vec![],
            },
            CsvColTy {
                name: "w".into(),
                ty: ColKind::F64,
                dict: vec![],
            },
            CsvColTy {
                name: "kind".into(),
                ty: ColKind::Str,
                dict: vec!["apple".into(), "pear".into()],
            },
        ],
    }
}

#[test]
fn csv_loads_columns_and_decodes_strings() {
    let (_d, path) = write_temp_csv("id,w,kind\n1,2.5,apple\n2,3.25,pear\n3,0.5,apple\n");
    let mut s = Stager::new();
    let src = s.csv_open(fruit_spec(&path)).unwrap();
    let rows = s.csv_rows(&src).unwrap();
    print_i(&mut s, &rows);
    let ids = s.csv_col(&src, 0).unwrap();
    let ws = s.csv_col(&src, 1).unwrap();
    let kinds = s.csv_col(&src, 2).unwrap();
    s.staged_loop(&rows, |s, i| {
        let id = s.arr_get(&ids, i)?;
        let w = s.arr_get(&ws, i)?;
        let k = s.arr_get(&kinds, i)?;
        s.print_row(
            &[id, w, k],
            vec![
                PrintFmt::I64,
                PrintFmt::F64,
                PrintFmt::Str(vec!["apple".into(), "pear".into()]),
            ],
        )
    })
    .unwrap();
    let out = run(&s.finish());
    assert_eq!(
        out.rows,
        vec!["3", "1,2.5,apple", "2,3.25,pear", "3,0.5,apple"]
    );
}

#[test]
fn csv_malformed_inputs_trap_with_row_numbers() {
    // Width mismatch on the second data row.
    let (_d, path) = write_temp_csv("id,w,kind\n1,2.5,apple\n2,3.25\n");
    let mut s = Stager::new();
    let src = s.csv_open(fruit_spec(&path)).unwrap();
    let rows = s.csv_rows(&src).unwrap();
    print_i(&mut s, &rows);
    let msg = run_err(&s.finish(), &[]);
    assert!(msg.contains("row 2: expected 3 fields"), "got: {msg}");

    // Unparseable number.
    let (_d, path) = write_temp_csv("id,w,kind\n1,notanumber,apple\n");
    let mut s = Stager::new();
    let src = s.csv_open(fruit_spec(&path)).unwrap();
    let rows = s.csv_rows(&src).unwrap();
    print_i(&mut s, &rows);
    let msg = run_err(&s.finish(), &[]);
    assert!(msg.contains("bad float64"), "got: {msg}");
    assert!(msg.contains("notanumber"), "got: {msg}");

    // String missing from the embedded dictionary.
    let (_d, path) = write_temp_csv("id,w,kind\n1,2.5,quince\n");
    let mut s = Stager::new();
    let src = s.csv_open(fruit_spec(&path)).unwrap();
    let rows = s.csv_rows(&src).unwrap();
    print_i(&mut s, &rows);
    let msg = run_err(&s.finish(), &[]);
    assert!(msg.contains("unknown string"), "got: {msg}");

    // Missing file.
    let mut s = Stager::new();
    let src = s.csv_open(fruit_spec("/nonexistent/nope.csv")).unwrap();
    let rows = s.csv_rows(&src).unwrap();
    print_i(&mut s, &rows);
    let msg = run_err(&s.finish(), &[]);
    assert!(msg.contains("cannot open csv file"), "got: {msg}");
}

#[test]
fn string_print_codes_are_bounds_checked() {
    let mut s = Stager::new();
    let code = s.arg_i64(0).unwrap();
    s.print_row(
        &[code],
        vec![PrintFmt::Str(vec!["a".into(), "b".into()])],
    )
    .unwrap();
    let g = s.finish();
    assert_eq!(run_args(&g, &[1]).rows, vec!["b"]);
    let msg = run_err(&g, &[2]);
    assert!(
        msg.contains("string code 2 out of range (table size 2)"),
        "got: {msg}"
    );
}

#[test]
fn counters_and_phases_accumulate() {
    let mut s = Stager::new();
    let n = s.arg_i64(0).unwrap();
    s.phase_mark("start").unwrap();
    s.staged_loop(&n, |s, _| s.tick("loop.iter")).unwrap();
    s.tick("finish.once").unwrap();
    s.phase_mark("end").unwrap();
    let out = run_args(&s.finish(), &[7]);
    assert_eq!(out.trace.counters.get("loop.iter"), Some(&7));
    assert_eq!(out.trace.counters.get("finish.once"), Some(&1));
    let names: Vec<&str> = out.trace.phases.iter().map(|(n, _)| n.as_str()).collect();
    assert_eq!(names, vec!["start", "end"]);
    assert!(out.trace.phases.iter().all(|(_, t)| *t >= 0.0));
    assert!(out.trace.phases[0].1 <= out.trace.phases[1].1);
}

/// Kernel for pool tests: out[i] = in[2i] + in[2i+1].
fn stage_pairsum_kernel(s: &mut Stager) -> tandem_ir::stage::FuncHandle {
    s.staged_func(
        "pairsum",
        &[Stype::arr(Stype::F64), Stype::I64, Stype::arr(Stype::F64)],
        true,
        |s, ps| {
            let (inp, cnt, out) = (ps[0].clone(), ps[1].clone(), ps[2].clone());
            s.staged_loop(&cnt, |s, i| {
                let two = s.const_i64(2);
                let j = s.mul(i, &two)?;
                let one = s.const_i64(1);
                let j1 = s.add(&j, &one)?;
                let a = s.arr_get(&inp, &j)?;
                let b = s.arr_get(&inp, &j1)?;
                let sum = s.add(&a, &b)?;
                s.arr_set(&out, i, &sum)
            })?;
            Ok(s.unit())
        },
    )
    .unwrap()
}

#[test]
fn pool_preserves_submission_order() {
    let mut s = Stager::new();
    let kern = stage_pairsum_kernel(&mut s);
    let pool = s
        .pool_new(
            PoolCfg {
                workers: 3,
                queue_cap: 2,
                batch: 4,
                arity: 2,
                comp: vec![ScalarTy::I64],
            },
            &kern,
        )
        .unwrap();

    // Five batches; batch b holds rows r in 0..(b+1) with in = [b, r],
    // companion = 10*b + r.
    let five = s.const_i64(5);
    s.staged_loop(&five.clone(), |s, b| {
        let one = s.const_i64(1);
        let cnt = s.add(b, &one)?;
        let two = s.const_i64(2);
        let flat = s.mul(&cnt, &two)?;
        let inp = s.arr_new(&flat, ScalarTy::F64)?;
        let comp = s.arr_new(&cnt, ScalarTy::I64)?;
        s.staged_loop(&cnt, |s, r| {
            let j = s.mul(r, &two)?;
            let j1 = s.add(&j, &one)?;
            let fb = s.i2f(b)?;
            let fr = s.i2f(r)?;
            s.arr_set(&inp, &j, &fb)?;
            s.arr_set(&inp, &j1, &fr)?;
            let ten = s.const_i64(10);
            let tb = s.mul(b, &ten)?;
            let cid = s.add(&tb, r)?;
            s.arr_set(&comp, r, &cid)
        })?;
        s.pool_submit(&pool, &inp, &[comp], &cnt)
    })
    .unwrap();
    s.pool_finish(&pool).unwrap();

    let nb = s.pool_batches(&pool).unwrap();
    print_i(&mut s, &nb);
    s.staged_loop(&nb, |s, b| {
        let len = s.pool_batch_len(&pool, b)?;
        let out = s.pool_batch_out(&pool, b)?;
        let comp = s.pool_batch_col(&pool, b, 0)?;
        s.staged_loop(&len, |s, r| {
            let o = s.arr_get(&out, r)?;
            let c = s.arr_get(&comp, r)?;
            s.print_row(&[o, c], vec![PrintFmt::F64, PrintFmt::I64])
        })
    })
    .unwrap();

    let out = run(&s.finish());
    let mut want = vec!["5".to_string()];
    for b in 0..5i64 {
        for r in 0..=b {
            want.push(format!("{},{}", (b + r) as f64, 10 * b + r));
        }
    }
    assert_eq!(out.rows, want);
}

#[test]
fn pool_misuse_traps() {
    // Reading results before finish.
    let mut s = Stager::new();
    let kern = stage_pairsum_kernel(&mut s);
    let cfg = PoolCfg {
        workers: 1,
        queue_cap: 1,
        batch: 4,
        arity: 2,
        comp: vec![],
    };
    let pool = s.pool_new(cfg.clone(), &kern).unwrap();
    let nb = s.pool_batches(&pool).unwrap();
    print_i(&mut s, &nb);
    let msg = run_err(&s.finish(), &[]);
    assert!(msg.contains("pool results read before finish"), "got: {msg}");

    // Submitting after finish.
    let mut s = Stager::new();
    let kern = stage_pairsum_kernel(&mut s);
    let pool = s.pool_new(cfg.clone(), &kern).unwrap();
    s.pool_finish(&pool).unwrap();
    let two = s.const_i64(2);
    let one = s.const_i64(1);
    let inp = s.arr_new(&two, ScalarTy::F64).unwrap();
    s.pool_submit(&pool, &inp, &[], &one).unwrap();
    let msg = run_err(&s.finish(), &[]);
    assert!(msg.contains("submit to a finished pool"), "got: {msg}");

    // A pool with no workers can never drain.
    let mut s = Stager::new();
    let kern = stage_pairsum_kernel(&mut s);
    let pool = s
        .pool_new(
            PoolCfg {
                workers: 0,
                ..cfg.clone()
            },
            &kern,
        )
        .unwrap();
    s.pool_finish(&pool).unwrap();
    let msg = run_err(&s.finish(), &[]);
    assert!(
        msg.contains("pool requires at least one worker"),
        "got: {msg}"
    );

    // Batch shorter than its claimed row count.
    let mut s = Stager::new();
    let kern = stage_pairsum_kernel(&mut s);
    let pool = s.pool_new(cfg, &kern).unwrap();
    let two = s.const_i64(2);
    let inp = s.arr_new(&two, ScalarTy::F64).unwrap();
    let three = s.const_i64(3);
    s.pool_submit(&pool, &inp, &[], &three).unwrap();
    s.pool_finish(&pool).unwrap();
    let msg = run_err(&s.finish(), &[]);
    assert!(
        msg.contains("pool batch shorter than its row count"),
        "got: {msg}"
    );
}

#[test]
fn program_arguments_are_positional() {
    let mut s = Stager::new();
    let a0 = s.arg_i64(0).unwrap();
    let a1 = s.arg_i64(1).unwrap();
    let d = s.sub(&a0, &a1).unwrap();
    print_i(&mut s, &d);
    let g = s.finish();
    assert_eq!(run_args(&g, &[10, 4]).rows, vec!["6"]);
    let msg = run_err(&g, &[10]);
    assert!(msg.contains("missing program argument 1"), "got: {msg}");
}

#[test]
fn probes_snapshot_intermediate_values() {
    let mut s = Stager::new();
    let a = s.arg_i64(0).unwrap();
    let fa = s.i2f(&a).unwrap();
    let half = s.const_f64(0.5);
    let h = s.mul(&fa, &half).unwrap();
    let n = s.const_i64(3);
    let arr = s.arr_new(&n, ScalarTy::F64).unwrap();
    let i0 = s.const_i64(0);
    s.arr_set(&arr, &i0, &h).unwrap();
    let probe_scalar = h.node;
    let probe_arr = arr.node;
    let g = s.finish();
    let out = interpret(
        &g,
        &RunConfig {
            args: vec![9],
            probes: vec![probe_scalar, probe_arr],
        },
    )
    .unwrap();
    assert_eq!(out.probes.len(), 2);
    assert_eq!(out.probes[0], ProbeVal::F64(4.5));
    assert_eq!(out.probes[1], ProbeVal::ArrF(vec![4.5, 0.0, 0.0]));
}
