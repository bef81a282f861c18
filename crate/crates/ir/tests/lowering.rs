//! Scheduling (placement + statement order) and the text round-trip.

use tandem_ir::serialize::{from_text, to_text};
use tandem_ir::*;

#[test]
fn loop_invariant_arithmetic_hoists_out() {
    let mut s = Stager::new();
    let w = s.arg_i64(0).unwrap();
    let n = s.arg_i64(1).unwrap();
    let mut invariant = None;
    let mut varying = None;
    s.staged_loop(&n, |s, i| {
        let w = s.arg_i64(0).unwrap();
        invariant = Some(s.mul(&w, &w)?); // does not depend on i
        varying = Some(s.add(&invariant.clone().unwrap(), i)?);
        let v = varying.clone().unwrap();
        s.print_row(&[v], vec![PrintFmt::I64])
    })
    .unwrap();
    let g = s.finish();
    let sched = schedule(&g);
    let inv = invariant.unwrap().node;
    let var = varying.unwrap().node;
    assert_eq!(
        sched.placement[inv.idx()],
        g.root(),
        "w*w moves in front of the loop"
    );
    assert_ne!(
        sched.placement[var.idx()],
        g.root(),
        "the index-dependent add stays inside"
    );
    assert_eq!(sched.placement[var.idx()], g.node(var).scope);
    // The hoisted node is ordered before the loop at the root.
    let root_order = &sched.order[g.root().idx()];
    let pos_inv = root_order.iter().position(|&x| x == inv).unwrap();
    let the_loop = g.ids().find(|&id| g.node(id).op == Op::Loop).unwrap();
    let pos_loop = root_order.iter().position(|&x| x == the_loop).unwrap();
    assert!(pos_inv < pos_loop);
    let _ = w;
}

#[test]
fn hoisting_climbs_nested_loops_to_the_outermost_safe_block() {
    let mut s = Stager::new();
    let n = s.arg_i64(1).unwrap();
    let mut inv = None;
    s.staged_loop(&n, |s, _i| {
        let m = s.arg_i64(2).unwrap();
        s.staged_loop(&m, |s, j| {
            let w = s.arg_i64(0).unwrap();
            inv = Some(s.mul(&w, &w)?);
            let v = s.add(&inv.clone().unwrap(), j)?;
            s.print_row(&[v], vec![PrintFmt::I64])
        })
    })
    .unwrap();
    let g = s.finish();
    let sched = schedule(&g);
    assert_eq!(sched.placement[inv.unwrap().node.idx()], g.root());
}

#[test]
fn nothing_hoists_across_branches_or_functions() {
    let mut s = Stager::new();
    let x = s.arg_i64(0).unwrap();
    let zero = s.const_i64(0);
    let c = s.lt(&x, &zero).unwrap();
    let mut inside_if = None;
    s.staged_if(
        &c,
        |s| {
            let x = s.arg_i64(0).unwrap();
            inside_if = Some(s.mul(&x, &x)?);
            Ok(s.unit())
        },
        |s| Ok(s.unit()),
    )
    .unwrap();
    let f = s
        .staged_func("f", &[Stype::I64], true, |s, ps| {
            // Depends only on an outer pure value, but may not leave the
            // function body.
            let x = s.arg_i64(0).unwrap();
            let m = s.mul(&x, &x)?;
            s.add(&m, &ps[0])
        })
        .unwrap();
    let r = s.call(&f, &[x.clone()]).unwrap();
    s.print_row(&[r], vec![PrintFmt::I64]).unwrap();
    let g = s.finish();
    let sched = schedule(&g);
    let n_if = inside_if.unwrap().node;
    assert_eq!(
        sched.placement[n_if.idx()],
        g.node(n_if).scope,
        "branch code stays in its branch"
    );
    for id in g.ids() {
        if g.block_kind(g.node(id).scope) == BlockKind::FuncBody {
            assert_eq!(
                sched.placement[id.idx()],
                g.node(id).scope,
                "function bodies keep their members"
            );
        }
    }
}

#[test]
fn division_hoists_only_with_a_nonzero_constant_divisor() {
    let mut s = Stager::new();
    let n = s.arg_i64(0).unwrap();
    let mut safe = None;
    let mut unsafe_div = None;
    s.staged_loop(&n, |s, i| {
        let x = s.arg_i64(1).unwrap();
        let four = s.const_i64(4);
        safe = Some(s.div(&x, &four)?);
        let y = s.arg_i64(2).unwrap();
        unsafe_div = Some(s.div(&x, &y)?); // y could be zero at runtime
        let a = s.add(&safe.clone().unwrap(), &unsafe_div.clone().unwrap())?;
        let b = s.add(&a, i)?;
        s.print_row(&[b], vec![PrintFmt::I64])
    })
    .unwrap();
    let g = s.finish();
    let sched = schedule(&g);
    assert_eq!(sched.placement[safe.unwrap().node.idx()], g.root());
    let ud = unsafe_div.unwrap().node;
    assert_eq!(
        sched.placement[ud.idx()],
        g.node(ud).scope,
        "a dynamic divisor pins the division where it was staged"
    );
}

#[test]
fn effectful_statements_keep_staging_order() {
    let mut s = Stager::new();
    let n = s.const_i64(8);
    let a = s.arr_new(&n, ScalarTy::I64).unwrap();
    let i = s.const_i64(0);
    let one = s.const_i64(1);
    let two = s.const_i64(2);
    s.arr_set(&a, &i, &one).unwrap();
    let r1 = s.arr_get(&a, &i).unwrap();
    s.arr_set(&a, &i, &two).unwrap();
    let r2 = s.arr_get(&a, &i).unwrap();
    s.print_row(&[r1, r2], vec![PrintFmt::I64, PrintFmt::I64])
        .unwrap();
    let g = s.finish();
    let sched = schedule(&g);
    let root_order = &sched.order[g.root().idx()];
    let effectful: Vec<NodeId> = root_order
        .iter()
        .copied()
        .filter(|&id| !g.node(id).effect.is_pure())
        .collect();
    let staged: Vec<NodeId> = g
        .ids()
        .filter(|&id| {
            g.node(id).scope == g.root() && !g.node(id).effect.is_pure() && g.node(id).op != Op::Block
        })
        .collect();
    assert_eq!(effectful, staged, "alloc, stores, loads, print in order");
}

#[test]
fn scheduling_is_deterministic() {
    let build = || {
        let mut s = Stager::new();
        let n = s.arg_i64(0).unwrap();
        let d = s.hash_new(&[ScalarTy::I64]).unwrap();
        s.staged_loop(&n, |s, i| {
            let ten = s.const_i64(10);
            let k = s.rem(i, &ten)?;
            let slot = s.hash_upsert(&d, &[k])?;
            let v = s.mul(&slot, &slot)?;
            s.print_row(&[v], vec![PrintFmt::I64])
        })
        .unwrap();
        s.finish()
    };
    let g1 = build();
    let g2 = build();
    assert_eq!(to_text(&g1), to_text(&g2), "staging is reproducible");
    let s1 = schedule(&g1);
    let s2 = schedule(&g2);
    assert_eq!(s1.placement, s2.placement);
    assert_eq!(s1.order, s2.order);
}

#[test]
fn loop_index_and_parameters_never_leave_their_construct() {
    let mut s = Stager::new();
    let n = s.arg_i64(0).unwrap();
    let mut idx_node = None;
    s.staged_loop(&n, |s, i| {
        idx_node = Some(i.node);
        s.print_row(&[i.clone()], vec![PrintFmt::I64])
    })
    .unwrap();
    let g = s.finish();
    let sched = schedule(&g);
    let idx = idx_node.unwrap();
    assert_eq!(sched.placement[idx.idx()], g.node(idx).scope);
    assert!(is_inline(Op::LoopIdx) && is_inline(Op::Param) && is_inline(Op::Const));
}

#[test]
fn text_round_trip_preserves_every_node() {
    let mut s = Stager::new();
    // Touch every immediate payload kind.
    let spec = CsvSpec {
        path: "sales \"Q1\".csv".into(),
        header: true,
        cols: vec![
            CsvColTy {
                name: "region".into(),
                ty: ColKind::Str,
                dict: vec!["north".into(), "south\nwest".into()],
            },
            CsvColTy {
                name: "amount".into(),
                ty: ColKind::F64,
                dict: vec![],
            },
        ],
    };
    let src = s.csv_open(spec).unwrap();
    let rows = s.csv_rows(&src).unwrap();
    let regions = s.csv_col(&src, 0).unwrap();
    let amounts = s.csv_col(&src, 1).unwrap();
    let weights = s
        .const_arr_f64(vec![0.5, -0.0, f64::MIN_POSITIVE, 1.0 / 3.0])
        .unwrap();
    let lut = s.const_arr_i64(vec![i64::MIN, -1, 0, i64::MAX]).unwrap();
    let f = s
        .staged_func("magnitude", &[Stype::F64], false, |s, ps| {
            let e = s.exp(&ps[0])?;
            let half = s.const_f64(0.5);
            s.mul(&e, &half)
        })
        .unwrap();
    let kernel = s
        .staged_func(
            "scale_batch",
            &[Stype::arr(Stype::F64), Stype::I64, Stype::arr(Stype::F64)],
            true,
            |s, ps| {
                s.with_kernel_unlock(|s| {
                    s.staged_loop(&ps[1].clone(), |s, i| {
                        let v = s.arr_get(&ps[0], i)?;
                        let c = s.const_f64(2.5);
                        let w = s.mul(&v, &c)?;
                        s.arr_set(&ps[2], i, &w)
                    })
                })?;
                Ok(s.unit())
            },
        )
        .unwrap();
    let pool = s
        .pool_new(
            PoolCfg {
                workers: 3,
                queue_cap: 8,
                batch: 128,
                arity: 1,
                comp: vec![ScalarTy::I64, ScalarTy::F64],
            },
            &kernel,
        )
        .unwrap();
    s.staged_loop(&rows, |s, i| {
        let r = s.arr_get(&regions, i)?;
        let a0 = s.arr_get(&amounts, i)?;
        let a = s.call(&f, &[a0])?;
        let zero = s.const_i64(0);
        let w0 = s.arr_get(&weights, &zero)?;
        let scaled = s.mul(&a, &w0)?;
        let one = s.const_i64(1);
        let l = s.arr_get(&lut, &one)?;
        let keep = s.ge(&l, &zero)?;
        let lz = s.select(&keep, &l, &zero)?;
        s.print_row(
            &[r, scaled, lz],
            vec![
                PrintFmt::Str(vec!["north".into(), "south\nwest".into()]),
                PrintFmt::F64,
                PrintFmt::I64,
            ],
        )
    })
    .unwrap();
    s.pool_finish(&pool).unwrap();
    s.tick("rows").unwrap();
    s.phase_mark("done").unwrap();
    let g = s.finish();
    g.validate().unwrap();

    let text = to_text(&g);
    let back = from_text(&text).expect("parse back");
    assert_eq!(back, g, "structural equality after round-trip");
    assert_eq!(to_text(&back), text, "serialization is a fixed point");
}

#[test]
fn parser_rejects_malformed_graphs() {
    assert!(from_text("not a header\n").is_err());
    assert!(from_text("tandemir v1\n(0 block () ((kind root)) pure 0\n").is_err());
    // Operand above the defining node.
    let bad = "tandemir v1\n(0 block () ((kind root)) pure 0)\n(1 add (2 2) () pure 0)\n";
    assert!(from_text(bad).is_err());
    // Unknown op name.
    let bad = "tandemir v1\n(0 block () ((kind root)) pure 0)\n(1 frobnicate () () pure 0)\n";
    assert!(from_text(bad).is_err());
}

#[test]
fn float_bits_survive_the_text_form_exactly() {
    let mut s = Stager::new();
    let vals = [
        0.1 + 0.2,
        -0.0,
        f64::INFINITY,
        f64::NEG_INFINITY,
        f64::NAN,
        f64::MIN_POSITIVE / 2.0, // subnormal
        1.7976931348623157e308,
    ];
    for v in vals {
        let c = s.const_f64(v);
        let _keep = s.print_row(&[c], vec![PrintFmt::F64]);
    }
    let g = s.finish();
    let back = from_text(&to_text(&g)).unwrap();
    for id in g.ids() {
        if g.node(id).op == Op::Const {
            match (&g.node(id).imms[0], &back.node(id).imms[0]) {
                (Imm::F(a), Imm::F(b)) => assert_eq!(a.to_bits(), b.to_bits()),
                (Imm::I(_), Imm::I(_)) => {}
                other => panic!("unexpected {:?}", other),
            }
        }
    }
}
