//! Optimizer behavior: inlining, constant propagation through rebuilds,
//! liveness-based elimination, and idempotence.

use tandem_ir::optimize::{optimize, OptimizeConfig};
use tandem_ir::serialize::to_text;
use tandem_ir::*;

fn opt(g: &IrGraph) -> IrGraph {
    let out = optimize(g, &OptimizeConfig::default()).expect("optimize");
    out.validate().expect("optimized graph stays valid");
    out
}

fn opt_with(g: &IrGraph, inline_max: usize) -> IrGraph {
    let out = optimize(g, &OptimizeConfig { inline_max }).expect("optimize");
    out.validate().expect("optimized graph stays valid");
    out
}

#[test]
fn unused_pure_chains_disappear() {
    let mut s = Stager::new();
    let x = s.arg_i64(0).unwrap();
    let y = s.mul(&x, &x).unwrap();
    let _dead = s.mul(&y, &y).unwrap();
    let used = s.add(&x, &x).unwrap();
    s.print_row(&[used], vec![PrintFmt::I64]).unwrap();
    let g = opt(&s.finish());
    assert_eq!(g.count_op(Op::Mul), 0, "dead multiplies are gone");
    assert_eq!(g.count_op(Op::Add), 1);
    assert_eq!(g.count_op(Op::PrintRow), 1);
}

#[test]
fn unused_loads_disappear_but_stores_stay() {
    let mut s = Stager::new();
    let n = s.const_i64(4);
    let arr = s.arr_new(&n, ScalarTy::I64).unwrap();
    let i = s.const_i64(0);
    let v = s.const_i64(9);
    s.arr_set(&arr, &i, &v).unwrap();
    let _unused_load = s.arr_get(&arr, &i).unwrap();
    let g = opt(&s.finish());
    assert_eq!(g.count_op(Op::ArrGet), 0);
    assert_eq!(g.count_op(Op::ArrSet), 1);
    assert_eq!(g.count_op(Op::ArrNew), 1);
}

#[test]
fn uncalled_functions_vanish_with_their_io() {
    let mut s = Stager::new();
    s.staged_func("never", &[], true, |s, _| {
        s.tick("inside")?;
        Ok(s.unit())
    })
    .unwrap();
    let msg = s.const_i64(1);
    s.print_row(&[msg], vec![PrintFmt::I64]).unwrap();
    let g = opt(&s.finish());
    assert_eq!(g.count_op(Op::FuncDef), 0, "definition is unreachable");
    assert_eq!(g.count_op(Op::Tick), 0, "io inside it never executes");
    assert_eq!(g.count_op(Op::PrintRow), 1);
}

#[test]
fn called_functions_and_their_effects_survive() {
    let mut s = Stager::new();
    let f = s
        .staged_func("noisy", &[], true, |s, _| {
            s.tick("inside")?;
            Ok(s.unit())
        })
        .unwrap();
    s.call(&f, &[]).unwrap();
    let g = opt(&s.finish());
    assert_eq!(g.count_op(Op::FuncDef), 1);
    assert_eq!(g.count_op(Op::Call), 1);
    assert_eq!(g.count_op(Op::Tick), 1);
}

#[test]
fn small_functions_inline_and_fold_at_the_call_site() {
    let mut s = Stager::new();
    let f = s
        .staged_func("addmul", &[Stype::I64, Stype::I64], false, |s, ps| {
            let sum = s.add(&ps[0], &ps[1])?;
            s.mul(&sum, &ps[0])
        })
        .unwrap();
    let two = s.const_i64(2);
    let three = s.const_i64(3);
    let r = s.call(&f, &[two, three]).unwrap();
    s.print_row(&[r], vec![PrintFmt::I64]).unwrap();
    let g = opt(&s.finish());
    assert_eq!(g.count_op(Op::Call), 0, "call replaced by the body");
    assert_eq!(g.count_op(Op::FuncDef), 0, "no remaining callers");
    assert_eq!(g.count_op(Op::Add), 0, "constants folded after inlining");
    assert_eq!(g.count_op(Op::Mul), 0);
    // (2+3)*2 = 10 flows into the print directly.
    let print = g
        .ids()
        .find(|&id| g.node(id).op == Op::PrintRow)
        .expect("print survives");
    let arg = g.node(print).operands[0];
    assert!(matches!(g.node(arg).imms[0], Imm::I(10)));
}

#[test]
fn inlining_respects_the_size_threshold_and_opt_out() {
    let mut s = Stager::new();
    let f = s
        .staged_func("wide", &[Stype::I64], false, |s, ps| {
            // Eight distinct additions: body size above a threshold of 4.
            let mut acc = ps[0].clone();
            for k in 1..=8 {
                let c = s.const_i64(k);
                acc = s.add(&acc, &c)?;
            }
            Ok(acc)
        })
        .unwrap();
    let x = s.arg_i64(0).unwrap();
    let r = s.call(&f, &[x]).unwrap();
    s.print_row(&[r], vec![PrintFmt::I64]).unwrap();
    let g0 = s.finish();
    let kept = opt_with(&g0, 4);
    assert_eq!(kept.count_op(Op::Call), 1, "too big for the threshold");
    let inlined = opt_with(&g0, 64);
    assert_eq!(inlined.count_op(Op::Call), 0);

    // An explicit opt-out wins over any threshold.
    let mut s = Stager::new();
    let f = s
        .staged_func("pinned", &[Stype::I64], true, |s, ps| {
            let one = s.const_i64(1);
            s.add(&ps[0], &one)
        })
        .unwrap();
    let x = s.arg_i64(0).unwrap();
    let r = s.call(&f, &[x]).unwrap();
    s.print_row(&[r], vec![PrintFmt::I64]).unwrap();
    let g = opt_with(&s.finish(), 1024);
    assert_eq!(g.count_op(Op::Call), 1);
}

#[test]
fn inlined_copies_stay_independent_per_call_site() {
    let mut s = Stager::new();
    let f = s
        .staged_func("inc", &[Stype::I64], false, |s, ps| {
            let one = s.const_i64(1);
            s.add(&ps[0], &one)
        })
        .unwrap();
    let a = s.arg_i64(0).unwrap();
    let b = s.arg_i64(1).unwrap();
    let ra = s.call(&f, &[a]).unwrap();
    let rb = s.call(&f, &[b]).unwrap();
    s.print_row(&[ra, rb], vec![PrintFmt::I64, PrintFmt::I64])
        .unwrap();
    let g = opt(&s.finish());
    assert_eq!(g.count_op(Op::Call), 0);
    assert_eq!(g.count_op(Op::Add), 2, "one body copy per site");
}

#[test]
fn constant_conditions_keep_only_the_taken_branch() {
    // Build a graph whose condition becomes constant only after inlining
    // substitutes the argument.
    let mut s = Stager::new();
    let f = s
        .staged_func("pick", &[Stype::I64], false, |s, ps| {
            let zero = s.const_i64(0);
            let c = s.lt(&ps[0], &zero)?;
            s.staged_if(
                &c,
                |s| {
                    let m = s.const_i64(-1);
                    s.mul(&ps[0], &m)
                },
                |s| Ok(ps[0].clone()),
            )
        })
        .unwrap();
    let five = s.const_i64(5);
    let r = s.call(&f, &[five]).unwrap();
    s.print_row(&[r], vec![PrintFmt::I64]).unwrap();
    let g = opt(&s.finish());
    assert_eq!(g.count_op(Op::If), 0, "condition decided during rebuild");
    assert_eq!(g.count_op(Op::Mul), 0, "negation branch never copied");
    let print = g
        .ids()
        .find(|&id| g.node(id).op == Op::PrintRow)
        .expect("print survives");
    let arg = g.node(print).operands[0];
    assert!(matches!(g.node(arg).imms[0], Imm::I(5)));
}

#[test]
fn loops_whose_effects_are_observable_survive() {
    let mut s = Stager::new();
    let n = s.arg_i64(0).unwrap();
    let total = {
        let zero = s.const_i64(0);
        s.var_new(&zero).unwrap()
    };
    s.staged_loop(&n, |s, i| {
        let t = s.var_get(&total)?;
        let nt = s.add(&t, i)?;
        s.var_set(&total, &nt)
    })
    .unwrap();
    let t = s.var_get(&total).unwrap();
    s.print_row(&[t], vec![PrintFmt::I64]).unwrap();
    let g = opt(&s.finish());
    assert_eq!(g.count_op(Op::Loop), 1);
    assert_eq!(g.count_op(Op::VarSet), 1);
}

#[test]
fn loops_with_no_observable_effect_disappear() {
    let mut s = Stager::new();
    let n = s.arg_i64(0).unwrap();
    s.staged_loop(&n, |s, i| {
        // Allocates and mutates only loop-local storage.
        let len = s.const_i64(2);
        let scratch = s.arr_new(&len, ScalarTy::I64)?;
        let zero = s.const_i64(0);
        s.arr_set(&scratch, &zero, i)
    })
    .unwrap();
    let one = s.const_i64(1);
    s.print_row(&[one], vec![PrintFmt::I64]).unwrap();
    let g = opt(&s.finish());
    assert_eq!(g.count_op(Op::Loop), 0, "locally-scoped churn is dead");
    assert_eq!(g.count_op(Op::ArrNew), 0);
}

#[test]
fn ids_are_renumbered_densely() {
    let mut s = Stager::new();
    let x = s.arg_i64(0).unwrap();
    for k in 0..10 {
        let c = s.const_i64(k);
        let _dead = s.add(&x, &c).unwrap();
    }
    let used = s.mul(&x, &x).unwrap();
    s.print_row(&[used], vec![PrintFmt::I64]).unwrap();
    let g0 = s.finish();
    let g = opt(&g0);
    assert!(g.len() < g0.len());
    g.validate().expect("dense valid ids");
}

#[test]
fn optimizing_twice_is_byte_identical() {
    // A graph touching most features: functions, loops, branches, arrays,
    // hash tables, io.
    let mut s = Stager::new();
    let f = s
        .staged_func("clip", &[Stype::F64], false, |s, ps| {
            let zero = s.const_f64(0.0);
            let c = s.lt(&ps[0], &zero)?;
            let picked = s.select(&c, &zero, &ps[0])?;
            Ok(picked)
        })
        .unwrap();
    let n = s.arg_i64(0).unwrap();
    let len = s.const_i64(64);
    let arr = s.arr_new(&len, ScalarTy::F64).unwrap();
    let d = s.hash_new(&[ScalarTy::I64]).unwrap();
    s.staged_loop(&n, |s, i| {
        let v0 = s.arr_get(&arr, i)?;
        let v = s.call(&f, &[v0])?;
        let slot = s.hash_upsert(&d, &[i.clone()])?;
        s.arr_set(&arr, &slot, &v)?;
        let odd = {
            let two = s.const_i64(2);
            let r = s.rem(i, &two)?;
            let one = s.const_i64(1);
            s.eq(&r, &one)?
        };
        s.staged_when(&odd, |s| {
            let v = s.arr_get(&arr, i)?;
            s.print_row(&[v], vec![PrintFmt::F64])
        })
    })
    .unwrap();
    let size = s.hash_len(&d).unwrap();
    s.print_row(&[size], vec![PrintFmt::I64]).unwrap();
    let g0 = s.finish();
    let g1 = opt(&g0);
    let g2 = opt(&g1);
    assert_eq!(to_text(&g1), to_text(&g2));
}

#[test]
fn rebuild_merges_what_staging_could_not_see() {
    // Two calls compute the same value; after inlining, CSE merges the
    // bodies into one expression.
    let mut s = Stager::new();
    let f = s
        .staged_func("square", &[Stype::I64], false, |s, ps| {
            s.mul(&ps[0], &ps[0])
        })
        .unwrap();
    let g2 = s
        .staged_func("quad", &[Stype::I64], false, |s, ps| {
            let a = s.mul(&ps[0], &ps[0])?;
            s.mul(&a, &a)
        })
        .unwrap();
    let x = s.arg_i64(0).unwrap();
    let a = s.call(&f, &[x.clone()]).unwrap();
    let sq = s.mul(&a, &a).unwrap();
    let b = s.call(&g2, &[x]).unwrap();
    s.print_row(&[sq, b], vec![PrintFmt::I64, PrintFmt::I64])
        .unwrap();
    let g = opt(&s.finish());
    // x*x and (x*x)*(x*x) each exist once.
    assert_eq!(g.count_op(Op::Mul), 2);
}
