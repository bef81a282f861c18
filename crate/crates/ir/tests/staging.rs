//! Staging-time behavior: scope-keyed merging, version-keyed reads,
//! folding, partial evaluation, and the builder's error checks.

use tandem_ir::stage::Result;
use tandem_ir::*;

fn stager() -> Stager {
    Stager::new()
}

#[test]
fn identical_constants_share_one_node() {
    let mut s = stager();
    let a = s.const_i64(7);
    let b = s.const_i64(7);
    assert_eq!(a.node, b.node);
    assert_eq!(s.graph().count_op(Op::Const), 1);
}

#[test]
fn identical_pure_ops_share_one_node() {
    let mut s = stager();
    let x = s.arg_i64(0).unwrap();
    let y = s.arg_i64(1).unwrap();
    let a = s.add(&x, &y).unwrap();
    let b = s.add(&x, &y).unwrap();
    assert_eq!(a.node, b.node);
    assert_eq!(s.graph().count_op(Op::Add), 1);
}

#[test]
fn sibling_branches_do_not_share_merges() {
    // The same expression staged in the then- and else-branch must be two
    // nodes: only one branch executes, so neither can serve the other.
    let mut s = stager();
    let x = s.arg_i64(0).unwrap();
    let zero = s.const_i64(0);
    let c = s.lt(&x, &zero).unwrap();
    let v = s
        .staged_if(
            &c,
            |s| {
                let x = s.arg_i64(0).unwrap();
                s.mul(&x, &x)
            },
            |s| {
                let x = s.arg_i64(0).unwrap();
                s.mul(&x, &x)
            },
        )
        .unwrap();
    assert_eq!(v.stype, Stype::I64);
    assert_eq!(s.graph().count_op(Op::Mul), 2);
    // The index kept both entries under different scope keys.
    let mul_scopes: std::collections::BTreeSet<NodeId> = s
        .cse_entries()
        .filter(|(k, _)| k.op == Op::Mul)
        .map(|(k, _)| k.scope)
        .collect();
    assert_eq!(mul_scopes.len(), 2);
}

#[test]
fn nested_scopes_reuse_outer_nodes() {
    let mut s = stager();
    let x = s.arg_i64(0).unwrap();
    let outer = s.mul(&x, &x).unwrap();
    let n = s.const_i64(3);
    s.staged_loop(&n, |s, _i| {
        let x = s.arg_i64(0).unwrap();
        let inner = s.mul(&x, &x).unwrap();
        assert_eq!(inner.node, outer.node);
        Ok(())
    })
    .unwrap();
    assert_eq!(s.graph().count_op(Op::Mul), 1);
}

#[test]
fn constants_fold_through_arithmetic() {
    let mut s = stager();
    let a = s.const_i64(2);
    let b = s.const_i64(3);
    let c = s.add(&a, &b).unwrap();
    let d = s.const_i64(4);
    let e = s.mul(&c, &d).unwrap();
    match &s.graph().node(e.node).imms[0] {
        Imm::I(v) => assert_eq!(*v, 20),
        other => panic!("expected folded constant, got {:?}", other),
    }
    assert_eq!(s.graph().count_op(Op::Add), 0);
    assert_eq!(s.graph().count_op(Op::Mul), 0);
}

#[test]
fn int_wrapping_matches_two_complement() {
    let mut s = stager();
    let a = s.const_i64(i64::MAX);
    let b = s.const_i64(1);
    let c = s.add(&a, &b).unwrap();
    match &s.graph().node(c.node).imms[0] {
        Imm::I(v) => assert_eq!(*v, i64::MIN),
        other => panic!("expected folded constant, got {:?}", other),
    }
}

#[test]
fn division_by_zero_never_folds() {
    let mut s = stager();
    let a = s.const_i64(10);
    let z = s.const_i64(0);
    let d = s.div(&a, &z).unwrap();
    assert_eq!(s.graph().node(d.node).op, Op::Div);
}

/// Staged exponentiation by squaring. With multiply-by-one collapsing to
/// its operand, the recursion for n=7 stages exactly the chain
/// b*b, b*b^2, (b^3)^2, b*b^6 — four multiplications.
fn power(s: &mut Stager, base: &StagedValue, n: u32) -> Result<StagedValue> {
    if n == 0 {
        return Ok(s.const_i64(1));
    }
    if n % 2 == 1 {
        let rest = power(s, base, n - 1)?;
        s.mul(base, &rest)
    } else {
        let half = power(s, base, n / 2)?;
        s.mul(&half, &half)
    }
}

#[test]
fn power_of_seven_stages_four_multiplications() {
    let mut s = stager();
    let b = s.arg_i64(0).unwrap();
    let p = power(&mut s, &b, 7).unwrap();
    assert_eq!(s.graph().count_op(Op::Mul), 4);
    assert_eq!(p.stype, Stype::I64);
    // And the residue specializes completely for a constant base:
    // 3^7 = 2187 folds at staging time.
    let mut s2 = stager();
    let three = s2.const_i64(3);
    let v = power(&mut s2, &three, 7).unwrap();
    assert_eq!(s2.graph().count_op(Op::Mul), 0);
    match &s2.graph().node(v.node).imms[0] {
        Imm::I(v) => assert_eq!(*v, 2187),
        other => panic!("expected folded constant, got {:?}", other),
    }
}

#[test]
fn float_mul_by_one_collapses_but_add_zero_stays() {
    let mut s = stager();
    let x0 = s.arg_i64(0).unwrap();
    let x = s.i2f(&x0).unwrap();
    let one = s.const_f64(1.0);
    let m = s.mul(&x, &one).unwrap();
    assert_eq!(m.node, x.node);
    // -0.0 + 0.0 is +0.0, so adding float zero is not an identity.
    let zero = s.const_f64(0.0);
    let a = s.add(&x, &zero).unwrap();
    assert_ne!(a.node, x.node);
    assert_eq!(s.graph().node(a.node).op, Op::Add);
}

#[test]
fn int_add_zero_and_mul_zero_collapse() {
    let mut s = stager();
    let x = s.arg_i64(0).unwrap();
    let zero = s.const_i64(0);
    let a = s.add(&x, &zero).unwrap();
    assert_eq!(a.node, x.node);
    let m = s.mul(&x, &zero).unwrap();
    match &s.graph().node(m.node).imms[0] {
        Imm::I(v) => assert_eq!(*v, 0),
        other => panic!("expected folded zero, got {:?}", other),
    }
}

#[test]
fn reads_merge_only_between_writes() {
    let mut s = stager();
    let ten = s.const_i64(10);
    let arr = s.arr_new(&ten, ScalarTy::I64).unwrap();
    let i = s.const_i64(2);
    let g1 = s.arr_get(&arr, &i).unwrap();
    let g2 = s.arr_get(&arr, &i).unwrap();
    assert_eq!(g1.node, g2.node, "no write in between: one load");
    let v = s.const_i64(42);
    s.arr_set(&arr, &i, &v).unwrap();
    let g3 = s.arr_get(&arr, &i).unwrap();
    assert_ne!(g3.node, g1.node, "the write invalidates the merge");
    let g4 = s.arr_get(&arr, &i).unwrap();
    assert_eq!(g4.node, g3.node);
}

#[test]
fn writes_to_one_array_do_not_invalidate_another() {
    let mut s = stager();
    let ten = s.const_i64(10);
    let a = s.arr_new(&ten, ScalarTy::I64).unwrap();
    let b = s.arr_new(&ten, ScalarTy::I64).unwrap();
    let i = s.const_i64(0);
    let ga1 = s.arr_get(&a, &i).unwrap();
    let v = s.const_i64(5);
    s.arr_set(&b, &i, &v).unwrap();
    let ga2 = s.arr_get(&a, &i).unwrap();
    assert_eq!(ga1.node, ga2.node, "independent regions stay merged");
}

#[test]
fn io_invalidates_all_read_merges() {
    let mut s = stager();
    let ten = s.const_i64(10);
    let a = s.arr_new(&ten, ScalarTy::I64).unwrap();
    let i = s.const_i64(0);
    let g1 = s.arr_get(&a, &i).unwrap();
    s.tick("counter").unwrap();
    let g2 = s.arr_get(&a, &i).unwrap();
    assert_ne!(g1.node, g2.node);
}

#[test]
fn reads_never_merge_across_replayed_scopes() {
    // A loop body re-executes: a load staged before the loop saw the value
    // at that program point and cannot serve iterations that observe
    // writes from previous iterations.
    let mut s = stager();
    let ten = s.const_i64(10);
    let a = s.arr_new(&ten, ScalarTy::I64).unwrap();
    let i = s.const_i64(0);
    let outer = s.arr_get(&a, &i).unwrap();
    let n = s.const_i64(3);
    s.staged_loop(&n, |s, idx| {
        let i = s.const_i64(0);
        let inner = s.arr_get(&a, &i).unwrap();
        assert_ne!(inner.node, outer.node);
        let one = s.const_i64(1);
        let next = s.add(&inner, &one)?;
        s.arr_set(&a, idx, &next)?;
        Ok(())
    })
    .unwrap();
}

#[test]
fn cell_reads_track_writes() {
    let mut s = stager();
    let init = s.const_i64(0);
    let v = s.var_new(&init).unwrap();
    let g1 = s.var_get(&v).unwrap();
    let g2 = s.var_get(&v).unwrap();
    assert_eq!(g1.node, g2.node);
    let one = s.const_i64(1);
    s.var_set(&v, &one).unwrap();
    let g3 = s.var_get(&v).unwrap();
    assert_ne!(g3.node, g1.node);
}

#[test]
fn constant_condition_stages_only_the_taken_branch() {
    let mut s = stager();
    let t = s.const_bool(true);
    let r = s
        .staged_if(
            &t,
            |s| Ok(s.const_i64(1)),
            |s| {
                let x = s.arg_i64(0).unwrap();
                s.mul(&x, &x)
            },
        )
        .unwrap();
    match &s.graph().node(r.node).imms[0] {
        Imm::I(v) => assert_eq!(*v, 1),
        other => panic!("expected the then-value, got {:?}", other),
    }
    assert_eq!(s.graph().count_op(Op::If), 0);
    assert_eq!(s.graph().count_op(Op::Mul), 0, "untaken branch never staged");
    assert_eq!(s.graph().count_op(Op::Block), 1, "only the root block");
}

#[test]
fn zero_count_loop_still_stages_structure() {
    // Loops are never speculatively elided at staging time, whatever the
    // count; removal is the optimizer's decision.
    let mut s = stager();
    let zero = s.const_i64(0);
    s.staged_loop(&zero, |s, _| {
        s.tick("never")?;
        Ok(())
    })
    .unwrap();
    assert_eq!(s.graph().count_op(Op::Loop), 1);
}

#[test]
fn branch_type_mismatch_is_rejected() {
    let mut s = stager();
    let x = s.arg_i64(0).unwrap();
    let zero = s.const_i64(0);
    let c = s.lt(&x, &zero).unwrap();
    let r = s.staged_if(
        &c,
        |s| Ok(s.const_i64(1)),
        |s| Ok(s.const_f64(1.0)),
    );
    assert!(matches!(r, Err(StageError::BranchTypeMismatch { .. })));
}

#[test]
fn scope_escape_is_rejected() {
    // Capture a loop-local value and try to use it after the loop.
    let mut s = stager();
    let n = s.const_i64(3);
    let mut leaked: Option<StagedValue> = None;
    s.staged_loop(&n, |s, idx| {
        let one = s.const_i64(1);
        leaked = Some(s.add(idx, &one)?);
        Ok(())
    })
    .unwrap();
    let leaked = leaked.unwrap();
    let two = s.const_i64(2);
    let r = s.mul(&leaked, &two);
    assert!(matches!(r, Err(StageError::ScopeViolation { .. })));
}

#[test]
fn mismatched_operand_types_are_rejected() {
    let mut s = stager();
    let a = s.const_i64(1);
    let b = s.const_f64(1.0);
    assert!(matches!(s.add(&a, &b), Err(StageError::TypeMismatch { .. })));
    let t = s.const_bool(true);
    assert!(matches!(s.add(&t, &t), Err(StageError::TypeMismatch { .. })));
}

#[test]
fn function_calls_merge_when_pure() {
    let mut s = stager();
    let f = s
        .staged_func("square", &[Stype::I64], false, |s, ps| {
            s.mul(&ps[0], &ps[0])
        })
        .unwrap();
    let x = s.arg_i64(0).unwrap();
    let c1 = s.call(&f, &[x.clone()]).unwrap();
    let c2 = s.call(&f, &[x.clone()]).unwrap();
    assert_eq!(c1.node, c2.node, "identical pure calls are one node");
    let y = s.arg_i64(1).unwrap();
    let c3 = s.call(&f, &[y]).unwrap();
    assert_ne!(c3.node, c1.node);
}

#[test]
fn calls_returning_fresh_storage_never_merge() {
    let mut s = stager();
    let f = s
        .staged_func("make", &[], false, |s, _| {
            let n = s.const_i64(4);
            s.arr_new(&n, ScalarTy::F64)
        })
        .unwrap();
    let a = s.call(&f, &[]).unwrap();
    let b = s.call(&f, &[]).unwrap();
    assert_ne!(a.node, b.node, "each call allocates its own array");
}

#[test]
fn call_effect_substitutes_arguments_for_parameters() {
    let mut s = stager();
    let f = s
        .staged_func(
            "bump",
            &[Stype::arr(Stype::I64)],
            false,
            |s, ps| {
                let i = s.const_i64(0);
                let v = s.arr_get(&ps[0], &i)?;
                let one = s.const_i64(1);
                let nv = s.add(&v, &one)?;
                s.arr_set(&ps[0], &i, &nv)?;
                Ok(s.unit())
            },
        )
        .unwrap();
    let n = s.const_i64(8);
    let arr = s.arr_new(&n, ScalarTy::I64).unwrap();
    let i = s.const_i64(0);
    let before = s.arr_get(&arr, &i).unwrap();
    let c = s.call(&f, &[arr.clone()]).unwrap();
    assert_eq!(
        s.graph().node(c.node).effect,
        Effect::Write(arr.node),
        "the callee's parameter write lands on the argument array"
    );
    let after = s.arr_get(&arr, &i).unwrap();
    assert_ne!(before.node, after.node, "the call invalidates loads");
}

#[test]
fn functions_must_be_defined_at_root() {
    let mut s = stager();
    let n = s.const_i64(1);
    let r = s.staged_loop(&n, |s, _| {
        let e = s.staged_func("inner", &[], false, |s, _| Ok(s.const_i64(1)));
        assert!(matches!(e, Err(StageError::FuncNotAtRoot(_))));
        Ok(())
    });
    r.unwrap();
}

#[test]
fn recursion_is_impossible_by_construction() {
    let mut s = stager();
    let r = s.staged_func("rec", &[Stype::I64], false, |s, ps| {
        // The name is not registered until the body is finished, so a
        // self-call cannot resolve.
        let fake = FuncHandle {
            node: NodeId(0),
            name: "rec".into(),
        };
        let e = s.call(&fake, &[ps[0].clone()]);
        assert!(matches!(e, Err(StageError::UnknownFunc(_))));
        Ok(ps[0].clone())
    });
    r.unwrap();
}

#[test]
fn duplicate_function_names_are_rejected() {
    let mut s = stager();
    s.staged_func("f", &[], false, |s, _| Ok(s.const_i64(1)))
        .unwrap();
    let r = s.staged_func("f", &[], false, |s, _| Ok(s.const_i64(2)));
    assert!(matches!(r, Err(StageError::DuplicateFunc(_))));
}

#[test]
fn control_flow_lock_blocks_ifs_but_kernels_may_loop() {
    let mut s = stager();
    s.lock_control_flow();
    let t = s.const_bool(true);
    let r = s.staged_if(&t, |s| Ok(s.unit()), |s| Ok(s.unit()));
    // Constant conditions fold before the check fires, so use a dynamic one.
    assert!(r.is_ok());
    let x = s.arg_i64(0).unwrap();
    let zero = s.const_i64(0);
    let c = s.lt(&x, &zero).unwrap();
    let r = s.staged_if(&c, |s| Ok(s.unit()), |s| Ok(s.unit()));
    assert!(matches!(r, Err(StageError::ControlFlowInGradScope(_))));
    let n = s.const_i64(4);
    let r = s.staged_loop(&n, |_, _| Ok(()));
    assert!(matches!(r, Err(StageError::ControlFlowInGradScope(_))));
    let ok = s.with_kernel_unlock(|s| {
        let n = s.const_i64(4);
        s.staged_loop(&n, |_, _| Ok(()))
    });
    assert!(ok.is_ok(), "kernel staging may loop under the lock");
    s.unlock_control_flow();
    let n = s.const_i64(4);
    assert!(s.staged_loop(&n, |_, _| Ok(())).is_ok());
}

#[test]
fn pooled_kernels_must_be_closed() {
    let mut s = stager();
    let captured = s.arg_i64(0).unwrap();
    let captured_f = s.i2f(&captured).unwrap();
    let open = s
        .staged_func(
            "open_kernel",
            &[
                Stype::arr(Stype::F64),
                Stype::I64,
                Stype::arr(Stype::F64),
            ],
            true,
            |s, ps| {
                s.with_kernel_unlock(|s| {
                    s.staged_loop(&ps[1].clone(), |s, i| {
                        let v = s.arr_get(&ps[0], i)?;
                        let w = s.mul(&v, &captured_f)?; // captures!
                        s.arr_set(&ps[2], i, &w)
                    })
                })?;
                Ok(s.unit())
            },
        )
        .unwrap();
    let cfg = PoolCfg {
        workers: 2,
        queue_cap: 4,
        batch: 16,
        arity: 1,
        comp: vec![],
    };
    let r = s.pool_new(cfg.clone(), &open);
    assert!(matches!(r, Err(StageError::OpenKernel(_))));

    let closed = s
        .staged_func(
            "closed_kernel",
            &[
                Stype::arr(Stype::F64),
                Stype::I64,
                Stype::arr(Stype::F64),
            ],
            true,
            |s, ps| {
                s.with_kernel_unlock(|s| {
                    s.staged_loop(&ps[1].clone(), |s, i| {
                        let v = s.arr_get(&ps[0], i)?;
                        let two = s.const_f64(2.0);
                        let w = s.mul(&v, &two)?;
                        s.arr_set(&ps[2], i, &w)
                    })
                })?;
                Ok(s.unit())
            },
        )
        .unwrap();
    assert!(s.pool_new(cfg, &closed).is_ok());
}

#[test]
fn effectful_nodes_never_merge() {
    let mut s = stager();
    s.tick("t").unwrap();
    s.tick("t").unwrap();
    assert_eq!(s.graph().count_op(Op::Tick), 2);
    let d = s.hash_new(&[ScalarTy::I64]).unwrap();
    let k = s.arg_i64(0).unwrap();
    let u1 = s.hash_upsert(&d, &[k.clone()]).unwrap();
    let u2 = s.hash_upsert(&d, &[k.clone()]).unwrap();
    assert_ne!(u1.node, u2.node, "an insert changes the table");
    // Lookups on the other hand merge while nothing mutates.
    let l1 = s.hash_lookup(&d, &[k.clone()]).unwrap();
    let l2 = s.hash_lookup(&d, &[k]).unwrap();
    assert_eq!(l1.node, l2.node);
}

#[test]
fn graphs_validate_by_construction() {
    let mut s = stager();
    let spec = CsvSpec {
        path: "data.csv".into(),
        header: true,
        cols: vec![
            CsvColTy {
                name: "id".into(),
                ty: ColKind::I64,
                dict: vec![],
            },
            CsvColTy {
                name: "score".into(),
                ty: ColKind::F64,
                dict: vec![],
            },
        ],
    };
    let src = s.csv_open(spec).unwrap();
    let rows = s.csv_rows(&src).unwrap();
    let ids = s.csv_col(&src, 0).unwrap();
    let scores = s.csv_col(&src, 1).unwrap();
    s.staged_loop(&rows, |s, i| {
        let id = s.arr_get(&ids, i)?;
        let sc = s.arr_get(&scores, i)?;
        s.print_row(&[id, sc], vec![PrintFmt::I64, PrintFmt::F64])
    })
    .unwrap();
    s.graph().validate().expect("structurally valid graph");
}
