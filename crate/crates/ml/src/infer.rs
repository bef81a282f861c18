//! Staging a model as row-level computation over relational values.
//!
//! Models applied to rows have their weights fixed at staging time, so they
//! are staged as constants. Two forms exist:
//!   * [`stage_scalar`] — one fully unrolled arithmetic chain per call site,
//!     consuming scalar staged values (used when a model is applied inline
//!     per record);
//!   * [`stage_batch`] — a loop over the rows of a flat input array (used
//!     inside the batched-kernel function that vectorized and pooled
//!     application modes share).
//!
//! Both are built from the same per-row chain builder, so a model applied per
//! record and the same model applied to a batch of rows perform exactly the
//! same floating-point operations in the same order and agree bit-for-bit —
//! and both match [`MlpModel::eval_scalar`](crate::model::MlpModel::eval_scalar).

use tandem_ir::{StagedValue, Stager};

use crate::error::{MlError, Result};
use crate::model::{Head, MlpModel, ModelKind};
use crate::tensor::KernelMode;

/// Stage one row of the model over already-staged scalar inputs. Weights
/// become float constants; accumulation is `((0 + x0·w) + x1·w) + …` in
/// ascending input order, biases are added once, activations follow.
fn stage_row(s: &mut Stager, model: &MlpModel, inputs: &[StagedValue]) -> Result<StagedValue> {
    if inputs.len() != model.arity() {
        return Err(MlError::Model(format!(
            "model expects {} inputs, got {}",
            model.arity(),
            inputs.len()
        )));
    }
    match model.kind {
        ModelKind::DotProduct => {
            let mut acc = s.const_f64(0.0);
            for (x, wv) in inputs.iter().zip(&model.weights[0]) {
                let wc = s.const_f64(*wv);
                let t = s.mul(x, &wc)?;
                acc = s.add(&acc, &t)?;
            }
            Ok(acc)
        }
        ModelKind::Mlp3(head) => {
            if model.dims[3] != 1 {
                return Err(MlError::Model("row-level models need output dim 1".into()));
            }
            let mut cur = inputs.to_vec();
            for l in 0..3 {
                let outd = model.dims[l + 1];
                let w = &model.weights[l];
                let b = &model.biases[l];
                let mut next = Vec::with_capacity(outd);
                for j in 0..outd {
                    let mut acc = s.const_f64(0.0);
                    for (kk, x) in cur.iter().enumerate() {
                        let wc = s.const_f64(w[kk * outd + j]);
                        let t = s.mul(x, &wc)?;
                        acc = s.add(&acc, &t)?;
                    }
                    let bc = s.const_f64(b[j]);
                    let mut y = s.add(&acc, &bc)?;
                    if l < 2 {
                        let zero = s.const_f64(0.0);
                        let pos = s.gt(&y, &zero)?;
                        y = s.select(&pos, &y, &zero)?;
                    } else if head == Head::Classify {
                        let ny = s.neg(&y)?;
                        let ey = s.exp(&ny)?;
                        let one = s.const_f64(1.0);
                        let den = s.add(&one, &ey)?;
                        y = s.div(&one, &den)?;
                    }
                    next.push(y);
                }
                cur = next;
            }
            Ok(cur.swap_remove(0))
        }
    }
}

/// Stage the model applied to one record's scalar arguments, yielding the
/// staged output value. This is the inline per-record form.
pub fn stage_scalar(
    s: &mut Stager,
    model: &MlpModel,
    args: &[StagedValue],
) -> Result<StagedValue> {
    stage_row(s, model, args)
}

/// Stage the model applied to the first `n_valid` rows of a flat row-major
/// input array `x` (row stride = model arity), writing one output per row
/// into `out`. Rows at index ≥ `n_valid` are neither read nor written.
///
/// `Loops` mode stages a single row loop whose body is the unrolled per-row
/// chain. `KernelNode` mode stages opaque matrix-multiply nodes (one per
/// layer) plus bias/activation passes, letting the backend bind a BLAS
/// routine; intermediate activations are allocated locally.
pub fn stage_batch(
    s: &mut Stager,
    model: &MlpModel,
    x: &StagedValue,
    n_valid: &StagedValue,
    out: &StagedValue,
    mode: KernelMode,
) -> Result<()> {
    let arity = model.arity();
    match mode {
        KernelMode::Loops => {
            let model = model.clone();
            s.staged_loop(n_valid, |s, r| {
                let stride = s.const_i64(arity as i64);
                let base = s.mul(r, &stride)?;
                let mut inputs = Vec::with_capacity(arity);
                for c in 0..arity {
                    let cc = s.const_i64(c as i64);
                    let idx = s.add(&base, &cc)?;
                    inputs.push(s.arr_get(x, &idx)?);
                }
                let y = stage_row(s, &model, &inputs).map_err(crate::tensor::stage_only)?;
                s.arr_set(out, r, &y)?;
                Ok(())
            })?;
            Ok(())
        }
        KernelMode::KernelNode => stage_batch_kernel_nodes(s, model, x, n_valid, out),
    }
}

/// Kernel-node lowering of [`stage_batch`]: each layer's matrix product is a
/// single opaque node; bias, relu, and the output head are staged loops.
fn stage_batch_kernel_nodes(
    s: &mut Stager,
    model: &MlpModel,
    x: &StagedValue,
    n_valid: &StagedValue,
    out: &StagedValue,
) -> Result<()> {
    match model.kind {
        ModelKind::DotProduct => {
            let d = model.dims[0];
            let wc = s.const_arr_f64(model.weights[0].clone())?;
            s.kernel_matmul(x, &wc, out, n_valid, d, 1)?;
            Ok(())
        }
        ModelKind::Mlp3(head) => {
            if model.dims[3] != 1 {
                return Err(MlError::Model("row-level models need output dim 1".into()));
            }
            let mut h = x.clone();
            for l in 0..3 {
                let (ind, outd) = (model.dims[l], model.dims[l + 1]);
                let wc = s.const_arr_f64(model.weights[l].clone())?;
                let dest = if l == 2 {
                    out.clone()
                } else {
                    let od = s.const_i64(outd as i64);
                    let len = s.mul(n_valid, &od)?;
                    s.arr_new(&len, tandem_ir::ScalarTy::F64)?
                };
                s.kernel_matmul(&h, &wc, &dest, n_valid, ind, outd)?;
                // Bias add per row; the final layer also applies the head.
                let biases = model.biases[l].clone();
                s.staged_loop(n_valid, |s, r| {
                    let od = s.const_i64(outd as i64);
                    let base = s.mul(r, &od)?;
                    for (j, &bv) in biases.iter().enumerate() {
                        let jc = s.const_i64(j as i64);
                        let idx = s.add(&base, &jc)?;
                        let v = s.arr_get(&dest, &idx)?;
                        let bc = s.const_f64(bv);
                        let mut y = s.add(&v, &bc)?;
                        if l == 2 && head == Head::Classify {
                            let ny = s.neg(&y)?;
                            let ey = s.exp(&ny)?;
                            let one = s.const_f64(1.0);
                            let den = s.add(&one, &ey)?;
                            y = s.div(&one, &den)?;
                        }
                        s.arr_set(&dest, &idx, &y)?;
                    }
                    Ok(())
                })?;
                if l < 2 {
                    let od = s.const_i64(outd as i64);
                    let len = s.mul(n_valid, &od)?;
                    s.kernel_relu(&dest, &dest, &len)?;
                }
                h = dest;
            }
            Ok(())
        }
    }
}
