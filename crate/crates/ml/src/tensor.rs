//! Staged tensors and reverse-mode differentiation.
//!
//! A [`Tensor`] pairs a staged flat float64 array with a shape known at
//! staging time (row-major layout). Forward operations stage loops over the
//! array and, while a gradient tape is active, record themselves so
//! [`TensorCtx::backward`] can replay the tape in reverse and stage the
//! gradient computation. Differentiated code is restricted to current-stage
//! control flow: while the tape is recording, staged `if`/`loop`/`while`
//! cannot be opened (the underlying graph builder enforces this), which keeps
//! every recorded op a straight-line array computation with a known shape.
//!
//! Operation order is part of the contract: every reduction accumulates as
//! `((0 + t0) + t1) + …` in ascending index order, so independent evaluations
//! that follow the same rule agree bit-for-bit.

use std::collections::HashMap;

use tandem_ir::{NodeId, ScalarTy, StagedValue, Stager};

use crate::error::{MlError, Result};
use crate::model::Head;

/// How matrix multiplication is staged.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum KernelMode {
    /// Nested loops over rows, columns, and the shared dimension.
    #[default]
    Loops,
    /// A single opaque kernel node the backend binds to a BLAS routine.
    KernelNode,
}

/// A staged float64 array with a staging-time shape.
#[derive(Debug, Clone)]
pub struct Tensor {
    /// Flat row-major element array (staged, element type f64).
    pub data: StagedValue,
    /// Dimensions fixed at staging time. Empty = scalar (one element).
    pub shape: Vec<usize>,
    /// Whether gradients should flow into this tensor during backward.
    pub requires_grad: bool,
}

impl Tensor {
    /// Total element count (1 for the empty shape).
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }

    fn rank2(&self, what: &str) -> Result<(usize, usize)> {
        match self.shape.as_slice() {
            [m, n] => Ok((*m, *n)),
            other => Err(MlError::Shape(format!("{what} must be rank 2, got rank {}", other.len()))),
        }
    }

    /// View the shape as rows × columns: `[m,n]` as is, `[m]` as m×1,
    /// scalars as 1×1.
    fn rows_cols(&self) -> (usize, usize) {
        match self.shape.as_slice() {
            [m, n] => (*m, *n),
            [m] => (*m, 1),
            _ => (1, 1),
        }
    }
}

/// A named trainable tensor with a persistent gradient buffer.
#[derive(Debug, Clone)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
}

/// One recorded forward operation with everything its backward rule needs.
enum Rec {
    Matmul { a: Tensor, b: Tensor, out: Tensor, m: usize, k: usize, n: usize },
    AddBias { x: Tensor, b: Tensor, out: Tensor, m: usize, n: usize },
    Relu { x: Tensor, out: Tensor },
    Sigmoid { x: Tensor, out: Tensor },
    Mse {
        pred: Tensor,
        target: Tensor,
        valid: Option<StagedValue>,
        denom: StagedValue,
        rows: usize,
        cols: usize,
        out: Tensor,
    },
}

/// Staging context for tensor programs: holds the gradient tape, the matmul
/// emission mode, and the set of registered parameters.
#[derive(Default)]
pub struct TensorCtx {
    recording: bool,
    tape: Vec<Rec>,
    pub kernel_mode: KernelMode,
    /// Parameter gradient buffers keyed by the parameter value's array node.
    params: Vec<(NodeId, Tensor)>,
}

/// Stage a zero-filled tensor (fresh allocations start zeroed).
pub fn tensor_zeros(s: &mut Stager, shape: &[usize]) -> Result<Tensor> {
    let numel: usize = shape.iter().product();
    let len = s.const_i64(numel as i64);
    let data = s.with_kernel_unlock(|s| s.arr_new(&len, ScalarTy::F64))?;
    Ok(Tensor { data, shape: shape.to_vec(), requires_grad: false })
}

/// Stage a tensor initialized from staging-time values. The result owns a
/// mutable copy of the constants.
pub fn tensor_from_literals(s: &mut Stager, shape: &[usize], values: &[f64]) -> Result<Tensor> {
    let numel: usize = shape.iter().product();
    if values.len() != numel {
        return Err(MlError::Shape(format!(
            "shape {shape:?} holds {numel} elements, got {} values",
            values.len()
        )));
    }
    let data = s.with_kernel_unlock(|s| -> tandem_ir::stage::Result<StagedValue> {
        let c = s.const_arr_f64(values.to_vec())?;
        s.arr_from_const(&c)
    })?;
    Ok(Tensor { data, shape: shape.to_vec(), requires_grad: false })
}

impl Parameter {
    /// Stage a parameter: a mutable value array initialized from `values` and
    /// a zeroed gradient array of the same shape, registered with `ctx` so
    /// backward accumulates into it.
    pub fn new(
        s: &mut Stager,
        ctx: &mut TensorCtx,
        name: &str,
        shape: &[usize],
        values: &[f64],
    ) -> Result<Parameter> {
        let mut value = tensor_from_literals(s, shape, values)?;
        value.requires_grad = true;
        let grad = tensor_zeros(s, shape)?;
        ctx.params.push((value.data.node, grad.clone()));
        Ok(Parameter { name: name.to_string(), value, grad })
    }
}

/// Flat index `i*stride + j` where `i` is staged and `stride`, `j` are known.
fn flat_idx(s: &mut Stager, i: &StagedValue, stride: usize, j: usize) -> Result<StagedValue> {
    let st = s.const_i64(stride as i64);
    let base = s.mul(i, &st)?;
    let jc = s.const_i64(j as i64);
    Ok(s.add(&base, &jc)?)
}

/// `arr[idx] += v` staged as read, add, write.
fn accum_at(s: &mut Stager, arr: &StagedValue, idx: &StagedValue, v: &StagedValue) -> Result<()> {
    let old = s.arr_get(arr, idx)?;
    let neu = s.add(&old, v)?;
    s.arr_set(arr, idx, &neu)?;
    Ok(())
}

impl TensorCtx {
    pub fn new() -> TensorCtx {
        TensorCtx::default()
    }

    /// Start recording forward operations. Staged control flow is locked out
    /// until [`backward`](Self::backward) runs, so everything on the tape is
    /// straight-line code with staging-time shapes.
    pub fn begin_tape(&mut self, s: &mut Stager) -> Result<()> {
        if self.recording {
            return Err(MlError::Tape("tape is already recording".into()));
        }
        self.recording = true;
        s.lock_control_flow();
        Ok(())
    }

    /// Number of ops currently recorded (diagnostic).
    pub fn tape_len(&self) -> usize {
        self.tape.len()
    }

    fn record(&mut self, rec: Rec) {
        if self.recording {
            self.tape.push(rec);
        }
    }

    /// Matrix product `[m,k]·[k,n] → [m,n]`. Loop mode stages a row loop with
    /// the column and shared dimensions unrolled; kernel mode stages a single
    /// opaque node. Both accumulate over the shared dimension in ascending
    /// order.
    pub fn matmul(&mut self, s: &mut Stager, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        let (m, ka) = a.rank2("matmul left")?;
        let (kb, n) = b.rank2("matmul right")?;
        if ka != kb {
            return Err(MlError::Shape(format!(
                "matmul inner dims disagree: [{m},{ka}] vs [{kb},{n}]"
            )));
        }
        let k = ka;
        let mut out = tensor_zeros(s, &[m, n])?;
        out.requires_grad = self.recording && (a.requires_grad || b.requires_grad);
        let (ad, bd, od) = (a.data.clone(), b.data.clone(), out.data.clone());
        s.with_kernel_unlock(|s| -> tandem_ir::stage::Result<()> {
            match self.kernel_mode {
                KernelMode::KernelNode => {
                    let mc = s.const_i64(m as i64);
                    s.kernel_matmul(&ad, &bd, &od, &mc, k, n)
                }
                KernelMode::Loops => {
                    let mc = s.const_i64(m as i64);
                    s.staged_loop(&mc, |s, i| {
                        for j in 0..n {
                            let mut acc = s.const_f64(0.0);
                            for kk in 0..k {
                                let ai = flat_idx(s, i, k, kk).map_err(stage_only)?;
                                let av = s.arr_get(&ad, &ai)?;
                                let bi = s.const_i64((kk * n + j) as i64);
                                let bv = s.arr_get(&bd, &bi)?;
                                let t = s.mul(&av, &bv)?;
                                acc = s.add(&acc, &t)?;
                            }
                            let oi = flat_idx(s, i, n, j).map_err(stage_only)?;
                            s.arr_set(&od, &oi, &acc)?;
                        }
                        Ok(())
                    })
                }
            }
        })?;
        self.record(Rec::Matmul { a: a.clone(), b: b.clone(), out: out.clone(), m, k, n });
        Ok(out)
    }

    /// Row-broadcast add: `[m,n] + [n] → [m,n]`.
    pub fn add_bias(&mut self, s: &mut Stager, x: &Tensor, b: &Tensor) -> Result<Tensor> {
        let (m, n) = x.rank2("add_bias input")?;
        if b.shape != [n] {
            return Err(MlError::Shape(format!(
                "add_bias bias shape {:?} must be [{n}]",
                b.shape
            )));
        }
        let mut out = tensor_zeros(s, &[m, n])?;
        out.requires_grad = self.recording && (x.requires_grad || b.requires_grad);
        let (xd, bd, od) = (x.data.clone(), b.data.clone(), out.data.clone());
        s.with_kernel_unlock(|s| -> tandem_ir::stage::Result<()> {
            let mc = s.const_i64(m as i64);
            s.staged_loop(&mc, |s, i| {
                for j in 0..n {
                    let xi = flat_idx(s, i, n, j).map_err(stage_only)?;
                    let xv = s.arr_get(&xd, &xi)?;
                    let bj = s.const_i64(j as i64);
                    let bv = s.arr_get(&bd, &bj)?;
                    let v = s.add(&xv, &bv)?;
                    s.arr_set(&od, &xi, &v)?;
                }
                Ok(())
            })
        })?;
        self.record(Rec::AddBias { x: x.clone(), b: b.clone(), out: out.clone(), m, n });
        Ok(out)
    }

    /// Elementwise max(x, 0). The derivative at exactly 0 is taken as 0.
    pub fn relu(&mut self, s: &mut Stager, x: &Tensor) -> Result<Tensor> {
        let mut out = tensor_zeros(s, &x.shape)?;
        out.requires_grad = self.recording && x.requires_grad;
        let (xd, od) = (x.data.clone(), out.data.clone());
        let numel = x.numel();
        s.with_kernel_unlock(|s| -> tandem_ir::stage::Result<()> {
            let nc = s.const_i64(numel as i64);
            s.staged_loop(&nc, |s, e| {
                let v = s.arr_get(&xd, e)?;
                let zero = s.const_f64(0.0);
                let pos = s.gt(&v, &zero)?;
                let r = s.select(&pos, &v, &zero)?;
                s.arr_set(&od, e, &r)?;
                Ok(())
            })
        })?;
        self.record(Rec::Relu { x: x.clone(), out: out.clone() });
        Ok(out)
    }

    /// Elementwise logistic function 1/(1+exp(−x)).
    pub fn sigmoid(&mut self, s: &mut Stager, x: &Tensor) -> Result<Tensor> {
        let mut out = tensor_zeros(s, &x.shape)?;
        out.requires_grad = self.recording && x.requires_grad;
        let (xd, od) = (x.data.clone(), out.data.clone());
        let numel = x.numel();
        s.with_kernel_unlock(|s| -> tandem_ir::stage::Result<()> {
            let nc = s.const_i64(numel as i64);
            s.staged_loop(&nc, |s, e| {
                let v = s.arr_get(&xd, e)?;
                let nv = s.neg(&v)?;
                let ev = s.exp(&nv)?;
                let one = s.const_f64(1.0);
                let den = s.add(&one, &ev)?;
                let r = s.div(&one, &den)?;
                s.arr_set(&od, e, &r)?;
                Ok(())
            })
        })?;
        self.record(Rec::Sigmoid { x: x.clone(), out: out.clone() });
        Ok(out)
    }

    /// Mean squared error over all elements, as a scalar tensor.
    pub fn mse_loss(&mut self, s: &mut Stager, pred: &Tensor, target: &Tensor) -> Result<Tensor> {
        self.mse_inner(s, pred, target, None)
    }

    /// Mean squared error over the first `valid` rows only (a staged count,
    /// `0 < valid ≤ rows`); later rows contribute nothing and receive zero
    /// gradient. The divisor is `valid × cols`. Used when a fixed-shape batch
    /// buffer holds a final short batch.
    pub fn mse_loss_masked(
        &mut self,
        s: &mut Stager,
        pred: &Tensor,
        target: &Tensor,
        valid: &StagedValue,
    ) -> Result<Tensor> {
        self.mse_inner(s, pred, target, Some(valid.clone()))
    }

    fn mse_inner(
        &mut self,
        s: &mut Stager,
        pred: &Tensor,
        target: &Tensor,
        valid: Option<StagedValue>,
    ) -> Result<Tensor> {
        if pred.shape != target.shape {
            return Err(MlError::Shape(format!(
                "mse shapes disagree: {:?} vs {:?}",
                pred.shape, target.shape
            )));
        }
        let (rows, cols) = pred.rows_cols();
        let mut out = tensor_zeros(s, &[])?;
        out.requires_grad = self.recording && pred.requires_grad;
        let (pd, td, od) = (pred.data.clone(), target.data.clone(), out.data.clone());
        let valid_c = valid.clone();
        let denom = s.with_kernel_unlock(|s| -> tandem_ir::stage::Result<StagedValue> {
            let zero = s.const_f64(0.0);
            let sum = s.var_new(&zero)?;
            let rc = s.const_i64(rows as i64);
            s.staged_loop(&rc, |s, i| {
                for j in 0..cols {
                    let e = flat_idx(s, i, cols, j).map_err(stage_only)?;
                    let pv = s.arr_get(&pd, &e)?;
                    let tv = s.arr_get(&td, &e)?;
                    let d = s.sub(&pv, &tv)?;
                    let sq = s.mul(&d, &d)?;
                    let contrib = match &valid_c {
                        None => sq,
                        Some(v) => {
                            let live = s.lt(i, v)?;
                            let z = s.const_f64(0.0);
                            s.select(&live, &sq, &z)?
                        }
                    };
                    let cur = s.var_get(&sum)?;
                    let neu = s.add(&cur, &contrib)?;
                    s.var_set(&sum, &neu)?;
                }
                Ok(())
            })?;
            let denom = match &valid_c {
                None => s.const_f64((rows * cols) as f64),
                Some(v) => {
                    let vf = s.i2f(v)?;
                    let cf = s.const_f64(cols as f64);
                    s.mul(&vf, &cf)?
                }
            };
            let total = s.var_get(&sum)?;
            let loss = s.div(&total, &denom)?;
            let zi = s.const_i64(0);
            s.arr_set(&od, &zi, &loss)?;
            Ok(denom)
        })?;
        self.record(Rec::Mse {
            pred: pred.clone(),
            target: target.clone(),
            valid,
            denom,
            rows,
            cols,
            out: out.clone(),
        });
        Ok(out)
    }

    /// Replay the tape in reverse, staging each op's gradient rule, then
    /// clear the tape and unlock staged control flow. Gradients accumulate
    /// (`+=`) into the registered parameters' buffers; inputs that do not
    /// require gradients are skipped.
    pub fn backward(&mut self, s: &mut Stager, loss: &Tensor) -> Result<()> {
        if !self.recording || self.tape.is_empty() {
            return Err(MlError::Tape(
                "backward needs a recorded forward pass; the tape is empty".into(),
            ));
        }
        if loss.numel() != 1 {
            return Err(MlError::Shape(format!(
                "backward needs a scalar loss, got shape {:?}",
                loss.shape
            )));
        }
        let mut grads: HashMap<NodeId, Tensor> = HashMap::new();
        for (node, g) in &self.params {
            grads.insert(*node, g.clone());
        }
        let seed = tensor_from_literals(s, &loss.shape, &[1.0])?;
        grads.entry(loss.data.node).or_insert(seed);

        let tape: Vec<Rec> = self.tape.drain(..).collect();
        for rec in tape.iter().rev() {
            self.stage_rule(s, &mut grads, rec)?;
        }
        self.recording = false;
        s.unlock_control_flow();
        Ok(())
    }

    /// Gradient buffer for `t`, creating a zeroed one on first use.
    fn grad_of(s: &mut Stager, grads: &mut HashMap<NodeId, Tensor>, t: &Tensor) -> Result<Tensor> {
        if let Some(g) = grads.get(&t.data.node) {
            return Ok(g.clone());
        }
        let g = tensor_zeros(s, &t.shape)?;
        grads.insert(t.data.node, g.clone());
        Ok(g)
    }

    fn stage_rule(
        &mut self,
        s: &mut Stager,
        grads: &mut HashMap<NodeId, Tensor>,
        rec: &Rec,
    ) -> Result<()> {
        match rec {
            Rec::Matmul { a, b, out, m, k, n } => {
                let g = Self::grad_of(s, grads, out)?;
                let (m, k, n) = (*m, *k, *n);
                if a.requires_grad {
                    let da = Self::grad_of(s, grads, a)?;
                    let (gd, bd, dad) = (g.data.clone(), b.data.clone(), da.data.clone());
                    s.with_kernel_unlock(|s| -> tandem_ir::stage::Result<()> {
                        let mc = s.const_i64(m as i64);
                        s.staged_loop(&mc, |s, i| {
                            for kk in 0..k {
                                let mut acc = s.const_f64(0.0);
                                for j in 0..n {
                                    let gi = flat_idx(s, i, n, j).map_err(stage_only)?;
                                    let gv = s.arr_get(&gd, &gi)?;
                                    let bi = s.const_i64((kk * n + j) as i64);
                                    let bv = s.arr_get(&bd, &bi)?;
                                    let t = s.mul(&gv, &bv)?;
                                    acc = s.add(&acc, &t)?;
                                }
                                let ai = flat_idx(s, i, k, kk).map_err(stage_only)?;
                                let old = s.arr_get(&dad, &ai)?;
                                let neu = s.add(&old, &acc)?;
                                s.arr_set(&dad, &ai, &neu)?;
                            }
                            Ok(())
                        })
                    })?;
                }
                if b.requires_grad {
                    let db = Self::grad_of(s, grads, b)?;
                    let (gd, ad, dbd) = (g.data.clone(), a.data.clone(), db.data.clone());
                    s.with_kernel_unlock(|s| -> tandem_ir::stage::Result<()> {
                        let mc = s.const_i64(m as i64);
                        s.staged_loop(&mc, |s, i| {
                            for kk in 0..k {
                                let ai = flat_idx(s, i, k, kk).map_err(stage_only)?;
                                let av = s.arr_get(&ad, &ai)?;
                                for j in 0..n {
                                    let gi = flat_idx(s, i, n, j).map_err(stage_only)?;
                                    let gv = s.arr_get(&gd, &gi)?;
                                    let t = s.mul(&av, &gv)?;
                                    let bi = s.const_i64((kk * n + j) as i64);
                                    accum_at(s, &dbd, &bi, &t).map_err(stage_only)?;
                                }
                            }
                            Ok(())
                        })
                    })?;
                }
            }
            Rec::AddBias { x, b, out, m, n } => {
                let g = Self::grad_of(s, grads, out)?;
                let (m, n) = (*m, *n);
                if x.requires_grad {
                    let dx = Self::grad_of(s, grads, x)?;
                    let (gd, dxd) = (g.data.clone(), dx.data.clone());
                    s.with_kernel_unlock(|s| -> tandem_ir::stage::Result<()> {
                        let mc = s.const_i64(m as i64);
                        s.staged_loop(&mc, |s, i| {
                            for j in 0..n {
                                let e = flat_idx(s, i, n, j).map_err(stage_only)?;
                                let gv = s.arr_get(&gd, &e)?;
                                accum_at(s, &dxd, &e, &gv).map_err(stage_only)?;
                            }
                            Ok(())
                        })
                    })?;
                }
                if b.requires_grad {
                    let db = Self::grad_of(s, grads, b)?;
                    let (gd, dbd) = (g.data.clone(), db.data.clone());
                    s.with_kernel_unlock(|s| -> tandem_ir::stage::Result<()> {
                        let mc = s.const_i64(m as i64);
                        s.staged_loop(&mc, |s, i| {
                            for j in 0..n {
                                let e = flat_idx(s, i, n, j).map_err(stage_only)?;
                                let gv = s.arr_get(&gd, &e)?;
                                let bj = s.const_i64(j as i64);
                                accum_at(s, &dbd, &bj, &gv).map_err(stage_only)?;
                            }
                            Ok(())
                        })
                    })?;
                }
            }
            Rec::Relu { x, out } => {
                if !x.requires_grad {
                    return Ok(());
                }
                let g = Self::grad_of(s, grads, out)?;
                let dx = Self::grad_of(s, grads, x)?;
                let (xd, gd, dxd) = (x.data.clone(), g.data.clone(), dx.data.clone());
                let numel = x.numel();
                s.with_kernel_unlock(|s| -> tandem_ir::stage::Result<()> {
                    let nc = s.const_i64(numel as i64);
                    s.staged_loop(&nc, |s, e| {
                        let xv = s.arr_get(&xd, e)?;
                        let gv = s.arr_get(&gd, e)?;
                        let zero = s.const_f64(0.0);
                        let pos = s.gt(&xv, &zero)?;
                        let dv = s.select(&pos, &gv, &zero)?;
                        accum_at(s, &dxd, e, &dv).map_err(stage_only)?;
                        Ok(())
                    })
                })?;
            }
            Rec::Sigmoid { x, out } => {
                if !x.requires_grad {
                    return Ok(());
                }
                let g = Self::grad_of(s, grads, out)?;
                let dx = Self::grad_of(s, grads, x)?;
                let (od, gd, dxd) = (out.data.clone(), g.data.clone(), dx.data.clone());
                let numel = x.numel();
                s.with_kernel_unlock(|s| -> tandem_ir::stage::Result<()> {
                    let nc = s.const_i64(numel as i64);
                    s.staged_loop(&nc, |s, e| {
                        let sv = s.arr_get(&od, e)?;
                        let gv = s.arr_get(&gd, e)?;
                        let t1 = s.mul(&gv, &sv)?;
                        let one = s.const_f64(1.0);
                        let t2 = s.sub(&one, &sv)?;
                        let dv = s.mul(&t1, &t2)?;
                        accum_at(s, &dxd, e, &dv).map_err(stage_only)?;
                        Ok(())
                    })
                })?;
            }
            Rec::Mse { pred, target, valid, denom, rows, cols, out } => {
                let g = Self::grad_of(s, grads, out)?;
                let (rows, cols) = (*rows, *cols);
                let mut targets = Vec::new();
                if pred.requires_grad {
                    targets.push((pred.clone(), false));
                }
                if target.requires_grad {
                    targets.push((target.clone(), true));
                }
                for (dst, negate) in targets {
                    let dd = Self::grad_of(s, grads, &dst)?;
                    let (pd, td, gd, ddd) =
                        (pred.data.clone(), target.data.clone(), g.data.clone(), dd.data.clone());
                    let (valid_c, denom_c) = (valid.clone(), denom.clone());
                    s.with_kernel_unlock(|s| -> tandem_ir::stage::Result<()> {
                        let zi = s.const_i64(0);
                        let g0 = s.arr_get(&gd, &zi)?;
                        let rc = s.const_i64(rows as i64);
                        s.staged_loop(&rc, |s, i| {
                            for j in 0..cols {
                                let e = flat_idx(s, i, cols, j).map_err(stage_only)?;
                                let pv = s.arr_get(&pd, &e)?;
                                let tv = s.arr_get(&td, &e)?;
                                let d = s.sub(&pv, &tv)?;
                                let two = s.const_f64(2.0);
                                let t1 = s.mul(&two, &d)?;
                                let t2 = s.div(&t1, &denom_c)?;
                                let mut dv = s.mul(&g0, &t2)?;
                                if negate {
                                    dv = s.neg(&dv)?;
                                }
                                let dv = match &valid_c {
                                    None => dv,
                                    Some(v) => {
                                        let live = s.lt(i, v)?;
                                        let z = s.const_f64(0.0);
                                        s.select(&live, &dv, &z)?
                                    }
                                };
                                accum_at(s, &ddd, &e, &dv).map_err(stage_only)?;
                            }
                            Ok(())
                        })
                    })?;
                }
            }
        }
        Ok(())
    }
}

/// Unwrap an error from the staging layer inside a staged closure: helpers in
/// this module only fail with staging errors there.
pub(crate) fn stage_only(e: MlError) -> tandem_ir::StageError {
    match e {
        MlError::Stage(se) => se,
        other => tandem_ir::StageError::Internal(format!("unexpected non-staging error: {other}")),
    }
}

/// One gradient-descent update: `value ← value − lr·grad`, then zero grads.
pub fn sgd_step(s: &mut Stager, params: &[&Parameter], lr: f64) -> Result<()> {
    for p in params {
        let numel = p.value.numel();
        let (vd, gd) = (p.value.data.clone(), p.grad.data.clone());
        s.with_kernel_unlock(|s| -> tandem_ir::stage::Result<()> {
            let nc = s.const_i64(numel as i64);
            let lrc = s.const_f64(lr);
            s.staged_loop(&nc, |s, e| {
                let gv = s.arr_get(&gd, e)?;
                let step = s.mul(&lrc, &gv)?;
                let wv = s.arr_get(&vd, e)?;
                let neu = s.sub(&wv, &step)?;
                s.arr_set(&vd, e, &neu)?;
                let z = s.const_f64(0.0);
                s.arr_set(&gd, e, &z)?;
                Ok(())
            })
        })?;
    }
    Ok(())
}

/// The six parameters of a three-layer perceptron plus its output head.
pub struct MlpParams {
    /// `(weights, bias)` per layer, length 3.
    pub layers: Vec<(Parameter, Parameter)>,
    pub head: Head,
}

impl MlpParams {
    /// Stage parameters initialized from a staging-time model description.
    pub fn from_model(
        s: &mut Stager,
        ctx: &mut TensorCtx,
        model: &crate::model::MlpModel,
        prefix: &str,
    ) -> Result<MlpParams> {
        let head = match model.kind {
            crate::model::ModelKind::Mlp3(h) => h,
            crate::model::ModelKind::DotProduct => {
                return Err(MlError::Model("training requires a perceptron model".into()))
            }
        };
        let mut layers = Vec::with_capacity(3);
        for l in 0..3 {
            let (ind, outd) = (model.dims[l], model.dims[l + 1]);
            let w = Parameter::new(
                s,
                ctx,
                &format!("{prefix}w{l}"),
                &[ind, outd],
                &model.weights[l],
            )?;
            let b = Parameter::new(s, ctx, &format!("{prefix}b{l}"), &[outd], &model.biases[l])?;
            layers.push((w, b));
        }
        Ok(MlpParams { layers, head })
    }

    /// All parameters in update order: w0 b0 w1 b1 w2 b2.
    pub fn param_list(&self) -> Vec<&Parameter> {
        self.layers.iter().flat_map(|(w, b)| [w, b]).collect()
    }
}

/// Forward pass of the three-layer perceptron: (matmul → bias → relu) twice,
/// then matmul → bias and either a raw or sigmoid output head.
pub fn mlp3_forward(
    s: &mut Stager,
    ctx: &mut TensorCtx,
    x: &Tensor,
    params: &MlpParams,
) -> Result<Tensor> {
    if params.layers.len() != 3 {
        return Err(MlError::Shape("expected exactly 3 layers".into()));
    }
    let mut h = x.clone();
    for (l, (w, b)) in params.layers.iter().enumerate() {
        let z = ctx.matmul(s, &h, &w.value)?;
        let z = ctx.add_bias(s, &z, &b.value)?;
        h = if l < 2 {
            ctx.relu(s, &z)?
        } else {
            match params.head {
                Head::Regress => z,
                Head::Classify => ctx.sigmoid(s, &z)?,
            }
        };
    }
    Ok(h)
}

/// Stage prints of a tensor's contents: one output row per tensor row
/// (rank-2), a single row for rank-1 and scalars. Every element prints with
/// 17 significant digits.
pub fn print_tensor(s: &mut Stager, t: &Tensor) -> Result<()> {
    let (rows, cols) = t.rows_cols();
    for i in 0..rows {
        let mut vals = Vec::with_capacity(cols);
        for j in 0..cols {
            let e = s.const_i64((i * cols + j) as i64);
            vals.push(s.arr_get(&t.data, &e)?);
        }
        s.print_row(&vals, vec![tandem_ir::PrintFmt::F64; cols])?;
    }
    Ok(())
}
