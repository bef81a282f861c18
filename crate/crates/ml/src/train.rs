//! Staging a full minibatch gradient-descent loop.
//!
//! The dataset arrives as staged flat arrays with a runtime row count (it is
//! typically materialized from a relational pipeline), while batch size,
//! epoch count, and layer shapes are fixed at staging time. Each epoch is a
//! staged loop over batches; every batch gathers its rows into fixed-shape
//! scratch tensors, runs the differentiated forward/backward pass, and
//! applies one gradient-descent update. The final short batch reuses the same
//! staged code: only its first `valid` rows are gathered, and the masked loss
//! ignores the stale remainder of the scratch buffers, so those rows get zero
//! gradient.
//!
//! Per epoch, one output row `epoch_index, loss_sum` is printed, where
//! `loss_sum` is the sum of the per-batch mean losses in batch order.

use tandem_ir::{PrintFmt, StagedValue, Stager};

use crate::error::{MlError, Result};
use crate::model::MlpModel;
use crate::tensor::{
    mlp3_forward, sgd_step, stage_only, tensor_zeros, MlpParams, TensorCtx,
};

/// Staging-time training configuration.
#[derive(Debug, Clone)]
pub struct TrainCfg {
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
}

/// Stage the training loop. `xs` is a flat row-major `[rows, d]` float array,
/// `ys` holds one target per row, and `rows` is the runtime row count. The
/// model supplies the initial weights; the returned parameters hold the
/// staged arrays that end up trained.
pub fn stage_training(
    s: &mut Stager,
    ctx: &mut TensorCtx,
    model: &MlpModel,
    xs: &StagedValue,
    ys: &StagedValue,
    rows: &StagedValue,
    cfg: &TrainCfg,
) -> Result<MlpParams> {
    if cfg.batch == 0 || cfg.epochs == 0 {
        return Err(MlError::Model("batch size and epoch count must be nonzero".into()));
    }
    if model.dims.len() != 4 || model.dims[3] != 1 {
        return Err(MlError::Model("training needs a perceptron with output dim 1".into()));
    }
    let d = model.dims[0];
    let b = cfg.batch;
    let params = MlpParams::from_model(s, ctx, model, "")?;

    let xb = tensor_zeros(s, &[b, d])?;
    let yb = tensor_zeros(s, &[b, 1])?;

    let bc = s.const_i64(b as i64);
    let bm1 = s.const_i64(b as i64 - 1);
    let t1 = s.add(rows, &bm1)?;
    let n_batches = s.div(&t1, &bc)?;

    let epochs = s.const_i64(cfg.epochs as i64);
    let (xsd, ysd) = (xs.clone(), ys.clone());
    let rows_v = rows.clone();
    s.staged_loop(&epochs, |s, epoch| {
        let zero = s.const_f64(0.0);
        let loss_sum = s.var_new(&zero)?;
        s.staged_loop(&n_batches, |s, bi| {
            let start = s.mul(bi, &bc)?;
            let rem = s.sub(&rows_v, &start)?;
            let short = s.lt(&rem, &bc)?;
            let valid = s.select(&short, &rem, &bc)?;

            // Gather this batch's rows into the fixed-shape scratch tensors.
            let dc = s.const_i64(d as i64);
            s.staged_loop(&valid, |s, r| {
                let gr = s.add(&start, r)?;
                let src_base = s.mul(&gr, &dc)?;
                let dst_base = s.mul(r, &dc)?;
                for c in 0..d {
                    let cc = s.const_i64(c as i64);
                    let si = s.add(&src_base, &cc)?;
                    let v = s.arr_get(&xsd, &si)?;
                    let di = s.add(&dst_base, &cc)?;
                    s.arr_set(&xb.data, &di, &v)?;
                }
                let yv = s.arr_get(&ysd, &gr)?;
                s.arr_set(&yb.data, r, &yv)?;
                Ok(())
            })?;

            ctx.begin_tape(s).map_err(stage_only)?;
            let pred = mlp3_forward(s, ctx, &xb, &params).map_err(stage_only)?;
            let loss = ctx.mse_loss_masked(s, &pred, &yb, &valid).map_err(stage_only)?;
            ctx.backward(s, &loss).map_err(stage_only)?;
            sgd_step(s, &params.param_list(), cfg.lr).map_err(stage_only)?;

            let zi = s.const_i64(0);
            let lv = s.arr_get(&loss.data, &zi)?;
            let cur = s.var_get(&loss_sum)?;
            let neu = s.add(&cur, &lv)?;
            s.var_set(&loss_sum, &neu)?;
            Ok(())
        })?;
        let total = s.var_get(&loss_sum)?;
        s.print_row(&[epoch.clone(), total], vec![PrintFmt::I64, PrintFmt::F64])?;
        Ok(())
    })?;
    Ok(params)
}
