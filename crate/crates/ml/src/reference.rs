//! Direct (unstaged) evaluation of the tensor operations over plain slices.
//!
//! Every function here performs the same floating-point operations in the
//! same order as the corresponding staged form, so results agree bit-for-bit
//! with a staged program executed by any backend. Tests use these to check
//! staged forward passes exactly and as the forward evaluator inside
//! finite-difference gradient checks.

use tandem_ir::numeric::kexp;

use crate::model::Head;

/// `[m,k]·[k,n]`, accumulating over the shared dimension in ascending order.
pub fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            let mut acc = 0.0f64;
            for kk in 0..k {
                acc += a[i * k + kk] * b[kk * n + j];
            }
            out[i * n + j] = acc;
        }
    }
    out
}

/// Row-broadcast add of a length-`n` bias over an `[m,n]` matrix.
pub fn add_bias(x: &[f64], b: &[f64], m: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            out[i * n + j] = x[i * n + j] + b[j];
        }
    }
    out
}

/// Elementwise max(x, 0).
pub fn relu(x: &[f64]) -> Vec<f64> {
    x.iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect()
}

/// Elementwise logistic function, using the same portable exp as the staged
/// backends.
pub fn sigmoid(x: &[f64]) -> Vec<f64> {
    x.iter().map(|&v| 1.0 / (1.0 + kexp(-v))).collect()
}

/// Mean squared error over all elements, accumulated in row-major order.
pub fn mse(pred: &[f64], target: &[f64]) -> f64 {
    let mut sum = 0.0f64;
    for (p, t) in pred.iter().zip(target) {
        let d = p - t;
        sum += d * d;
    }
    sum / (pred.len() as f64)
}

/// Mean squared error over the first `valid` rows of `[rows, cols]` data;
/// later rows contribute zero and the divisor is `valid · cols`.
pub fn mse_masked(pred: &[f64], target: &[f64], valid: usize, rows: usize, cols: usize) -> f64 {
    let mut sum = 0.0f64;
    for i in 0..rows {
        for j in 0..cols {
            let e = i * cols + j;
            let d = pred[e] - target[e];
            let sq = d * d;
            sum += if i < valid { sq } else { 0.0 };
        }
    }
    sum / (valid as f64 * cols as f64)
}

/// Forward pass of the three-layer perceptron over a `[batch, dims[0]]`
/// input, mirroring the staged layer order: matmul → bias → relu twice, then
/// matmul → bias and the output head.
pub fn mlp3_forward(
    dims: &[usize; 4],
    weights: &[Vec<f64>],
    biases: &[Vec<f64>],
    head: Head,
    x: &[f64],
    batch: usize,
) -> Vec<f64> {
    let mut h = x.to_vec();
    for l in 0..3 {
        let z = matmul(&h, &weights[l], batch, dims[l], dims[l + 1]);
        let z = add_bias(&z, &biases[l], batch, dims[l + 1]);
        h = if l < 2 {
            relu(&z)
        } else {
            match head {
                Head::Regress => z,
                Head::Classify => sigmoid(&z),
            }
        };
    }
    h
}

/// Composed loss used by gradient checks: forward pass plus masked mean
/// squared error against per-row targets (output dim 1).
#[allow(clippy::too_many_arguments)]
pub fn mlp3_mse(
    dims: &[usize; 4],
    weights: &[Vec<f64>],
    biases: &[Vec<f64>],
    head: Head,
    x: &[f64],
    y: &[f64],
    batch: usize,
    valid: usize,
) -> f64 {
    let pred = mlp3_forward(dims, weights, biases, head, x, batch);
    mse_masked(&pred, y, valid, batch, 1)
}
