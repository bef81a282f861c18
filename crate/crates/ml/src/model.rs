//! Current-stage model descriptions: layer dimensions and weight values that
//! are known while the program is being staged.
//!
//! A [`MlpModel`] plays two roles. It is the source of constant weights when a
//! model is staged as a user-defined function over relational rows, and it is
//! a direct evaluator (`eval_scalar`) used as an independent check against the
//! staged code. The direct evaluator performs the same floating-point
//! operations in the same order as the staged loops, so the two must agree
//! bit-for-bit.

use std::fmt;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tandem_ir::numeric::{fmt_g17, kexp};

use crate::error::{MlError, Result};

/// Output head of a multilayer perceptron.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Head {
    /// Raw affine output.
    Regress,
    /// Sigmoid over the affine output (probability in (0,1)).
    Classify,
}

/// The family of models a pipeline can register as row-level functions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    /// Three fully connected layers with relu between them.
    Mlp3(Head),
    /// A plain inner product of the arguments with a weight vector.
    DotProduct,
}

impl ModelKind {
    /// Parse the external spelling used by pipeline spec files.
    pub fn parse(name: &str) -> Result<ModelKind> {
        match name {
            "mlp3-regress" => Ok(ModelKind::Mlp3(Head::Regress)),
            "mlp3-classify" => Ok(ModelKind::Mlp3(Head::Classify)),
            "dot-product" => Ok(ModelKind::DotProduct),
            other => Err(MlError::Model(format!("unknown model kind `{other}`"))),
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ModelKind::Mlp3(Head::Regress) => "mlp3-regress",
            ModelKind::Mlp3(Head::Classify) => "mlp3-classify",
            ModelKind::DotProduct => "dot-product",
        };
        f.write_str(s)
    }
}

/// A model with weights known at staging time.
///
/// For `Mlp3`, `dims` holds `[in, h1, h2, out]`, `weights[l]` is the layer-`l`
/// matrix in row-major `[dims[l], dims[l+1]]` layout and `biases[l]` has
/// length `dims[l+1]`. For `DotProduct`, `dims` is `[in]`, there is a single
/// weight vector of that length and no bias.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    pub kind: ModelKind,
    pub dims: Vec<usize>,
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

impl MlpModel {
    /// Build a three-layer perceptron with deterministic seeded weights:
    /// uniform in ±sqrt(6/(fan_in+fan_out)) per layer, biases zero. Draws
    /// happen layer by layer, each matrix in row-major order, so a given seed
    /// produces the same model on every platform.
    pub fn mlp3(dims: [usize; 4], head: Head, seed: u64) -> Result<MlpModel> {
        if dims.contains(&0) {
            return Err(MlError::Model("layer dims must be nonzero".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut weights = Vec::with_capacity(3);
        for l in 0..3 {
            let (fan_in, fan_out) = (dims[l], dims[l + 1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let w = (0..fan_in * fan_out)
                .map(|_| (rng.gen::<f64>() * 2.0 - 1.0) * limit)
                .collect();
            weights.push(w);
        }
        let biases = (0..3).map(|l| vec![0.0; dims[l + 1]]).collect();
        Ok(MlpModel { kind: ModelKind::Mlp3(head), dims: dims.to_vec(), weights, biases })
    }

    /// Build a dot-product scorer with weights uniform in ±1.
    pub fn dot_product(dim: usize, seed: u64) -> Result<MlpModel> {
        if dim == 0 {
            return Err(MlError::Model("dot-product arity must be nonzero".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = (0..dim).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect();
        Ok(MlpModel { kind: ModelKind::DotProduct, dims: vec![dim], weights: vec![w], biases: vec![] })
    }

    /// Number of scalar arguments the model consumes per row.
    pub fn arity(&self) -> usize {
        self.dims[0]
    }

    /// Validate internal shape consistency; called by the loaders.
    fn validate(&self) -> Result<()> {
        match self.kind {
            ModelKind::Mlp3(_) => {
                if self.dims.len() != 4 || self.weights.len() != 3 || self.biases.len() != 3 {
                    return Err(MlError::Model("mlp3 needs 4 dims, 3 weight matrices, 3 biases".into()));
                }
                for l in 0..3 {
                    if self.weights[l].len() != self.dims[l] * self.dims[l + 1] {
                        return Err(MlError::Model(format!("layer {l} weight size mismatch")));
                    }
                    if self.biases[l].len() != self.dims[l + 1] {
                        return Err(MlError::Model(format!("layer {l} bias size mismatch")));
                    }
                }
            }
            ModelKind::DotProduct => {
                if self.dims.len() != 1 || self.weights.len() != 1 || !self.biases.is_empty() {
                    return Err(MlError::Model("dot-product needs 1 dim and 1 weight vector".into()));
                }
                if self.weights[0].len() != self.dims[0] {
                    return Err(MlError::Model("dot-product weight size mismatch".into()));
                }
            }
        }
        Ok(())
    }

    /// Evaluate the model on one row of arguments, producing its single
    /// output. The operation order here is the contract: accumulate each
    /// output unit as `((0 + x0*w0) + x1*w1) + …`, add the bias, apply the
    /// activation. Staged forms replicate this order exactly.
    pub fn eval_scalar(&self, args: &[f64]) -> Result<f64> {
        if args.len() != self.arity() {
            return Err(MlError::Model(format!(
                "model expects {} arguments, got {}",
                self.arity(),
                args.len()
            )));
        }
        match self.kind {
            ModelKind::DotProduct => {
                let w = &self.weights[0];
                let mut acc = 0.0f64;
                for (x, wv) in args.iter().zip(w) {
                    acc += x * wv;
                }
                Ok(acc)
            }
            ModelKind::Mlp3(head) => {
                if self.dims[3] != 1 {
                    return Err(MlError::Model("row-level evaluation needs output dim 1".into()));
                }
                let mut cur = args.to_vec();
                for l in 0..3 {
                    let outd = self.dims[l + 1];
                    let w = &self.weights[l];
                    let b = &self.biases[l];
                    let mut next = Vec::with_capacity(outd);
                    for j in 0..outd {
                        let mut acc = 0.0f64;
                        for (kk, x) in cur.iter().enumerate() {
                            acc += x * w[kk * outd + j];
                        }
                        let y = acc + b[j];
                        let y = if l < 2 {
                            if y > 0.0 {
                                y
                            } else {
                                0.0
                            }
                        } else {
                            match head {
                                Head::Regress => y,
                                Head::Classify => 1.0 / (1.0 + kexp(-y)),
                            }
                        };
                        next.push(y);
                    }
                    cur = next;
                }
                Ok(cur[0])
            }
        }
    }

    /// Named parameters in checkpoint order: `w0 b0 w1 b1 …` for perceptrons,
    /// `w0` alone for dot products.
    pub fn named_params(&self) -> Vec<(String, Vec<usize>, &[f64])> {
        match self.kind {
            ModelKind::DotProduct => {
                vec![("w0".into(), vec![self.dims[0]], self.weights[0].as_slice())]
            }
            ModelKind::Mlp3(_) => {
                let mut out = Vec::with_capacity(6);
                for l in 0..3 {
                    out.push((
                        format!("w{l}"),
                        vec![self.dims[l], self.dims[l + 1]],
                        self.weights[l].as_slice(),
                    ));
                    out.push((format!("b{l}"), vec![self.dims[l + 1]], self.biases[l].as_slice()));
                }
                out
            }
        }
    }

    /// Write the parameters as text, one line per parameter:
    /// `name shape values…` where shape is dims joined by `x` (e.g. `4x16`)
    /// and every value is printed with 17 significant digits so the re-read
    /// values are bit-identical.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        for (name, shape, vals) in self.named_params() {
            out.push_str(&name);
            out.push(' ');
            let dims: Vec<String> = shape.iter().map(|d| d.to_string()).collect();
            out.push_str(&dims.join("x"));
            for v in vals {
                out.push(' ');
                out.push_str(&fmt_g17(*v));
            }
            out.push('\n');
        }
        fs::write(path, out).map_err(|e| MlError::Io(format!("{}: {e}", path.display())))
    }

    /// Read a checkpoint written by [`save`](Self::save). The caller names the
    /// architecture; layer dimensions are recovered from the stored shapes.
    pub fn load(path: &Path, kind: ModelKind) -> Result<MlpModel> {
        let text =
            fs::read_to_string(path).map_err(|e| MlError::Io(format!("{}: {e}", path.display())))?;
        let mut params: Vec<(String, Vec<usize>, Vec<f64>)> = Vec::new();
        for (ln, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let mut it = line.split_ascii_whitespace();
            let name = it
                .next()
                .ok_or_else(|| MlError::Model(format!("checkpoint line {}: empty", ln + 1)))?
                .to_string();
            let shape_tok = it
                .next()
                .ok_or_else(|| MlError::Model(format!("checkpoint line {}: missing shape", ln + 1)))?;
            let shape: Vec<usize> = shape_tok
                .split('x')
                .map(|d| {
                    d.parse::<usize>()
                        .map_err(|_| MlError::Model(format!("checkpoint line {}: bad shape `{shape_tok}`", ln + 1)))
                })
                .collect::<Result<_>>()?;
            let vals: Vec<f64> = it
                .map(|t| {
                    t.parse::<f64>()
                        .map_err(|_| MlError::Model(format!("checkpoint line {}: bad value `{t}`", ln + 1)))
                })
                .collect::<Result<_>>()?;
            let numel: usize = shape.iter().product();
            if vals.len() != numel {
                return Err(MlError::Model(format!(
                    "checkpoint line {}: shape {shape_tok} expects {numel} values, got {}",
                    ln + 1,
                    vals.len()
                )));
            }
            params.push((name, shape, vals));
        }
        let get = |want: &str| -> Result<&(String, Vec<usize>, Vec<f64>)> {
            params
                .iter()
                .find(|(n, _, _)| n == want)
                .ok_or_else(|| MlError::Model(format!("checkpoint missing parameter `{want}`")))
        };
        let model = match kind {
            ModelKind::DotProduct => {
                let (_, shape, vals) = get("w0")?;
                if shape.len() != 1 {
                    return Err(MlError::Model("dot-product w0 must be rank 1".into()));
                }
                MlpModel {
                    kind,
                    dims: vec![shape[0]],
                    weights: vec![vals.clone()],
                    biases: vec![],
                }
            }
            ModelKind::Mlp3(_) => {
                let mut dims = Vec::new();
                let mut weights = Vec::new();
                let mut biases = Vec::new();
                for l in 0..3 {
                    let (_, wshape, wvals) = get(&format!("w{l}"))?;
                    if wshape.len() != 2 {
                        return Err(MlError::Model(format!("w{l} must be rank 2")));
                    }
                    if l == 0 {
                        dims.push(wshape[0]);
                    } else if dims[l] != wshape[0] {
                        return Err(MlError::Model(format!("w{l} rows disagree with previous layer")));
                    }
                    dims.push(wshape[1]);
                    weights.push(wvals.clone());
                    let (_, bshape, bvals) = get(&format!("b{l}"))?;
                    if bshape.len() != 1 || bshape[0] != wshape[1] {
                        return Err(MlError::Model(format!("b{l} shape disagrees with w{l}")));
                    }
                    biases.push(bvals.clone());
                }
                MlpModel { kind, dims, weights, biases }
            }
        };
        model.validate()?;
        Ok(model)
    }
}
