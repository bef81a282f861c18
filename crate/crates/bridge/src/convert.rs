//! Crossings between relational buffers and tensor values.
//!
//! A materialized pipeline holds columnar storage; tensor code wants flat
//! row-major arrays. When a single float64 column is requested, the "tensor"
//! is simply the column array itself — the conversion stages nothing at all.
//! Multiple columns can't alias columnar storage, so they are gathered with
//! one staged loop (and the staging context records a warning, since the copy
//! is what the single-column fast path exists to avoid).

use tandem_ir::{ScalarTy, StagedValue, Stager};
use tandem_rel::{ColumnBuffer, FieldTy};

use crate::error::{BridgeError, Result};

/// A tensor whose row count is a runtime value: flat row-major data plus a
/// staged row count and a staging-time column count.
#[derive(Debug, Clone)]
pub struct DynTensor {
    pub data: StagedValue,
    pub rows: StagedValue,
    pub cols: usize,
    /// True when `data` is the buffer's own storage (no copy was staged).
    pub aliased: bool,
}

/// View the named float64 columns of a buffer as a `[rows, |fields|]` tensor.
/// One column aliases the buffer storage; several are gathered row-major with
/// a single staged loop and a recorded warning.
pub fn buffer_to_tensor(s: &mut Stager, buf: &ColumnBuffer, fields: &[&str]) -> Result<DynTensor> {
    if fields.is_empty() {
        return Err(BridgeError::Config("buffer_to_tensor needs at least one field".into()));
    }
    let mut cols = Vec::with_capacity(fields.len());
    for name in fields {
        let idx = buf
            .fields
            .iter()
            .position(|f| f.name == *name)
            .ok_or_else(|| BridgeError::Config(format!("buffer has no field \"{name}\"")))?;
        if buf.fields[idx].ty != FieldTy::F64 {
            return Err(BridgeError::Config(format!(
                "field \"{name}\" is {}, tensors need float64",
                buf.fields[idx].ty
            )));
        }
        cols.push(buf.cols[idx].clone());
    }
    if cols.len() == 1 {
        return Ok(DynTensor {
            data: cols.pop().unwrap(),
            rows: buf.rows.clone(),
            cols: 1,
            aliased: true,
        });
    }
    let k = cols.len();
    s.warn(format!(
        "buffer_to_tensor: gathering {k} columns into a row-major copy; a single column would alias"
    ));
    let kc = s.const_i64(k as i64);
    let len = s.mul(&buf.rows, &kc)?;
    let data = s.arr_new(&len, ScalarTy::F64)?;
    let rows = buf.rows.clone();
    tandem_rel::loop_rel(s, &rows, |s, i| {
        let base = s.mul(i, &kc)?;
        for (j, col) in cols.iter().enumerate() {
            let v = s.arr_get(col, i)?;
            let jc = s.const_i64(j as i64);
            let at = s.add(&base, &jc)?;
            s.arr_set(&data, &at, &v)?;
        }
        Ok(())
    })
    .map_err(BridgeError::Rel)?;
    Ok(DynTensor { data, rows: buf.rows.clone(), cols: k, aliased: false })
}

/// Read a single-element tensor back as a staged scalar: shape `[1]` or
/// `[1,1]`. No copy and no allocation — one staged element read.
pub fn tensor_to_value(s: &mut Stager, t: &tandem_ml::Tensor) -> Result<StagedValue> {
    if t.shape.len() > 2 {
        return Err(BridgeError::Config(format!(
            "tensor of rank {} cannot become a record value",
            t.shape.len()
        )));
    }
    if t.numel() != 1 {
        return Err(BridgeError::Config(format!(
            "tensor of shape {:?} holds {} values; a record field takes exactly one",
            t.shape,
            t.numel()
        )));
    }
    let zero = s.const_i64(0);
    Ok(s.arr_get(&t.data, &zero)?)
}
