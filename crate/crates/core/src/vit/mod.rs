//! Compact Vision Transformer encoder, the latent predictor, and the EMA
//! teacher update.
//!
//! The encoder only sees the patches it is given: each listed patch is
//! projected and tagged with the positional row of its original grid slot, so
//! a subset of tokens keeps its spatial identity. The CLS token uses a
//! dedicated positional row at index `L²`.

mod encoder;
mod predictor;

pub use encoder::{Encoder, EncoderCache, EncoderConfig, PosEmbedKind};
pub use predictor::{Predictor, PredictorCache, PredictorConfig};

use crate::error::{Error, Result};
use crate::nn::{ParamStore, Scalar};
use ndarray::{Array2, ArrayD, IxDyn};

/// Updates every teacher scalar as `m * teacher + (1 - m) * student`.
///
/// `m = 1` leaves the teacher untouched and `m = 0` copies the student; both
/// cases are exact.
pub fn ema_update<F: Scalar>(
    teacher: &mut ParamStore<F>,
    student: &ParamStore<F>,
    momentum: f64,
) -> Result<()> {
    if !(0.0..=1.0).contains(&momentum) {
        return Err(Error::InvalidArgument(format!(
            "EMA momentum must lie in [0, 1], got {momentum}"
        )));
    }
    teacher.check_layout(student)?;
    if momentum == 1.0 {
        return Ok(());
    }
    let m = F::lit(momentum);
    let rest = F::lit(1.0 - momentum);
    for (t, s) in teacher.params_mut().iter_mut().zip(student.params()) {
        if momentum == 0.0 {
            t.value.assign(&s.value);
        } else {
            ndarray::Zip::from(&mut t.value)
                .and(&s.value)
                .for_each(|tv, &sv| *tv = m * *tv + rest * sv);
        }
    }
    Ok(())
}

/// Fixed 2-D sine/cosine table with `L²` grid rows and a zero CLS row.
pub(crate) fn sincos_table(side: usize, dim: usize) -> Result<ArrayD<f64>> {
    if dim % 4 != 0 {
        return Err(Error::Config(format!(
            "sinusoidal positions need a width divisible by 4, got {dim}"
        )));
    }
    let quarter = dim / 4;
    let mut table = Array2::<f64>::zeros((side * side + 1, dim));
    for r in 0..side {
        for c in 0..side {
            let mut row = table.row_mut(r * side + c);
            for k in 0..quarter {
                let omega = 1.0 / 10000f64.powf(k as f64 / quarter as f64);
                row[k] = (r as f64 * omega).sin();
                row[quarter + k] = (r as f64 * omega).cos();
                row[2 * quarter + k] = (c as f64 * omega).sin();
                row[3 * quarter + k] = (c as f64 * omega).cos();
            }
        }
    }
    Ok(table.into_shape_with_order(IxDyn(&[side * side + 1, dim])).expect("reshape"))
}
