//! Weighted latent-prediction loss.
//!
//! For predicted latents `p_i` and teacher latents `t_i` over the target
//! tokens, `L = (1/|T|) Σ_i w_i · d(p_i, t_i)` where `d` averages a per-element
//! distance over the embedding dimensions. With all `w_i = 1` this is the
//! unweighted objective; the CLS token always has `w = 1`.

use crate::error::{Error, Result};
use crate::lossweights::WeightConfig;
use crate::nn::Scalar;
use ndarray::{Array2, ArrayView2, Zip};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Distance {
    /// Quadratic below `beta`, linear above: `0.5 x²/β` or `|x| - 0.5 β`.
    SmoothL1 { beta: f64 },
    /// Squared difference.
    L2,
}

impl Default for Distance {
    fn default() -> Self {
        Distance::SmoothL1 { beta: 1.0 }
    }
}

impl Distance {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Distance::SmoothL1 { beta } if !(beta > 0.0 && beta.is_finite()) => Err(Error::Config(
                format!("smooth-L1 beta must be positive, got {beta}"),
            )),
            _ => Ok(()),
        }
    }

    #[inline]
    fn value<F: Scalar>(self, x: F) -> F {
        match self {
            Distance::SmoothL1 { beta } => {
                let b = F::lit(beta);
                let a = x.abs();
                if a < b {
                    F::lit(0.5) * x * x / b
                } else {
                    a - F::lit(0.5) * b
                }
            }
            Distance::L2 => x * x,
        }
    }

    #[inline]
    fn derivative<F: Scalar>(self, x: F) -> F {
        match self {
            Distance::SmoothL1 { beta } => {
                let b = F::lit(beta);
                if x.abs() < b {
                    x / b
                } else {
                    x.signum()
                }
            }
            Distance::L2 => F::lit(2.0) * x,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossConfig {
    pub distance: Distance,
    pub weights: WeightConfig,
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        self.distance.validate()?;
        self.weights.validate()
    }
}

fn check_inputs<F: Scalar>(
    predicted: &ArrayView2<F>,
    reference: &ArrayView2<F>,
    weights: Option<&[f64]>,
) -> Result<()> {
    if predicted.dim() != reference.dim() {
        return Err(Error::Shape(format!(
            "predicted {:?} vs reference {:?}",
            predicted.dim(),
            reference.dim()
        )));
    }
    if predicted.nrows() == 0 || predicted.ncols() == 0 {
        return Err(Error::InvalidArgument("loss needs at least one token".into()));
    }
    if let Some(w) = weights {
        if w.len() != predicted.nrows() {
            return Err(Error::Shape(format!(
                "{} weights for {} tokens",
                w.len(),
                predicted.nrows()
            )));
        }
        if w.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite loss weight".into()));
        }
    }
    if predicted.iter().chain(reference.iter()).any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("non-finite latent".into()));
    }
    Ok(())
}

fn token_distance<F: Scalar>(p: ndarray::ArrayView1<F>, r: ndarray::ArrayView1<F>, d: Distance) -> F {
    let mut acc = F::zero();
    Zip::from(&p).and(&r).for_each(|&a, &b| acc += d.value(a - b));
    acc / F::lit(p.len() as f64)
}

/// Weighted loss over the target tokens.
pub fn jepa_loss<F: Scalar>(
    predicted: ArrayView2<F>,
    reference: ArrayView2<F>,
    weights: &[f64],
    distance: Distance,
) -> Result<F> {
    check_inputs(&predicted, &reference, Some(weights))?;
    let mut total = F::zero();
    for ((p, r), &w) in predicted.rows().into_iter().zip(reference.rows()).zip(weights) {
        total += F::lit(w) * token_distance(p, r, distance);
    }
    Ok(total / F::lit(predicted.nrows() as f64))
}

/// The same objective without per-token weights.
pub fn unweighted_loss<F: Scalar>(
    predicted: ArrayView2<F>,
    reference: ArrayView2<F>,
    distance: Distance,
) -> Result<F> {
    check_inputs(&predicted, &reference, None)?;
    let mut total = F::zero();
    for (p, r) in predicted.rows().into_iter().zip(reference.rows()) {
        total += token_distance(p, r, distance);
    }
    Ok(total / F::lit(predicted.nrows() as f64))
}

/// Loss and its gradient with respect to `predicted`. The reference is
/// treated as a constant.
pub fn jepa_loss_grad<F: Scalar>(
    predicted: ArrayView2<F>,
    reference: ArrayView2<F>,
    weights: &[f64],
    distance: Distance,
) -> Result<(F, Array2<F>)> {
    let loss = jepa_loss(predicted, reference, weights, distance)?;
    let (n, d) = predicted.dim();
    let mut grad = Array2::zeros((n, d));
    let norm = F::lit((n * d) as f64);
    for (((mut g, p), r), &w) in grad
        .rows_mut()
        .into_iter()
        .zip(predicted.rows())
        .zip(reference.rows())
        .zip(weights)
    {
        let k = F::lit(w) / norm;
        Zip::from(&mut g)
            .and(&p)
            .and(&r)
            .for_each(|g, &a, &b| *g = k * distance.derivative(a - b));
    }
    Ok((loss, grad))
}
