//! Binary focal loss: `-alpha_t * (1 - p_t)^gamma * ln(p_t)` where `p_t` is
//! the probability assigned to the true label and `alpha_t` is `alpha` for
//! positives and `1 - alpha` for negatives.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Lower bound applied to `p_t` so the loss stays finite.
pub const PT_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FocalParams {
    /// Weight of the positive class; negatives get `1 - alpha`.
    pub alpha: f64,
    /// Focusing exponent; `0` gives weighted cross-entropy.
    pub gamma: f64,
}

impl Default for FocalParams {
    fn default() -> Self {
        FocalParams {
            alpha: 0.25,
            gamma: 2.0,
        }
    }
}

impl FocalParams {
    pub fn new(alpha: f64, gamma: f64) -> Result<Self> {
        let p = FocalParams { alpha, gamma };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::invalid(format!("alpha must lie in [0, 1], got {}", self.alpha)));
        }
        if !(self.gamma.is_finite() && self.gamma >= 0.0) {
            return Err(Error::invalid(format!(
                "gamma must be finite and >= 0, got {}",
                self.gamma
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FocalEval {
    pub loss: f64,
    /// `p_t` fell below [`PT_FLOOR`] and was raised to it.
    pub clamped: bool,
}

/// `(p_t, alpha_t, clamped)`
fn true_class(p: f64, positive: bool, fp: &FocalParams) -> Result<(f64, f64, bool)> {
    fp.validate()?;
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::invalid(format!("probability must lie in [0, 1], got {p}")));
    }
    let (pt, at) = if positive {
        (p, fp.alpha)
    } else {
        (1.0 - p, 1.0 - fp.alpha)
    };
    if pt < PT_FLOOR {
        Ok((PT_FLOOR, at, true))
    } else {
        Ok((pt, at, false))
    }
}

pub fn focal_loss(p: f64, positive: bool, fp: &FocalParams) -> Result<FocalEval> {
    let (pt, at, clamped) = true_class(p, positive, fp)?;
    let loss = -at * (1.0 - pt).powf(fp.gamma) * pt.ln();
    Ok(FocalEval {
        // -0.0 at p_t = 1
        loss: loss + 0.0,
        clamped,
    })
}

/// `d loss / d p` (derivative with respect to the raw probability, not `p_t`).
pub fn focal_loss_grad(p: f64, positive: bool, fp: &FocalParams) -> Result<f64> {
    let (pt, at, _) = true_class(p, positive, fp)?;
    let q = 1.0 - pt;
    let g = fp.gamma;
    // The gamma * q^(gamma-1) * ln(p_t) term vanishes as q -> 0 for any gamma >= 0.
    let focus = if g == 0.0 || q == 0.0 {
        0.0
    } else {
        g * q.powf(g - 1.0) * pt.ln()
    };
    let d_pt = -at * (-focus + q.powf(g) / pt);
    Ok(if positive { d_pt } else { -d_pt })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FocalBatch {
    /// Mean loss over the batch.
    pub loss: f64,
    /// Per-sample derivative of the mean loss.
    pub grads: Vec<f64>,
    pub clamped: usize,
}

pub fn focal_loss_mean(samples: &[(f64, bool)], fp: &FocalParams) -> Result<FocalBatch> {
    if samples.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    let n = samples.len() as f64;
    let mut total = 0.0;
    let mut clamped = 0;
    let mut grads = Vec::with_capacity(samples.len());
    for &(p, y) in samples {
        let e = focal_loss(p, y, fp)?;
        total += e.loss;
        clamped += e.clamped as usize;
        grads.push(focal_loss_grad(p, y, fp)? / n);
    }
    Ok(FocalBatch {
        loss: total / n,
        grads,
        clamped,
    })
}
