use serde::Serialize;

use crate::error::{Error, Result};

/// A scalar function with an analytic gradient.
pub trait Differentiable {
    fn value(&self, x: &[f64]) -> Result<f64>;
    fn gradient(&self, x: &[f64]) -> Result<Vec<f64>>;
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradReport {
    pub max_rel_err: f64,
    /// Coordinate where `max_rel_err` occurs.
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub n_coords: usize,
    pub step: f64,
}

/// `|a - n| / max(|a|, |n|, 1e-12)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-12)
}

/// Central differences on every coordinate of `point`, compared with the
/// analytic gradient.
pub fn grad_check(f: &impl Differentiable, point: &[f64], step: f64) -> Result<GradReport> {
    if !(step.is_finite() && step > 0.0) {
        return Err(Error::invalid(format!("step must be positive, got {step}")));
    }
    if point.is_empty() {
        return Err(Error::invalid("empty point"));
    }
    let analytic = f.gradient(point)?;
    if analytic.len() != point.len() {
        return Err(Error::shape(format!(
            "gradient has {} entries for a {}-dimensional point",
            analytic.len(),
            point.len()
        )));
    }
    let mut x = point.to_vec();
    let mut report = GradReport {
        max_rel_err: 0.0,
        worst_index: 0,
        analytic: analytic[0],
        numeric: f64::NAN,
        n_coords: point.len(),
        step,
    };
    for i in 0..x.len() {
        let orig = x[i];
        x[i] = orig + step;
        let up = f.value(&x)?;
        x[i] = orig - step;
        let down = f.value(&x)?;
        x[i] = orig;
        let numeric = (up - down) / (2.0 * step);
        if !numeric.is_finite() || !analytic[i].is_finite() {
            return Err(Error::Numeric(format!("non-finite derivative at coordinate {i}")));
        }
        let e = relative_error(analytic[i], numeric);
        if i == 0 || e > report.max_rel_err {
            report.max_rel_err = e;
            report.worst_index = i;
            report.analytic = analytic[i];
            report.numeric = numeric;
        }
    }
    Ok(report)
}
