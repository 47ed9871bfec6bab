use super::tensor::Tensor;
use super::Model;
use crate::error::Result;

/// Denominator floor for the relative error, so gradients that are zero up to
/// rounding (dead ReLUs, unused pool inputs) do not blow the ratio up.
pub const REL_ERROR_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Parameter name and flat index of the worst entry.
    pub worst: Option<(String, usize)>,
    pub checked: usize,
    pub threshold: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error.is_finite() && self.max_rel_error < self.threshold
    }
}

/// `|a - n| / max(|a|, |n|, REL_ERROR_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR)
}

/// Compares every analytic parameter gradient of the mean cross-entropy with
/// a central difference of step `h`.
pub fn grad_check(model: &Model, x: &Tensor, labels: &[usize], h: f64, threshold: f64) -> Result<GradCheckReport> {
    let (_, _, grads) = model.loss_and_grads(x, labels)?;
    let names = model.param_names();
    let mut probe = model.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        checked: 0,
        threshold,
    };
    for (p, grad) in grads.iter().enumerate() {
        for i in 0..grad.len() {
            let orig = probe.params()[p].data()[i];
            probe.params_mut()[p].data_mut()[i] = orig + h;
            let up = probe.loss(x, labels)?;
            probe.params_mut()[p].data_mut()[i] = orig - h;
            let down = probe.loss(x, labels)?;
            probe.params_mut()[p].data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * h);
            let err = relative_error(grad.data()[i], numeric);
            report.checked += 1;
            if err > report.max_rel_error || err.is_nan() {
                report.max_rel_error = err;
                report.worst = Some((names[p].clone(), i));
            }
        }
    }
    Ok(report)
}
