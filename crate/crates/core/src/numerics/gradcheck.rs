//! Central finite-difference verification of autodiff gradients.
//!
//! The numeric side evaluates the loss at perturbed parameter values and
//! never touches the backward pass, so it is an independent check on it.

use crate::numerics::optim::ParamSet;
use crate::numerics::tensor::{no_grad, Tensor};

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// Worst relative error across all checked entries.
    pub max_rel_error: f64,
    /// Name and flat index where it occurred.
    pub worst: Option<(String, usize)>,
    pub entries_checked: usize,
}

/// Compares autodiff gradients of `loss()` with central finite differences
/// (step `h`) for every entry of every parameter in `ps`.
///
/// Relative error uses max(|analytic|, |numeric|) as denominator; entries
/// where both sides are below `1e-7` are skipped as below finite-difference
/// resolution.
pub fn check_param_gradients(ps: &ParamSet, h: f64, loss: impl Fn() -> Tensor) -> GradCheckReport {
    ps.clear_grads();
    let out = loss();
    out.backward();

    let names: Vec<String> = ps.names().cloned().collect();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        entries_checked: 0,
    };

    for name in &names {
        let param = ps.get(name).unwrap().clone();
        let analytic = param.grad().unwrap_or_else(|| vec![0.0; param.len()]);
        let base = param.values();
        for i in 0..base.len() {
            let mut plus = base.clone();
            plus[i] += h;
            param.set_values(&plus);
            let f_plus = no_grad(&loss).scalar_value();

            let mut minus = base.clone();
            minus[i] -= h;
            param.set_values(&minus);
            let f_minus = no_grad(&loss).scalar_value();

            param.set_values(&base);

            let numeric = (f_plus - f_minus) / (2.0 * h);
            let denom = analytic[i].abs().max(numeric.abs());
            if denom < 1e-7 {
                continue;
            }
            report.entries_checked += 1;
            let rel = (analytic[i] - numeric).abs() / denom;
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = Some((name.clone(), i));
            }
        }
    }
    ps.clear_grads();
    report
}
