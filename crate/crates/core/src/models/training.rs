use nalgebra::DVector;

use crate::error::{GpError, Result};
use crate::models::Objective;
use crate::optimizer::{minimize, OptimizerConfig, TerminationReason};

/// Outcome of one hyperparameter / pseudo-input optimization.
#[derive(Debug, Clone, PartialEq)]
pub struct FitReport {
    /// Objective value (log marginal likelihood or bound) at the returned point.
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
    pub termination: Option<TerminationReason>,
}

impl FitReport {
    pub(crate) fn fixed(objective: f64) -> Self {
        Self { objective, iterations: 0, converged: true, termination: None }
    }
}

/// Maximizes `objective` over the coordinates listed in `free`, holding the
/// rest of `start` fixed.
///
/// Failures of the objective away from the start point are treated as
/// non-finite values so the line search backs off from them.
pub(crate) fn maximize<F>(
    objective: F,
    start: &DVector<f64>,
    free: &[usize],
    config: &OptimizerConfig,
) -> Result<(DVector<f64>, FitReport)>
where
    F: Fn(&DVector<f64>) -> Result<Objective>,
{
    let initial = objective(start)?;
    if !initial.value.is_finite() || initial.gradient.iter().any(|g| !g.is_finite()) {
        return Err(GpError::NonFinite("objective at start"));
    }
    if free.is_empty() {
        return Ok((start.clone(), FitReport::fixed(initial.value)));
    }
    let embed = |sub: &DVector<f64>| {
        let mut full = start.clone();
        for (k, &i) in free.iter().enumerate() {
            full[i] = sub[k];
        }
        full
    };
    let negated = |sub: &DVector<f64>| match objective(&embed(sub)) {
        Ok(o) => (-o.value, DVector::from_iterator(free.len(), free.iter().map(|&i| -o.gradient[i]))),
        Err(_) => (f64::NAN, DVector::from_element(free.len(), f64::NAN)),
    };
    let sub_start = DVector::from_iterator(free.len(), free.iter().map(|&i| start[i]));
    let result = minimize(negated, &sub_start, config)
        .map_err(|e| GpError::InvalidArgument(e.to_string()))?;
    let report = FitReport {
        objective: -result.best_value,
        iterations: result.iterations_used,
        converged: result.converged,
        termination: Some(result.termination_reason),
    };
    Ok((embed(&result.best_point), report))
}
