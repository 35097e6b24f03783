//! Accuracy, memory and timing metrics recorded per streaming batch.

use std::f64::consts::PI;
use std::time::Instant;

use nalgebra::DVector;

use crate::error::{GpError, Result};
use crate::models::Prediction;

/// Root mean squared error between the true field and the predicted mean.
pub fn rmse(truth: &DVector<f64>, predicted_mean: &DVector<f64>) -> Result<f64> {
    if truth.len() != predicted_mean.len() {
        return Err(GpError::DimensionMismatch { context: "rmse", expected: truth.len(), found: predicted_mean.len() });
    }
    if truth.is_empty() {
        return Err(GpError::Empty("rmse needs at least one point"));
    }
    Ok(((truth - predicted_mean).norm_squared() / truth.len() as f64).sqrt())
}

/// Average negative log density of each target under `N(mean, variance_y)`.
pub fn nlpd(test_targets: &DVector<f64>, prediction: &Prediction) -> Result<f64> {
    if test_targets.len() != prediction.len() {
        return Err(GpError::DimensionMismatch { context: "nlpd", expected: test_targets.len(), found: prediction.len() });
    }
    if test_targets.is_empty() {
        return Err(GpError::Empty("nlpd needs at least one point"));
    }
    let mut total = 0.0;
    for ((y, m), v) in test_targets.iter().zip(prediction.mean.iter()).zip(prediction.variance_y.iter()) {
        if !(*v > 0.0) {
            return Err(GpError::InvalidArgument(format!("predictive variance must be positive, got {v}")));
        }
        total += 0.5 * (2.0 * PI * v).ln() + 0.5 * (y - m).powi(2) / v;
    }
    Ok(total / test_targets.len() as f64)
}

/// The five model families in the benchmark.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Gpr,
    GprWindow(usize),
    Vsgp,
    Spgp,
    Ssgp,
}

impl ModelKind {
    /// Name used in result tables.
    pub fn label(&self) -> String {
        match self {
            ModelKind::Gpr => "gpr".into(),
            ModelKind::GprWindow(w) => format!("gpr{w}"),
            ModelKind::Vsgp => "vsgp".into(),
            ModelKind::Spgp => "spgp".into(),
            ModelKind::Ssgp => "ssgp".into(),
        }
    }
}

/// Points a model must hold in memory: retained training samples plus
/// pseudo-inputs.
pub fn onboard_count(kind: ModelKind, samples_seen: usize, current_batch: usize, pseudo_points: usize) -> usize {
    match kind {
        ModelKind::Gpr => samples_seen,
        ModelKind::GprWindow(w) => samples_seen.min(w),
        ModelKind::Vsgp | ModelKind::Spgp => samples_seen + pseudo_points,
        ModelKind::Ssgp => current_batch + pseudo_points,
    }
}

/// One row of a result table.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchRecord {
    pub model: String,
    pub batch_index: usize,
    pub cumulative_n: usize,
    pub m_pseudo: usize,
    pub rmse: f64,
    pub nlpd: f64,
    pub train_seconds: f64,
    pub predict_seconds: f64,
    pub onboard_points: usize,
    /// `[sf2, l_1, l_2, sn2]` on the natural scale.
    pub hyperparameters: [f64; 4],
    pub failed: bool,
}

/// Monotonic wall-clock timer.
pub struct Stopwatch(Instant);

impl Stopwatch {
    pub fn start() -> Self {
        Self(Instant::now())
    }

    pub fn seconds(&self) -> f64 {
        self.0.elapsed().as_secs_f64()
    }
}
