//! Exact GP over a sliding window of the most recent samples.

use nalgebra::DMatrix;

use crate::dataset::Dataset;
use crate::error::{GpError, Result};
use crate::kernel::Hyperparameters;
use crate::models::exact::{gpr_log_marginal_likelihood, gpr_predict, ExactGp};
use crate::models::training::FitReport;
use crate::models::{Objective, Prediction};
use crate::optimizer::OptimizerConfig;

#[derive(Debug, Clone)]
pub struct WindowedGp {
    data: Dataset,
    window: usize,
    hp: Hyperparameters,
}

impl WindowedGp {
    pub fn new(window: usize, dim: usize, hp: Hyperparameters) -> Result<Self> {
        if window == 0 {
            return Err(GpError::InvalidArgument("window must hold at least one sample".into()));
        }
        Ok(Self { data: Dataset::empty(dim), window, hp })
    }

    pub fn data(&self) -> &Dataset {
        &self.data
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn hyperparameters(&self) -> &Hyperparameters {
        &self.hp
    }

    pub fn with_hyperparameters(&self, hp: Hyperparameters) -> Self {
        Self { hp, ..self.clone() }
    }

    /// Refits hyperparameters on the retained samples, warm-started from the current ones.
    pub fn refit(&self, config: &OptimizerConfig) -> Result<(Self, FitReport)> {
        let (gp, report) = ExactGp::fit(self.data.clone(), &self.hp, config)?;
        Ok((self.with_hyperparameters(gp.hyperparameters().clone()), report))
    }

    pub fn log_marginal_likelihood(&self) -> Result<Objective> {
        gpr_log_marginal_likelihood(&self.data, &self.hp)
    }

    pub fn predict(&self, queries: &DMatrix<f64>) -> Result<Prediction> {
        gpr_predict(&self.data, &self.hp, queries)
    }
}

/// Appends `batch` and keeps only the most recent `window` samples, in arrival order.
pub fn gpr_window_update(state: &WindowedGp, batch: &Dataset) -> Result<WindowedGp> {
    if batch.len() > state.window {
        return Err(GpError::InvalidArgument(format!(
            "batch of {} exceeds window {}",
            batch.len(),
            state.window
        )));
    }
    let merged = state.data.concat(batch)?;
    Ok(WindowedGp { data: merged.tail(state.window), ..state.clone() })
}
