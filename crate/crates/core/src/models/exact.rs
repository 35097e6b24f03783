//! Exact GP regression on every retained sample.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::dataset::Dataset;
use crate::error::{GpError, Result};
use crate::kernel::{accumulate_adjoint, kernel_matrix, Hyperparameters};
use crate::linalg::{robust_cholesky, CholeskyFactor};
use crate::models::training::{maximize, FitReport};
use crate::models::{pack_parameters, Objective, Prediction};
use crate::optimizer::OptimizerConfig;

/// Query rows handled per parallel prediction task.
const PREDICT_CHUNK: usize = 512;

fn noisy_cholesky(data: &Dataset, hp: &Hyperparameters) -> Result<(DMatrix<f64>, CholeskyFactor)> {
    let kff = kernel_matrix(data.inputs(), data.inputs(), hp)?;
    let mut k = kff.clone();
    let sn2 = hp.noise_variance();
    for i in 0..k.nrows() {
        k[(i, i)] += sn2;
    }
    Ok((kff, robust_cholesky(&k)?))
}

/// Log marginal likelihood `log N(y; 0, K + sn2 I)` and its gradient over
/// the log hyperparameters.
pub fn gpr_log_marginal_likelihood(data: &Dataset, hp: &Hyperparameters) -> Result<Objective> {
    if data.is_empty() {
        return Err(GpError::Empty("exact GP needs at least one sample"));
    }
    let n = data.len();
    let (kff, chol) = noisy_cholesky(data, hp)?;
    let alpha = chol.solve_vec(data.targets());
    let value = -0.5 * data.targets().dot(&alpha) - 0.5 * chol.log_det() - 0.5 * n as f64 * (2.0 * PI).ln();

    // dL/dK = 0.5 (alpha alphaᵀ - K⁻¹)
    let mut adjoint = chol.inverse();
    adjoint.neg_mut();
    adjoint.ger(1.0, &alpha, &alpha, 1.0);
    adjoint *= 0.5;

    let mut hp_grad = vec![0.0; hp.param_count()];
    accumulate_adjoint(data.inputs(), data.inputs(), hp, &kff, &adjoint, &mut hp_grad, None, None);
    hp_grad[hp.dim() + 1] = hp.noise_variance() * adjoint.trace();
    Ok(Objective { value, gradient: DVector::from_vec(hp_grad) })
}

/// Posterior predictive mean and marginal variances at `queries`.
pub fn gpr_predict(data: &Dataset, hp: &Hyperparameters, queries: &DMatrix<f64>) -> Result<Prediction> {
    if data.is_empty() {
        return Err(GpError::Empty("exact GP prediction needs fitted inputs"));
    }
    let (_, chol) = noisy_cholesky(data, hp)?;
    let alpha = chol.solve_vec(data.targets());
    predict_with_factor(data, hp, &chol, &alpha, queries)
}

fn predict_with_factor(
    data: &Dataset,
    hp: &Hyperparameters,
    chol: &CholeskyFactor,
    alpha: &DVector<f64>,
    queries: &DMatrix<f64>,
) -> Result<Prediction> {
    let q = queries.nrows();
    let sf2 = hp.signal_variance();
    let starts: Vec<usize> = (0..q).step_by(PREDICT_CHUNK).collect();
    let parts: Vec<Result<(Vec<f64>, Vec<f64>)>> = starts
        .par_iter()
        .map(|&start| {
            let rows = PREDICT_CHUNK.min(q - start);
            let chunk = queries.rows(start, rows).into_owned();
            let kxq = kernel_matrix(data.inputs(), &chunk, hp)?;
            let mean = kxq.tr_mul(alpha);
            let w = chol.solve_lower(&kxq);
            let var = (0..rows).map(|j| sf2 - w.column(j).norm_squared()).collect();
            Ok((mean.as_slice().to_vec(), var))
        })
        .collect();
    let mut mean = Vec::with_capacity(q);
    let mut var = Vec::with_capacity(q);
    for part in parts {
        let (m, v) = part?;
        mean.extend(m);
        var.extend(v);
    }
    Ok(Prediction::new(DVector::from_vec(mean), DVector::from_vec(var), hp.noise_variance()))
}

/// Exact GP over a fixed dataset.
#[derive(Debug, Clone)]
pub struct ExactGp {
    data: Dataset,
    hp: Hyperparameters,
}

impl ExactGp {
    pub fn new(data: Dataset, hp: Hyperparameters) -> Self {
        Self { data, hp }
    }

    /// Maximizes the log marginal likelihood starting from `hp_init`.
    pub fn fit(data: Dataset, hp_init: &Hyperparameters, config: &OptimizerConfig) -> Result<(Self, FitReport)> {
        let start = pack_parameters(hp_init, None);
        let free: Vec<usize> = (0..start.len()).collect();
        let (best, report) = maximize(
            |p| gpr_log_marginal_likelihood(&data, &Hyperparameters::from_log_slice(p.as_slice())?),
            &start,
            &free,
            config,
        )?;
        let hp = Hyperparameters::from_log_slice(best.as_slice())?;
        Ok((Self { data, hp }, report))
    }

    pub fn data(&self) -> &Dataset {
        &self.data
    }

    pub fn hyperparameters(&self) -> &Hyperparameters {
        &self.hp
    }

    pub fn log_marginal_likelihood(&self) -> Result<Objective> {
        gpr_log_marginal_likelihood(&self.data, &self.hp)
    }

    pub fn predict(&self, queries: &DMatrix<f64>) -> Result<Prediction> {
        gpr_predict(&self.data, &self.hp, queries)
    }
}
