//! Exact, windowed, variational sparse, FITC and streaming sparse GP regression.

mod collapsed;
pub mod exact;
pub mod fitc;
pub mod sparse;
pub mod streaming;
mod training;
pub mod window;

use nalgebra::{DMatrix, DVector};

use crate::error::{GpError, Result};
use crate::kernel::Hyperparameters;

pub use exact::{gpr_log_marginal_likelihood, gpr_predict, ExactGp};
pub use fitc::{spgp_log_marginal_likelihood, spgp_posterior, FitcGp};
pub use sparse::{sparse_predict, vsgp_elbo, vsgp_optimal_q, SparseState, VariationalGp};
pub use streaming::{select_pseudo_inputs, ssgp_elbo, ssgp_init, ssgp_update, SsgpConfig, SsgpUpdate};
pub use training::FitReport;
pub use window::{gpr_window_update, WindowedGp};

/// Posterior predictive marginals at a set of query points.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub mean: DVector<f64>,
    /// Latent-function variance.
    pub variance_f: DVector<f64>,
    /// `variance_f + noise variance`.
    pub variance_y: DVector<f64>,
}

impl Prediction {
    pub(crate) fn new(mean: DVector<f64>, variance_f: DVector<f64>, noise_variance: f64) -> Self {
        let variance_f = variance_f.map(|v| v.max(0.0));
        let variance_y = variance_f.add_scalar(noise_variance);
        Self { mean, variance_f, variance_y }
    }

    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }
}

/// A scalar training objective (log marginal likelihood or a lower bound on
/// it) and its gradient over the free parameters.
///
/// The gradient is laid out as `[log sf2, log l_1..l_D, log sn2]`, followed
/// by the pseudo-input coordinates in row-major order for sparse models.
#[derive(Debug, Clone, PartialEq)]
pub struct Objective {
    pub value: f64,
    pub gradient: DVector<f64>,
}

/// Flattens hyperparameters and (optionally) pseudo-inputs into one vector.
pub fn pack_parameters(hp: &Hyperparameters, pseudo_inputs: Option<&DMatrix<f64>>) -> DVector<f64> {
    let mut v = hp.to_log_vec();
    if let Some(z) = pseudo_inputs {
        for i in 0..z.nrows() {
            v.extend(z.row(i).iter());
        }
    }
    DVector::from_vec(v)
}

/// Inverse of [`pack_parameters`] for `m` pseudo-inputs in `dim` dimensions.
pub fn unpack_parameters(
    params: &DVector<f64>,
    dim: usize,
    m: usize,
) -> Result<(Hyperparameters, DMatrix<f64>)> {
    let expected = dim + 2 + m * dim;
    if params.len() != expected {
        return Err(GpError::DimensionMismatch { context: "parameter vector", expected, found: params.len() });
    }
    let hp = Hyperparameters::from_log_slice(&params.as_slice()[..dim + 2])?;
    let z = DMatrix::from_fn(m, dim, |i, d| params[dim + 2 + i * dim + d]);
    if z.iter().any(|v| !v.is_finite()) {
        return Err(GpError::NonFinite("pseudo-inputs"));
    }
    Ok((hp, z))
}

/// Gradient buffer in the packed layout.
pub(crate) struct GradientBuffer {
    pub hp: Vec<f64>,
    pub z: DMatrix<f64>,
}

impl GradientBuffer {
    pub fn new(dim: usize, m: usize) -> Self {
        Self { hp: vec![0.0; dim + 2], z: DMatrix::zeros(m, dim) }
    }

    pub fn into_vector(self, include_z: bool) -> DVector<f64> {
        let mut v = self.hp;
        if include_z {
            for i in 0..self.z.nrows() {
                v.extend(self.z.row(i).iter());
            }
        }
        DVector::from_vec(v)
    }
}

#[cfg(test)]
pub(crate) mod test_support {
    use super::*;
    use crate::dataset::Dataset;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    pub fn random_inputs(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
        DMatrix::from_fn(n, 2, |_, _| rng.random::<f64>())
    }

    /// Smooth test function plus noise.
    pub fn random_dataset(rng: &mut ChaCha8Rng, n: usize) -> Dataset {
        let x = random_inputs(rng, n);
        let y = DVector::from_fn(n, |i, _| {
            (3.0 * x[(i, 0)]).sin() + 0.5 * (2.0 * x[(i, 1)]).cos() + 0.1 * (rng.random::<f64>() - 0.5)
        });
        Dataset::new(x, y).unwrap()
    }

    pub fn random_hp(rng: &mut ChaCha8Rng) -> Hyperparameters {
        Hyperparameters::new(
            rng.random_range(0.5..2.0),
            &[rng.random_range(0.2..0.6), rng.random_range(0.2..0.6)],
            rng.random_range(0.05..0.3),
        )
        .unwrap()
    }

    /// Dense `N(y; 0, cov)` log density through an explicit inverse.
    pub fn dense_log_density(y: &DVector<f64>, cov: &DMatrix<f64>) -> f64 {
        let n = y.len() as f64;
        let inv = cov.clone().try_inverse().unwrap();
        let det = cov.determinant();
        -0.5 * (y.transpose() * inv * y)[(0, 0)] - 0.5 * det.ln() - 0.5 * n * (2.0 * std::f64::consts::PI).ln()
    }
}
