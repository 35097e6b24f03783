//! Squared-exponential ARD covariance and its derivatives.
//!
//! All hyperparameters are carried as logarithms so that optimizers can work
//! in an unconstrained space. The kernel is
//!
//! ```text
//! k(a, b) = sf2 * exp(-0.5 * sum_d ((a_d - b_d) / l_d)^2)
//! ```

use nalgebra::DMatrix;

use crate::error::{GpError, Result};

/// Kernel amplitude, per-dimension lengthscales and observation noise, all in log space.
#[derive(Debug, Clone, PartialEq)]
pub struct Hyperparameters {
    pub log_signal_variance: f64,
    pub log_lengthscales: Vec<f64>,
    pub log_noise_variance: f64,
}

impl Hyperparameters {
    /// Builds hyperparameters from positive natural-scale values.
    pub fn new(signal_variance: f64, lengthscales: &[f64], noise_variance: f64) -> Result<Self> {
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !positive(signal_variance) || !positive(noise_variance) {
            return Err(GpError::InvalidArgument(format!(
                "variances must be positive and finite (signal {signal_variance}, noise {noise_variance})"
            )));
        }
        if lengthscales.is_empty() || !lengthscales.iter().all(|&l| positive(l)) {
            return Err(GpError::InvalidArgument(format!(
                "lengthscales must be non-empty, positive and finite: {lengthscales:?}"
            )));
        }
        Ok(Self {
            log_signal_variance: signal_variance.ln(),
            log_lengthscales: lengthscales.iter().map(|l| l.ln()).collect(),
            log_noise_variance: noise_variance.ln(),
        })
    }

    /// Rebuilds from the flat log vector `[log sf2, log l_1..l_D, log sn2]`.
    pub fn from_log_slice(values: &[f64]) -> Result<Self> {
        if values.len() < 3 {
            return Err(GpError::DimensionMismatch {
                context: "hyperparameter vector",
                expected: 3,
                found: values.len(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(GpError::NonFinite("hyperparameter vector"));
        }
        let d = values.len() - 2;
        Ok(Self {
            log_signal_variance: values[0],
            log_lengthscales: values[1..=d].to_vec(),
            log_noise_variance: values[d + 1],
        })
    }

    /// Flat log vector `[log sf2, log l_1..l_D, log sn2]`.
    pub fn to_log_vec(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        out.push(self.log_signal_variance);
        out.extend_from_slice(&self.log_lengthscales);
        out.push(self.log_noise_variance);
        out
    }

    pub fn dim(&self) -> usize {
        self.log_lengthscales.len()
    }

    /// Number of free hyperparameters, `D + 2`.
    pub fn param_count(&self) -> usize {
        self.dim() + 2
    }

    pub fn signal_variance(&self) -> f64 {
        self.log_signal_variance.exp()
    }

    pub fn noise_variance(&self) -> f64 {
        self.log_noise_variance.exp()
    }

    pub fn lengthscale(&self, d: usize) -> f64 {
        self.log_lengthscales[d].exp()
    }

    pub fn lengthscales(&self) -> Vec<f64> {
        self.log_lengthscales.iter().map(|l| l.exp()).collect()
    }

    /// `1 / l_d^2` for every dimension.
    pub(crate) fn inverse_squared_lengthscales(&self) -> Vec<f64> {
        self.log_lengthscales.iter().map(|l| (-2.0 * l).exp()).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.to_log_vec().iter().all(|v| v.is_finite())
            && self.signal_variance().is_finite()
            && self.noise_variance().is_finite()
            && self.noise_variance() > 0.0
    }
}

/// Covariance between two points.
///
/// Panics when the point dimensions disagree with the lengthscales.
pub fn kernel_eval(a: &[f64], b: &[f64], hp: &Hyperparameters) -> f64 {
    assert_eq!(a.len(), hp.dim(), "kernel_eval: first point has wrong dimension");
    assert_eq!(b.len(), hp.dim(), "kernel_eval: second point has wrong dimension");
    let sq: f64 = a
        .iter()
        .zip(b)
        .zip(&hp.log_lengthscales)
        .map(|((x, y), ll)| {
            let r = (x - y) / ll.exp();
            r * r
        })
        .sum();
    hp.signal_variance() * (-0.5 * sq).exp()
}

fn check_dims(x1: &DMatrix<f64>, x2: &DMatrix<f64>, hp: &Hyperparameters) -> Result<()> {
    for x in [x1, x2] {
        if x.ncols() != hp.dim() {
            return Err(GpError::DimensionMismatch {
                context: "kernel input columns",
                expected: hp.dim(),
                found: x.ncols(),
            });
        }
    }
    Ok(())
}

/// Cross-covariance matrix between the rows of `x1` and `x2`.
pub fn kernel_matrix(x1: &DMatrix<f64>, x2: &DMatrix<f64>, hp: &Hyperparameters) -> Result<DMatrix<f64>> {
    check_dims(x1, x2, hp)?;
    let inv_l2 = hp.inverse_squared_lengthscales();
    let sf2 = hp.signal_variance();
    let (n1, n2) = (x1.nrows(), x2.nrows());
    let mut k = DMatrix::zeros(n1, n2);
    for j in 0..n2 {
        for i in 0..n1 {
            let mut sq = 0.0;
            for (d, w) in inv_l2.iter().enumerate() {
                let r = x1[(i, d)] - x2[(j, d)];
                sq += r * r * w;
            }
            k[(i, j)] = sf2 * (-0.5 * sq).exp();
        }
    }
    Ok(k)
}

/// Derivatives of the covariance matrix with respect to each log kernel
/// hyperparameter, ordered `[log sf2, log l_1, ..., log l_D]`.
///
/// The noise variance is not a kernel parameter; models that add it to the
/// diagonal differentiate that term themselves.
pub fn kernel_gradients(
    x1: &DMatrix<f64>,
    x2: &DMatrix<f64>,
    hp: &Hyperparameters,
) -> Result<Vec<DMatrix<f64>>> {
    let k = kernel_matrix(x1, x2, hp)?;
    let inv_l2 = hp.inverse_squared_lengthscales();
    let mut grads = Vec::with_capacity(hp.dim() + 1);
    grads.push(k.clone());
    for (d, w) in inv_l2.iter().enumerate() {
        let mut g = k.clone();
        for j in 0..x2.nrows() {
            for i in 0..x1.nrows() {
                let r = x1[(i, d)] - x2[(j, d)];
                g[(i, j)] *= r * r * w;
            }
        }
        grads.push(g);
    }
    Ok(grads)
}

/// Chain rule through `K = kernel_matrix(x1, x2, hp)` given the adjoint
/// `dL/dK` (same shape as `K`).
///
/// Adds `dL/dlog sf2` and `dL/dlog l_d` into `hp_grad[0..=D]` and, when
/// requested, `dL/dx1` and `dL/dx2` into the coordinate gradients.
pub(crate) fn accumulate_adjoint(
    x1: &DMatrix<f64>,
    x2: &DMatrix<f64>,
    hp: &Hyperparameters,
    k: &DMatrix<f64>,
    adjoint: &DMatrix<f64>,
    hp_grad: &mut [f64],
    mut grad_x1: Option<&mut DMatrix<f64>>,
    mut grad_x2: Option<&mut DMatrix<f64>>,
) {
    let inv_l2 = hp.inverse_squared_lengthscales();
    let dim = inv_l2.len();
    let mut ell = vec![0.0; dim];
    let mut amp = 0.0;
    for j in 0..x2.nrows() {
        for i in 0..x1.nrows() {
            let gk = adjoint[(i, j)] * k[(i, j)];
            if gk == 0.0 {
                continue;
            }
            amp += gk;
            for d in 0..dim {
                let r = x1[(i, d)] - x2[(j, d)];
                ell[d] += gk * r * r * inv_l2[d];
                let dx = gk * r * inv_l2[d];
                if let Some(g) = grad_x1.as_deref_mut() {
                    g[(i, d)] -= dx;
                }
                if let Some(g) = grad_x2.as_deref_mut() {
                    g[(j, d)] += dx;
                }
            }
        }
    }
    hp_grad[0] += amp;
    for d in 0..dim {
        hp_grad[1 + d] += ell[d];
    }
}
