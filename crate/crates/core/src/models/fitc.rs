//! Sparse pseudo-input GP (FITC): the Nyström covariance with its diagonal
//! corrected back to the exact prior variance.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};

use crate::dataset::Dataset;
use crate::error::{GpError, Result};
use crate::kernel::{accumulate_adjoint, kernel_matrix, Hyperparameters};
use crate::linalg::robust_cholesky;
use crate::models::collapsed::WhitenedPosterior;
use crate::models::sparse::{check_pseudo, SparseState};
use crate::models::training::{maximize, FitReport};
use crate::models::{pack_parameters, unpack_parameters, GradientBuffer, Objective, Prediction};
use crate::optimizer::OptimizerConfig;

struct FitcTerms {
    value: f64,
    gradient: Option<DVector<f64>>,
    posterior: WhitenedPosterior,
}

fn fitc_terms(data: &Dataset, z: &DMatrix<f64>, hp: &Hyperparameters, with_gradient: bool) -> Result<FitcTerms> {
    check_pseudo(z, hp)?;
    let (m, n, dim) = (z.nrows(), data.len(), hp.dim());
    let s = hp.noise_variance();
    let sf2 = hp.signal_variance();
    let y = data.targets();

    let kuu = kernel_matrix(z, z, hp)?;
    let chol = robust_cholesky(&kuu)?;
    let kuf = kernel_matrix(z, data.inputs(), hp)?;
    let a = chol.solve_lower(&kuf);
    // per-point noise: diag(K_ff − Q_ff) + s
    let lambda = DVector::from_fn(n, |i, _| sf2 - a.column(i).norm_squared() + s);
    if lambda.iter().any(|&l| !(l > 0.0)) {
        return Err(GpError::NonFinite("FITC diagonal"));
    }
    let a_scaled = DMatrix::from_fn(m, n, |i, j| a[(i, j)] / lambda[j]);
    let precision = &a_scaled * a.transpose();
    let y_scaled = y.component_div(&lambda);
    let shift = &a * &y_scaled;
    let posterior = WhitenedPosterior::new(chol, precision, shift)?;
    let lb = &posterior.posterior_chol;
    let c = &posterior.projected;

    let value = -0.5 * n as f64 * (2.0 * PI).ln()
        - 0.5 * lambda.iter().map(|l| l.ln()).sum::<f64>()
        - 0.5 * lb.log_det()
        - 0.5 * (y.dot(&y_scaled) - c.norm_squared());
    if !with_gradient {
        return Ok(FitcTerms { value, gradient: None, posterior });
    }

    let chol = &posterior.prior_chol;
    // alpha = C⁻¹ y, with C = Q_ff + Λ
    let nu = lb.solve_upper_vec(c);
    let alpha = &y_scaled - a_scaled.tr_mul(&nu);
    // B⁻¹ A Λ⁻¹ = A C⁻¹
    let binv_a_scaled = lb.solve(&a_scaled);
    let lb_a = lb.solve_lower(&a);
    let g = DVector::from_fn(n, |i, _| {
        let diag_cinv = 1.0 / lambda[i] - lb_a.column(i).norm_squared() / (lambda[i] * lambda[i]);
        0.5 * (alpha[i] * alpha[i] - diag_cinv)
    });
    // A H with H = ½(α αᵀ − C⁻¹) − diag(g)
    let a_alpha = &a * &alpha;
    let mut ah = binv_a_scaled * -0.5;
    ah.ger(0.5, &a_alpha, &alpha, 1.0);
    for j in 0..n {
        let gj = g[j];
        for i in 0..m {
            ah[(i, j)] -= a[(i, j)] * gj;
        }
    }

    let mut grad = GradientBuffer::new(dim, m);
    let g_kuf = chol.solve_upper(&ah) * 2.0;
    accumulate_adjoint(z, data.inputs(), hp, &kuf, &g_kuf, &mut grad.hp, Some(&mut grad.z), None);

    let aha = &ah * a.transpose();
    let aha = (&aha + aha.transpose()) * 0.5;
    let x = chol.solve_upper(&aha);
    let g_kuu = chol.solve_upper(&x.transpose()).transpose() * -1.0;
    accumulate_adjoint(z, z, hp, &kuu, &g_kuu, &mut grad.hp, Some(&mut grad.z), None);
    let mut gz2 = DMatrix::zeros(m, dim);
    let mut scratch = vec![0.0; dim + 2];
    accumulate_adjoint(z, z, hp, &kuu, &g_kuu, &mut scratch, None, Some(&mut gz2));
    grad.z += gz2;

    let g_sum = g.sum();
    grad.hp[0] += sf2 * g_sum;
    grad.hp[dim + 1] += s * g_sum;
    Ok(FitcTerms { value, gradient: Some(grad.into_vector(true)), posterior })
}

/// FITC approximate log marginal likelihood
/// `log N(y; 0, Q_ff + diag(K_ff − Q_ff) + sn2 I)` with gradient over log
/// hyperparameters and pseudo-inputs.
pub fn spgp_log_marginal_likelihood(data: &Dataset, z: &DMatrix<f64>, hp: &Hyperparameters) -> Result<Objective> {
    let t = fitc_terms(data, z, hp, true)?;
    Ok(Objective { value: t.value, gradient: t.gradient.expect("gradient requested") })
}

/// FITC posterior over the pseudo-outputs, in the shared sparse-state form.
pub fn spgp_posterior(data: &Dataset, z: &DMatrix<f64>, hp: &Hyperparameters) -> Result<SparseState> {
    let t = fitc_terms(data, z, hp, false)?;
    SparseState::from_posterior(z.clone(), hp.clone(), t.posterior)
}

#[derive(Debug, Clone)]
pub struct FitcGp {
    data: Dataset,
    state: SparseState,
}

impl FitcGp {
    /// Jointly optimizes hyperparameters and pseudo-inputs.
    pub fn fit(
        data: Dataset,
        z_init: &DMatrix<f64>,
        hp_init: &Hyperparameters,
        config: &OptimizerConfig,
    ) -> Result<(Self, FitReport)> {
        check_pseudo(z_init, hp_init)?;
        let (dim, m) = (hp_init.dim(), z_init.nrows());
        let start = pack_parameters(hp_init, Some(z_init));
        let free: Vec<usize> = (0..start.len()).collect();
        let (best, report) = maximize(
            |p| {
                let (hp, z) = unpack_parameters(p, dim, m)?;
                spgp_log_marginal_likelihood(&data, &z, &hp)
            },
            &start,
            &free,
            config,
        )?;
        let (hp, z) = unpack_parameters(&best, dim, m)?;
        let state = spgp_posterior(&data, &z, &hp)?;
        Ok((Self { data, state }, report))
    }

    pub fn data(&self) -> &Dataset {
        &self.data
    }

    pub fn state(&self) -> &SparseState {
        &self.state
    }

    pub fn predict(&self, queries: &DMatrix<f64>) -> Result<Prediction> {
        self.state.predict(queries)
    }
}
