//! Variational sparse GP with a collapsed bound, and the sparse posterior
//! state shared with the FITC and streaming models.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::dataset::Dataset;
use crate::error::{GpError, Result};
use crate::kernel::{kernel_matrix, Hyperparameters};
use crate::linalg::{robust_cholesky, symmetrize};
use crate::models::collapsed::{collapsed_bound, WhitenedPosterior};
use crate::models::training::{maximize, FitReport};
use crate::models::{pack_parameters, unpack_parameters, Objective, Prediction};
use crate::optimizer::OptimizerConfig;

/// Eigenvalues of the old-posterior correction below this are treated as
/// numerical indefiniteness.
pub const CORRECTION_EIGEN_FLOOR: f64 = -1e-8;
/// Value substituted for clamped eigenvalues.
pub const CORRECTION_EIGEN_CLAMP: f64 = 1e-8;

/// Pseudo-inputs `Z`, a Gaussian `q(u) = N(m, S)` over `u = f(Z)`, and the
/// hyperparameters it was built under.
#[derive(Debug, Clone)]
pub struct SparseState {
    pseudo_inputs: DMatrix<f64>,
    q_mean: DVector<f64>,
    q_cov: DMatrix<f64>,
    hp_snapshot: Hyperparameters,
    prior_cached: DMatrix<f64>,
    pub(crate) posterior: WhitenedPosterior,
}

impl SparseState {
    pub(crate) fn from_posterior(z: DMatrix<f64>, hp: Hyperparameters, posterior: WhitenedPosterior) -> Result<Self> {
        let prior_cached = kernel_matrix(&z, &z, &hp)?;
        Ok(Self {
            q_mean: posterior.mean(),
            q_cov: symmetrize(&posterior.covariance()),
            pseudo_inputs: z,
            hp_snapshot: hp,
            prior_cached,
            posterior,
        })
    }

    /// `q(u)` equal to the prior `N(0, K_zz)`.
    pub fn prior(z: DMatrix<f64>, hp: Hyperparameters) -> Result<Self> {
        let m = z.nrows();
        let chol = robust_cholesky(&kernel_matrix(&z, &z, &hp)?)?;
        let post = WhitenedPosterior::new(chol, DMatrix::zeros(m, m), DVector::zeros(m))?;
        Self::from_posterior(z, hp, post)
    }

    /// Builds a state from explicit moments.
    ///
    /// The data-evidence part `S⁻¹ − K_zz⁻¹` is recovered in whitened form;
    /// eigenvalues below `-1e-8` (an `S` wider than the prior in some
    /// direction) are clamped to `1e-8` and remaining tiny negatives to zero.
    pub fn from_moments(
        z: DMatrix<f64>,
        q_mean: DVector<f64>,
        q_cov: DMatrix<f64>,
        hp: Hyperparameters,
    ) -> Result<Self> {
        let m = z.nrows();
        if q_mean.len() != m || q_cov.shape() != (m, m) {
            return Err(GpError::DimensionMismatch { context: "sparse state moments", expected: m, found: q_mean.len() });
        }
        let chol = robust_cholesky(&kernel_matrix(&z, &z, &hp)?)?;
        let s_chol = robust_cholesky(&symmetrize(&q_cov))?;
        let t = s_chol.solve_lower(chol.l());
        let evidence = symmetrize(&(t.tr_mul(&t) - DMatrix::identity(m, m)));
        let eig = SymmetricEigen::new(evidence);
        let clamped = eig.eigenvalues.map(|v| {
            if v < CORRECTION_EIGEN_FLOOR {
                CORRECTION_EIGEN_CLAMP
            } else {
                v.max(0.0)
            }
        });
        let precision = symmetrize(
            &(&eig.eigenvectors * DMatrix::from_diagonal(&clamped) * eig.eigenvectors.transpose()),
        );
        let shift = t.tr_mul(&s_chol.solve_lower_vec(&q_mean));
        let posterior = WhitenedPosterior::new(chol, precision, shift)?;
        let prior_cached = kernel_matrix(&z, &z, &hp)?;
        Ok(Self { pseudo_inputs: z, q_mean, q_cov, hp_snapshot: hp, prior_cached, posterior })
    }

    pub fn pseudo_inputs(&self) -> &DMatrix<f64> {
        &self.pseudo_inputs
    }

    pub fn q_mean(&self) -> &DVector<f64> {
        &self.q_mean
    }

    pub fn q_cov(&self) -> &DMatrix<f64> {
        &self.q_cov
    }

    pub fn hp_snapshot(&self) -> &Hyperparameters {
        &self.hp_snapshot
    }

    pub fn prior_cached(&self) -> &DMatrix<f64> {
        &self.prior_cached
    }

    pub fn num_pseudo(&self) -> usize {
        self.pseudo_inputs.nrows()
    }

    /// Predicts under the state's own hyperparameters.
    pub fn predict(&self, queries: &DMatrix<f64>) -> Result<Prediction> {
        sparse_predict(self, &self.hp_snapshot, queries)
    }
}

fn same_kernel(a: &Hyperparameters, b: &Hyperparameters) -> bool {
    a.log_signal_variance == b.log_signal_variance && a.log_lengthscales == b.log_lengthscales
}

/// Predictive marginals through `q(f) = p(f | u) q(u)`:
///
/// ```text
/// mean  = K_qz K_zz⁻¹ m
/// var_f = k_qq − K_qz K_zz⁻¹ K_zq + K_qz K_zz⁻¹ S K_zz⁻¹ K_zq
/// ```
pub fn sparse_predict(state: &SparseState, hp: &Hyperparameters, queries: &DMatrix<f64>) -> Result<Prediction> {
    let z = &state.pseudo_inputs;
    let kzq = kernel_matrix(z, queries, hp)?;
    let sf2 = hp.signal_variance();
    let (mean, var) = if same_kernel(hp, &state.hp_snapshot) {
        let post = &state.posterior;
        let w = post.prior_chol.solve_lower(&kzq);
        let mean = w.tr_mul(&post.whitened_mean());
        let v = post.posterior_chol.solve_lower(&w);
        let var = DVector::from_fn(queries.nrows(), |j, _| {
            sf2 - w.column(j).norm_squared() + v.column(j).norm_squared()
        });
        (mean, var)
    } else {
        let chol = robust_cholesky(&kernel_matrix(z, z, hp)?)?;
        let s_chol = robust_cholesky(&state.q_cov)?;
        let w = chol.solve_lower(&kzq);
        let mean = w.tr_mul(&chol.solve_lower_vec(&state.q_mean));
        let v = s_chol.l().tr_mul(&chol.solve_upper(&w));
        let var = DVector::from_fn(queries.nrows(), |j, _| {
            sf2 - w.column(j).norm_squared() + v.column(j).norm_squared()
        });
        (mean, var)
    };
    Ok(Prediction::new(mean, var, hp.noise_variance()))
}

/// Collapsed variational lower bound on the log marginal likelihood:
/// `log N(y; 0, Q_ff + sn2 I) − tr(K_ff − Q_ff) / (2 sn2)`, with gradient over
/// log hyperparameters and pseudo-input coordinates.
pub fn vsgp_elbo(data: &Dataset, z: &DMatrix<f64>, hp: &Hyperparameters) -> Result<Objective> {
    check_pseudo(z, hp)?;
    let terms = collapsed_bound(data, z, hp, None, true)?;
    Ok(Objective { value: terms.value, gradient: terms.gradient.expect("gradient requested") })
}

/// The `q(u)` maximizing the collapsed bound.
pub fn vsgp_optimal_q(data: &Dataset, z: &DMatrix<f64>, hp: &Hyperparameters) -> Result<SparseState> {
    check_pseudo(z, hp)?;
    let terms = collapsed_bound(data, z, hp, None, false)?;
    SparseState::from_posterior(z.clone(), hp.clone(), terms.posterior)
}

pub(crate) fn check_pseudo(z: &DMatrix<f64>, hp: &Hyperparameters) -> Result<()> {
    if z.nrows() == 0 {
        return Err(GpError::Empty("sparse models need at least one pseudo-input"));
    }
    if z.ncols() != hp.dim() {
        return Err(GpError::DimensionMismatch { context: "pseudo-input columns", expected: hp.dim(), found: z.ncols() });
    }
    Ok(())
}

/// Variational sparse GP refit on all retained data.
#[derive(Debug, Clone)]
pub struct VariationalGp {
    data: Dataset,
    state: SparseState,
}

impl VariationalGp {
    /// Jointly optimizes hyperparameters and pseudo-inputs, then computes the optimal `q(u)`.
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
                vsgp_elbo(&data, &z, &hp)
            },
            &start,
            &free,
            config,
        )?;
        let (hp, z) = unpack_parameters(&best, dim, m)?;
        let state = vsgp_optimal_q(&data, &z, &hp)?;
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
