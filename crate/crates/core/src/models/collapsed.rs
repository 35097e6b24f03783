//! Collapsed variational bound shared by the batch and streaming sparse models.
//!
//! The posterior over pseudo-outputs `u = f(Z)` is kept in whitened form. With
//! `K_zz = L Lᵀ`, a Gaussian `q(u) = N(m, S)` is stored as a PSD matrix `C` and
//! a vector `r` such that
//!
//! ```text
//! S⁻¹   = L⁻ᵀ (I + C) L⁻¹
//! S⁻¹ m = L⁻ᵀ r
//! ```
//!
//! `C` is the evidence the data contributed, so `C = 0, r = 0` is the prior.
//! Keeping it explicit (rather than forming `S⁻¹ − K_zz⁻¹`) means the
//! old-posterior correction used by streaming updates is PSD by construction.
//!
//! For a batch `(X, y)` of size `N` with noise `s`, new pseudo-inputs `Z_b`
//! and an optional previous posterior `(C_a, r_a)` over `a = f(Z_a)`:
//!
//! ```text
//! A = L⁻¹ K_bf            V = L_a⁻¹ K_ab L⁻ᵀ
//! B = I + A Aᵀ / s + Vᵀ C_a V
//! r = A y / s + Vᵀ r_a    c = LB⁻¹ r
//!
//! F = −N/2 log(2πs) − yᵀy / 2s − (N σ²_f − ‖A‖²_F) / 2s
//!   − ½ tr(C_a L_a⁻¹ K_aa L_a⁻ᵀ) + ½ tr(Vᵀ C_a V) + const(q_old)
//!   − ½ log|B| + ½ ‖c‖²
//! ```
//!
//! `L_a` and `const(q_old)` come from the old state and its hyperparameters;
//! `K_aa` and `K_ab` use the new ones.
//!
//! Without a previous posterior this reduces to the batch collapsed bound.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};

use crate::dataset::Dataset;
use crate::error::Result;
use crate::kernel::{accumulate_adjoint, kernel_matrix, Hyperparameters};
use crate::linalg::{robust_cholesky, symmetrize, CholeskyFactor};
use crate::models::GradientBuffer;

#[derive(Debug, Clone)]
pub(crate) struct WhitenedPosterior {
    /// `L` with `L Lᵀ = K_zz` (plus any jitter).
    pub prior_chol: CholeskyFactor,
    /// `C`, PSD.
    pub precision: DMatrix<f64>,
    /// `r`.
    pub shift: DVector<f64>,
    /// Factor of `I + C`.
    pub posterior_chol: CholeskyFactor,
    /// `LB⁻¹ r`.
    pub projected: DVector<f64>,
}

impl WhitenedPosterior {
    pub fn new(prior_chol: CholeskyFactor, precision: DMatrix<f64>, shift: DVector<f64>) -> Result<Self> {
        let m = precision.nrows();
        let b = DMatrix::identity(m, m) + &precision;
        let posterior_chol = robust_cholesky(&b)?;
        let projected = posterior_chol.solve_lower_vec(&shift);
        Ok(Self { prior_chol, precision, shift, posterior_chol, projected })
    }

    /// `L⁻¹ m`
    pub fn whitened_mean(&self) -> DVector<f64> {
        self.posterior_chol.solve_upper_vec(&self.projected)
    }

    pub fn mean(&self) -> DVector<f64> {
        self.prior_chol.l() * self.whitened_mean()
    }

    /// `S = L (I + C)⁻¹ Lᵀ`
    pub fn covariance(&self) -> DMatrix<f64> {
        let t = self.posterior_chol.solve_lower(&self.prior_chol.l().transpose());
        t.tr_mul(&t)
    }

    /// `log q(a) − log p(a)` up to the quadratic part in `a`:
    /// `−½ mᵀ S⁻¹ m − ½ log|S| + ½ log|K_zz|`.
    pub fn log_ratio_constant(&self) -> f64 {
        -0.5 * self.projected.norm_squared() + 0.5 * self.posterior_chol.log_det()
    }
}

pub(crate) struct OldPosterior<'a> {
    pub pseudo_inputs: &'a DMatrix<f64>,
    pub posterior: &'a WhitenedPosterior,
}

pub(crate) struct BoundTerms {
    pub value: f64,
    pub gradient: Option<DVector<f64>>,
    pub posterior: WhitenedPosterior,
}

pub(crate) fn collapsed_bound(
    data: &Dataset,
    z: &DMatrix<f64>,
    hp: &Hyperparameters,
    old: Option<OldPosterior<'_>>,
    with_gradient: bool,
) -> Result<BoundTerms> {
    let m = z.nrows();
    let n = data.len();
    let dim = hp.dim();
    let s = hp.noise_variance();
    let sf2 = hp.signal_variance();
    let y = data.targets();

    let kbb = kernel_matrix(z, z, hp)?;
    let chol = robust_cholesky(&kbb)?;
    let kbf = kernel_matrix(z, data.inputs(), hp)?;
    let a = chol.solve_lower(&kbf);
    let aat = &a * a.transpose();
    let a_frob = aat.trace();

    let mut u = &aat / s;
    let mut r = (&a * y) / s;

    // Old-posterior pieces, all evaluated under the new hyperparameters
    // except the stored whitened evidence.
    struct OldTerms<'b> {
        z: &'b DMatrix<f64>,
        post: &'b WhitenedPosterior,
        kab: DMatrix<f64>,
        vt: DMatrix<f64>,
        cv: DMatrix<f64>,
        kaa: DMatrix<f64>,
    }
    let mut old_terms = None;
    let mut old_value = 0.0;
    if let Some(OldPosterior { pseudo_inputs: za, posterior: post }) = old {
        let la = &post.prior_chol;
        let ca = &post.precision;
        let kab = kernel_matrix(za, z, hp)?;
        let t1 = la.solve_lower(&kab);
        let vt = chol.solve_lower(&t1.transpose());
        let cv = ca * vt.transpose();
        let u_old = symmetrize(&(&vt * &cv));
        let kaa = kernel_matrix(za, za, hp)?;
        let x = la.solve_lower(&kaa);
        let paa = la.solve_lower(&x.transpose());
        let tr_phi_kaa = ca.component_mul(&paa).sum();
        old_value = -0.5 * tr_phi_kaa + 0.5 * u_old.trace() + post.log_ratio_constant();
        u += &u_old;
        r += &vt * &post.shift;
        old_terms = Some(OldTerms { z: za, post, kab, vt, cv, kaa });
    }

    let posterior = WhitenedPosterior::new(chol, u, r)?;
    let lb = &posterior.posterior_chol;
    let c = &posterior.projected;

    let value = -0.5 * n as f64 * (2.0 * PI * s).ln() - 0.5 * y.norm_squared() / s
        - 0.5 * (n as f64 * sf2 - a_frob) / s
        + old_value
        - 0.5 * lb.log_det()
        + 0.5 * c.norm_squared();

    if !with_gradient {
        return Ok(BoundTerms { value, gradient: None, posterior });
    }

    let chol = &posterior.prior_chol;
    let nu = lb.solve_upper_vec(c);
    let mu = chol.solve_upper_vec(&nu);
    let binv = lb.inverse();
    let i_minus_binv = DMatrix::identity(m, m) - &binv;

    let mut grad = GradientBuffer::new(dim, m);

    // dF/dK_bb
    let inner = &i_minus_binv - &posterior.precision;
    let x = chol.solve_upper(&inner);
    let mut g_kbb = chol.solve_upper(&x.transpose()).transpose() * 0.5;
    g_kbb.ger(-0.5, &mu, &mu, 1.0);
    accumulate_adjoint(z, z, hp, &kbb, &g_kbb, &mut grad.hp, Some(&mut grad.z), None);
    // the second argument is also z
    let mut gz2 = DMatrix::zeros(m, dim);
    let mut scratch = vec![0.0; dim + 2];
    accumulate_adjoint(z, z, hp, &kbb, &g_kbb, &mut scratch, None, Some(&mut gz2));
    grad.z += gz2;

    // dF/dK_bf
    if n > 0 {
        let resid = y - a.tr_mul(&nu);
        let mut g_kbf = chol.solve_upper(&(&i_minus_binv * &a));
        g_kbf.ger(1.0, &mu, &resid, 1.0);
        g_kbf /= s;
        accumulate_adjoint(z, data.inputs(), hp, &kbf, &g_kbf, &mut grad.hp, Some(&mut grad.z), None);

        // diag(K_ff) and the noise
        grad.hp[0] += -0.5 * n as f64 * sf2 / s;
        let tr_binv_aat = binv.component_mul(&aat).sum();
        let d_s = -0.5 * n as f64 / s
            + 0.5 * (resid.norm_squared() + n as f64 * sf2 - a_frob + tr_binv_aat) / (s * s);
        grad.hp[dim + 1] += s * d_s;
    }

    if let Some(o) = old_terms {
        let la = &o.post.prior_chol;
        let ca = &o.post.precision;
        // dF/dK_ba
        let mut x = chol.solve_upper(&(&i_minus_binv * (&o.vt * ca)));
        let w = &o.post.shift - &o.cv * &nu;
        x.ger(1.0, &mu, &w, 1.0);
        let g_kba = la.solve_upper(&x.transpose()).transpose();
        accumulate_adjoint(z, o.z, hp, &o.kab.transpose(), &g_kba, &mut grad.hp, Some(&mut grad.z), None);
        // dF/dK_aa = −½ Φ
        let x = la.solve_upper(ca);
        let g_kaa = la.solve_upper(&x.transpose()).transpose() * -0.5;
        accumulate_adjoint(o.z, o.z, hp, &o.kaa, &g_kaa, &mut grad.hp, None, None);
    }

    Ok(BoundTerms { value, gradient: Some(grad.into_vector(true)), posterior })
}
