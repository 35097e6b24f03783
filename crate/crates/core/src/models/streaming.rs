//! Streaming sparse GP.
//!
//! Each update treats the new batch likelihood exactly and stands in for all
//! earlier data with the ratio `q_old(a) / p(a | θ_old)`, where `a` are the
//! function values at the previous pseudo-inputs. Hyperparameters and
//! pseudo-inputs are re-optimized against the resulting bound, warm-started
//! from the previous state, and the optimal `q(b)` is then available in
//! closed form. Old-state terms always use the hyperparameters stored with
//! that state.

use nalgebra::DMatrix;

use crate::dataset::Dataset;
use crate::error::{GpError, Result};
use crate::kernel::Hyperparameters;
use crate::models::collapsed::{collapsed_bound, OldPosterior};
use crate::models::sparse::{check_pseudo, SparseState};
use crate::models::training::{maximize, FitReport};
use crate::models::{pack_parameters, unpack_parameters, Objective};
use crate::optimizer::OptimizerConfig;

#[derive(Debug, Clone, PartialEq)]
pub struct SsgpConfig {
    pub optimizer: OptimizerConfig,
    pub optimize_hyperparameters: bool,
    pub optimize_pseudo_inputs: bool,
    /// Target pseudo-point count for the next state; `None` keeps the current count.
    pub pseudo_points: Option<usize>,
}

impl Default for SsgpConfig {
    fn default() -> Self {
        Self {
            optimizer: OptimizerConfig::default(),
            optimize_hyperparameters: true,
            optimize_pseudo_inputs: true,
            pseudo_points: None,
        }
    }
}

impl SsgpConfig {
    /// Hyperparameters and pseudo-inputs held fixed; only `q` is updated.
    pub fn frozen() -> Self {
        Self { optimize_hyperparameters: false, optimize_pseudo_inputs: false, ..Self::default() }
    }

    fn free_indices(&self, dim: usize, m: usize) -> Vec<usize> {
        let mut free = Vec::new();
        if self.optimize_hyperparameters {
            free.extend(0..dim + 2);
        }
        if self.optimize_pseudo_inputs {
            free.extend(dim + 2..dim + 2 + m * dim);
        }
        free
    }
}

#[derive(Debug, Clone)]
pub struct SsgpUpdate {
    pub state: SparseState,
    /// Bound value and gradient at the returned hyperparameters and pseudo-inputs.
    pub objective: Objective,
    pub report: FitReport,
}

fn scaled_sq_distance(a: &[f64], b: &[f64], inv_l: &[f64]) -> f64 {
    a.iter().zip(b).zip(inv_l).map(|((x, y), w)| ((x - y) * w).powi(2)).sum()
}

/// Extends `existing` to `target` rows by greedily taking the candidate
/// farthest (in lengthscale-scaled distance) from everything already chosen.
///
/// Candidates that coincide with a chosen point are never taken, so the
/// result can be shorter than `target`. With no existing points the first
/// pick is the candidate farthest from the candidates' centroid.
pub fn select_pseudo_inputs(
    existing: &DMatrix<f64>,
    candidates: &DMatrix<f64>,
    target: usize,
    hp: &Hyperparameters,
) -> DMatrix<f64> {
    let dim = hp.dim();
    let inv_l: Vec<f64> = hp.lengthscales().iter().map(|l| 1.0 / l).collect();
    let row = |m: &DMatrix<f64>, i: usize| -> Vec<f64> { m.row(i).iter().copied().collect() };
    let mut chosen: Vec<Vec<f64>> = (0..existing.nrows()).map(|i| row(existing, i)).collect();
    let cands: Vec<Vec<f64>> = (0..candidates.nrows()).map(|i| row(candidates, i)).collect();

    let mut min_dist: Vec<f64> = if chosen.is_empty() {
        let n = cands.len().max(1) as f64;
        let centroid: Vec<f64> = (0..dim).map(|d| cands.iter().map(|c| c[d]).sum::<f64>() / n).collect();
        // Distances to the centroid only seed the first pick.
        cands.iter().map(|c| scaled_sq_distance(c, &centroid, &inv_l) + 1.0).collect()
    } else {
        cands
            .iter()
            .map(|c| chosen.iter().map(|z| scaled_sq_distance(c, z, &inv_l)).fold(f64::INFINITY, f64::min))
            .collect()
    };

    while chosen.len() < target {
        let best = min_dist
            .iter()
            .enumerate()
            .fold(None, |acc: Option<(usize, f64)>, (i, &d)| match acc {
                Some((_, bd)) if bd >= d => acc,
                _ => Some((i, d)),
            });
        let Some((idx, dist)) = best else { break };
        if !(dist > 1e-20) {
            break;
        }
        let pick = cands[idx].clone();
        for (c, md) in cands.iter().zip(min_dist.iter_mut()) {
            *md = md.min(scaled_sq_distance(c, &pick, &inv_l));
        }
        min_dist[idx] = 0.0;
        chosen.push(pick);
    }
    DMatrix::from_fn(chosen.len(), dim, |i, d| chosen[i][d])
}

/// First batch: the streaming bound has no old posterior and reduces to the
/// batch collapsed bound, optimized jointly from `(hp0, z0)`.
pub fn ssgp_init(
    batch: &Dataset,
    z0: &DMatrix<f64>,
    hp0: &Hyperparameters,
    config: &SsgpConfig,
) -> Result<SsgpUpdate> {
    if batch.is_empty() {
        return Err(GpError::Empty("first streaming batch"));
    }
    check_pseudo(z0, hp0)?;
    run_update(batch, z0, hp0, None, config)
}

/// Streaming bound for a new batch against a previous state, with gradient
/// over the new log hyperparameters and new pseudo-inputs.
pub fn ssgp_elbo(
    state_old: &SparseState,
    batch: &Dataset,
    z_new: &DMatrix<f64>,
    hp_new: &Hyperparameters,
) -> Result<Objective> {
    check_pseudo(z_new, hp_new)?;
    let old = OldPosterior { pseudo_inputs: state_old.pseudo_inputs(), posterior: &state_old.posterior };
    let t = collapsed_bound(batch, z_new, hp_new, Some(old), true)?;
    Ok(Objective { value: t.value, gradient: t.gradient.expect("gradient requested") })
}

/// Absorbs `batch` into `state_old`.
///
/// Pseudo-inputs start from the previous ones; when the target count grows,
/// new batch inputs are appended per [`select_pseudo_inputs`]. Growth per
/// update is limited to the batch size since old data is no longer stored.
pub fn ssgp_update(state_old: &SparseState, batch: &Dataset, config: &SsgpConfig) -> Result<SsgpUpdate> {
    let hp0 = state_old.hp_snapshot().clone();
    let z_old = state_old.pseudo_inputs();
    let target = config.pseudo_points.unwrap_or(z_old.nrows());
    let z0 = if target > z_old.nrows() {
        select_pseudo_inputs(z_old, batch.inputs(), target, &hp0)
    } else {
        z_old.clone()
    };
    run_update(batch, &z0, &hp0, Some(state_old), config)
}

fn run_update(
    batch: &Dataset,
    z0: &DMatrix<f64>,
    hp0: &Hyperparameters,
    old: Option<&SparseState>,
    config: &SsgpConfig,
) -> Result<SsgpUpdate> {
    let (dim, m) = (hp0.dim(), z0.nrows());
    let bound = |hp: &Hyperparameters, z: &DMatrix<f64>, grad: bool| {
        let old = old.map(|s| OldPosterior { pseudo_inputs: s.pseudo_inputs(), posterior: &s.posterior });
        collapsed_bound(batch, z, hp, old, grad)
    };
    let start = pack_parameters(hp0, Some(z0));
    let free = config.free_indices(dim, m);
    let (best, report) = maximize(
        |p| {
            let (hp, z) = unpack_parameters(p, dim, m)?;
            let t = bound(&hp, &z, true)?;
            Ok(Objective { value: t.value, gradient: t.gradient.expect("gradient requested") })
        },
        &start,
        &free,
        &config.optimizer,
    )?;
    let (hp, z) = unpack_parameters(&best, dim, m)?;
    let t = bound(&hp, &z, true)?;
    let objective = Objective { value: t.value, gradient: t.gradient.expect("gradient requested") };
    let state = SparseState::from_posterior(z, hp, t.posterior)?;
    Ok(SsgpUpdate { state, objective, report })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::sparse::{vsgp_elbo, vsgp_optimal_q};
    use crate::models::test_support::*;
    use crate::optimizer::check_gradient;
    use approx::assert_relative_eq;
    use nalgebra::DVector;

    #[test]
    fn prior_state_reduces_to_batch_bound() {
        let mut r = rng(41);
        let data = random_dataset(&mut r, 15);
        let hp = random_hp(&mut r);
        let z = random_inputs(&mut r, 5);
        let prior = SparseState::prior(z.clone(), hp.clone()).unwrap();
        let s = ssgp_elbo(&prior, &data, &z, &hp).unwrap();
        let v = vsgp_elbo(&data, &z, &hp).unwrap();
        assert_relative_eq!(s.value, v.value, epsilon = 1e-6);
    }

    #[test]
    fn empty_batch_is_no_evidence() {
        let mut r = rng(42);
        let data = random_dataset(&mut r, 15);
        let hp = random_hp(&mut r);
        let z = random_inputs(&mut r, 5);
        let st = vsgp_optimal_q(&data, &z, &hp).unwrap();
        let empty = Dataset::empty(2);
        let s = ssgp_elbo(&st, &empty, &z, &hp).unwrap();
        assert!(s.value.abs() < 1e-8, "bound {}", s.value);
        let up = ssgp_update(&st, &empty, &SsgpConfig::frozen()).unwrap();
        assert_relative_eq!(up.state.q_mean().clone(), st.q_mean().clone(), epsilon = 1e-8);
        assert_relative_eq!(up.state.q_cov().clone(), st.q_cov().clone(), epsilon = 1e-8);
    }

    #[test]
    fn two_batches_match_concatenated_bound() {
        let mut r = rng(43);
        let b1 = random_dataset(&mut r, 20);
        let b2 = random_dataset(&mut r, 20);
        let hp = random_hp(&mut r);
        let z = random_inputs(&mut r, 6);
        let first = ssgp_init(&b1, &z, &hp, &SsgpConfig::frozen()).unwrap();
        let second = ssgp_update(&first.state, &b2, &SsgpConfig::frozen()).unwrap();
        let total = vsgp_elbo(&b1.concat(&b2).unwrap(), &z, &hp).unwrap().value;
        assert_relative_eq!(first.objective.value + second.objective.value, total, epsilon = 1e-5);
    }

    #[test]
    fn first_batch_equals_vsgp() {
        let mut r = rng(44);
        let b = random_dataset(&mut r, 25);
        let hp = random_hp(&mut r);
        let z = random_inputs(&mut r, 5);
        let cfg = SsgpConfig { optimizer: OptimizerConfig { max_iterations: 30, ..Default::default() }, ..Default::default() };
        let up = ssgp_init(&b, &z, &hp, &cfg).unwrap();
        let (vs, _) = crate::models::VariationalGp::fit(b.clone(), &z, &hp, &cfg.optimizer).unwrap();
        let q = random_inputs(&mut r, 10);
        assert_eq!(up.state.predict(&q).unwrap(), vs.predict(&q).unwrap());
    }

    #[test]
    fn deterministic() {
        let mut r = rng(45);
        let b1 = random_dataset(&mut r, 20);
        let b2 = random_dataset(&mut r, 20);
        let hp = random_hp(&mut r);
        let z = random_inputs(&mut r, 4);
        let cfg = SsgpConfig { optimizer: OptimizerConfig { max_iterations: 20, ..Default::default() }, ..Default::default() };
        let run = || {
            let s = ssgp_init(&b1, &z, &hp, &cfg).unwrap().state;
            ssgp_update(&s, &b2, &cfg).unwrap().state
        };
        let (a, b) = (run(), run());
        assert_eq!(a.q_mean(), b.q_mean());
        assert_eq!(a.pseudo_inputs(), b.pseudo_inputs());
        assert_eq!(a.hp_snapshot(), b.hp_snapshot());
    }

    #[test]
    fn empty_first_batch_is_error() {
        let hp = Hyperparameters::new(1.0, &[1.0, 1.0], 0.1).unwrap();
        let z = DMatrix::from_row_slice(1, 2, &[0.5, 0.5]);
        assert!(ssgp_init(&Dataset::empty(2), &z, &hp, &SsgpConfig::default()).is_err());
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut r = rng(46);
        for _ in 0..10 {
            let b1 = random_dataset(&mut r, 15);
            let b2 = random_dataset(&mut r, 15);
            let hp_old = random_hp(&mut r);
            let old = vsgp_optimal_q(&b1, &random_inputs(&mut r, 4), &hp_old).unwrap();
            let hp = random_hp(&mut r);
            let z = random_inputs(&mut r, 5);
            let obj = |p: &DVector<f64>| {
                let (hp, z) = unpack_parameters(p, 2, 5).unwrap();
                let o = ssgp_elbo(&old, &b2, &z, &hp).unwrap();
                (o.value, o.gradient)
            };
            let err = check_gradient(obj, &pack_parameters(&hp, Some(&z)), 1e-5);
            assert!(err < 1e-3, "relative gradient error {err}");
        }
    }

    #[test]
    fn growing_pseudo_set() {
        let mut r = rng(47);
        let b1 = random_dataset(&mut r, 20);
        let b2 = random_dataset(&mut r, 20);
        let hp = random_hp(&mut r);
        let z = random_inputs(&mut r, 4);
        let s = ssgp_init(&b1, &z, &hp, &SsgpConfig::frozen()).unwrap().state;
        let cfg = SsgpConfig { pseudo_points: Some(9), ..SsgpConfig::frozen() };
        let up = ssgp_update(&s, &b2, &cfg).unwrap();
        assert_eq!(up.state.num_pseudo(), 9);
        assert_eq!(up.state.pseudo_inputs().rows(0, 4).into_owned(), z);
        assert_eq!(up.state.q_cov().shape(), (9, 9));
        let p = up.state.predict(&random_inputs(&mut r, 50)).unwrap();
        assert!(p.variance_f.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn selection_prefers_far_points_and_skips_duplicates() {
        let hp = Hyperparameters::new(1.0, &[1.0, 1.0], 0.1).unwrap();
        let existing = DMatrix::from_row_slice(1, 2, &[0.0, 0.0]);
        let cands = DMatrix::from_row_slice(4, 2, &[0.1, 0.0, 1.0, 1.0, 0.0, 0.0, 0.5, 0.5]);
        let z = select_pseudo_inputs(&existing, &cands, 3, &hp);
        assert_eq!(z.nrows(), 3);
        assert_eq!(z.row(1).iter().copied().collect::<Vec<_>>(), vec![1.0, 1.0]);
        assert_eq!(z.row(2).iter().copied().collect::<Vec<_>>(), vec![0.5, 0.5]);
        // asking for more than distinct candidates allow
        let z = select_pseudo_inputs(&existing, &cands, 10, &hp);
        assert_eq!(z.nrows(), 4);
        let fresh = select_pseudo_inputs(&DMatrix::zeros(0, 2), &cands, 2, &hp);
        assert_eq!(fresh.row(0).iter().copied().collect::<Vec<_>>(), vec![1.0, 1.0]);
    }
}
