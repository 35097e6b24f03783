//! Replays a lawnmower sampling stream through a set of GP models and
//! records per-batch accuracy, timing and memory.

pub mod config;
pub mod results;

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use thiserror::Error;

pub use config::{pseudo_count, ConfigError, ExperimentConfig, FieldSource, LogBase, ModelSpec, PseudoSchedule};
pub use results::{emit_results, load_results, strip_timing, ResultTable, ResultsError, CSV_HEADER};

use crate::dataset::Dataset;
use crate::environment::{lawnmower_plan, load_grid_csv, observe_plan, sample_gp_field, FieldError, FieldGrid};
use crate::error::GpError;
use crate::kernel::Hyperparameters;
use crate::metrics::{nlpd, onboard_count, rmse, BatchRecord, Stopwatch};
use crate::models::{
    select_pseudo_inputs, ssgp_init, ssgp_update, ExactGp, FitcGp, Prediction, SparseState, SsgpConfig,
    VariationalGp, WindowedGp,
};
use crate::optimizer::OptimizerConfig;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(transparent)]
    Results(#[from] ResultsError),
    #[error(transparent)]
    Numeric(#[from] GpError),
    #[error("{0}")]
    Invalid(String),
}

/// Field, observation stream and noisy test targets for one configuration.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub field: FieldGrid,
    pub batches: Vec<Dataset>,
    pub test_inputs: DMatrix<f64>,
    pub test_truth: DVector<f64>,
    pub test_targets: DVector<f64>,
}

impl Scenario {
    pub fn build(config: &ExperimentConfig) -> Result<Self, HarnessError> {
        config.validate()?;
        let field = match &config.field {
            FieldSource::Synthetic { width, height, hp } => sample_gp_field(*width, *height, hp, config.field_seed())?,
            FieldSource::Csv(path) => load_grid_csv(path)?,
        };
        let plan = lawnmower_plan(&field, config.plan, config.noise_variance)?;
        let mut batches = observe_plan(&field, &plan, config.observation_seed())?;
        if let Some(limit) = config.max_batches {
            batches.truncate(limit);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.test_noise_seed());
        let sd = config.noise_variance.sqrt();
        let test_truth = field.truth();
        let test_targets = test_truth.map(|f| {
            let e: f64 = StandardNormal.sample(&mut rng);
            f + sd * e
        });
        Ok(Self { test_inputs: field.normalized_inputs(), field, batches, test_truth, test_targets })
    }
}

enum State {
    Empty,
    Exact(ExactGp),
    Window(WindowedGp),
    Variational(VariationalGp),
    Fitc(FitcGp),
    Streaming(SparseState),
}

struct Runner<'a> {
    spec: &'a ModelSpec,
    optimizer: &'a OptimizerConfig,
    init: &'a Hyperparameters,
    state: State,
}

fn grow_pseudo(existing: Option<&DMatrix<f64>>, candidates: &DMatrix<f64>, target: usize, hp: &Hyperparameters) -> DMatrix<f64> {
    let existing = existing.cloned().unwrap_or_else(|| DMatrix::zeros(0, hp.dim()));
    if existing.nrows() >= target {
        existing
    } else {
        select_pseudo_inputs(&existing, candidates, target, hp)
    }
}

impl<'a> Runner<'a> {
    fn hyperparameters(&self) -> &Hyperparameters {
        match &self.state {
            State::Empty => self.init,
            State::Exact(gp) => gp.hyperparameters(),
            State::Window(gp) => gp.hyperparameters(),
            State::Variational(gp) => gp.state().hp_snapshot(),
            State::Fitc(gp) => gp.state().hp_snapshot(),
            State::Streaming(s) => s.hp_snapshot(),
        }
    }

    fn retained(&self) -> Option<&Dataset> {
        match &self.state {
            State::Exact(gp) => Some(gp.data()),
            State::Window(gp) => Some(gp.data()),
            State::Variational(gp) => Some(gp.data()),
            State::Fitc(gp) => Some(gp.data()),
            State::Empty | State::Streaming(_) => None,
        }
    }

    fn pseudo_inputs(&self) -> Option<&DMatrix<f64>> {
        match &self.state {
            State::Variational(gp) => Some(gp.state().pseudo_inputs()),
            State::Fitc(gp) => Some(gp.state().pseudo_inputs()),
            State::Streaming(s) => Some(s.pseudo_inputs()),
            _ => None,
        }
    }

    fn num_pseudo(&self) -> usize {
        self.pseudo_inputs().map_or(0, |z| z.nrows())
    }

    fn accumulated(&self, batch: &Dataset) -> Result<Dataset, GpError> {
        match self.retained() {
            Some(d) => d.concat(batch),
            None => Ok(batch.clone()),
        }
    }

    /// Next state after absorbing `batch`; `seen` includes the batch.
    fn update(&self, batch: &Dataset, seen: usize) -> Result<State, GpError> {
        let hp = self.hyperparameters();
        let opt = self.optimizer;
        Ok(match self.spec {
            ModelSpec::Gpr => State::Exact(ExactGp::fit(self.accumulated(batch)?, hp, opt)?.0),
            ModelSpec::GprWindow(w) => {
                let current = match &self.state {
                    State::Window(gp) => gp.clone(),
                    _ => WindowedGp::new(*w, batch.dim(), hp.clone())?,
                };
                let next = crate::models::gpr_window_update(&current, batch)?;
                State::Window(next.refit(opt)?.0)
            }
            ModelSpec::Vsgp(m) => {
                let data = self.accumulated(batch)?;
                let z = grow_pseudo(self.pseudo_inputs(), data.inputs(), *m, hp);
                State::Variational(VariationalGp::fit(data, &z, hp, opt)?.0)
            }
            ModelSpec::Spgp(m) => {
                let data = self.accumulated(batch)?;
                let z = grow_pseudo(self.pseudo_inputs(), data.inputs(), *m, hp);
                State::Fitc(FitcGp::fit(data, &z, hp, opt)?.0)
            }
            ModelSpec::Ssgp(schedule) => {
                let target = schedule.count(seen);
                let cfg = SsgpConfig { optimizer: opt.clone(), pseudo_points: Some(target), ..SsgpConfig::default() };
                match &self.state {
                    State::Streaming(s) => State::Streaming(ssgp_update(s, batch, &cfg)?.state),
                    _ => {
                        let z0 = grow_pseudo(None, batch.inputs(), target, hp);
                        State::Streaming(ssgp_init(batch, &z0, hp, &cfg)?.state)
                    }
                }
            }
        })
    }

    fn predict(&self, queries: &DMatrix<f64>) -> Result<Prediction, GpError> {
        match &self.state {
            State::Empty => Err(GpError::Empty("model has not seen any data")),
            State::Exact(gp) => gp.predict(queries),
            State::Window(gp) => gp.predict(queries),
            State::Variational(gp) => gp.predict(queries),
            State::Fitc(gp) => gp.predict(queries),
            State::Streaming(s) => s.predict(queries),
        }
    }
}

fn run_model(spec: &ModelSpec, config: &ExperimentConfig, scenario: &Scenario) -> Vec<BatchRecord> {
    let mut runner = Runner { spec, optimizer: &config.optimizer, init: &config.init_hyperparameters, state: State::Empty };
    let label = spec.label();
    let mut seen = 0;
    let mut rows = Vec::with_capacity(scenario.batches.len());
    for (b, batch) in scenario.batches.iter().enumerate() {
        seen += batch.len();
        let clock = Stopwatch::start();
        let updated = runner.update(batch, seen);
        let train_seconds = clock.seconds();
        let mut failed = false;
        match updated {
            Ok(state) => runner.state = state,
            Err(_) => failed = true,
        }
        let clock = Stopwatch::start();
        let prediction = runner.predict(&scenario.test_inputs);
        let predict_seconds = clock.seconds();
        let (r, n) = match prediction {
            Ok(p) => match (rmse(&scenario.test_truth, &p.mean), nlpd(&scenario.test_targets, &p)) {
                (Ok(r), Ok(n)) => (r, n),
                _ => {
                    failed = true;
                    (f64::NAN, f64::NAN)
                }
            },
            Err(_) => {
                failed = true;
                (f64::NAN, f64::NAN)
            }
        };
        let hp = runner.hyperparameters();
        let m = runner.num_pseudo();
        let onboard = match spec {
            ModelSpec::Ssgp(_) => onboard_count(spec.kind(), seen, batch.len(), m),
            _ => onboard_count(spec.kind(), runner.retained().map_or(0, Dataset::len), batch.len(), m),
        };
        rows.push(BatchRecord {
            model: label.clone(),
            batch_index: b,
            cumulative_n: seen,
            m_pseudo: m,
            rmse: r,
            nlpd: n,
            train_seconds,
            predict_seconds,
            onboard_points: onboard,
            hyperparameters: [hp.signal_variance(), hp.lengthscale(0), hp.lengthscale(1), hp.noise_variance()],
            failed,
        });
    }
    rows
}

fn metadata(config: &ExperimentConfig) -> BTreeMap<String, String> {
    let mut meta = BTreeMap::new();
    meta.insert("version".into(), env!("CARGO_PKG_VERSION").into());
    meta.insert("field_seed".into(), config.field_seed().to_string());
    meta.insert("observation_seed".into(), config.observation_seed().to_string());
    meta.insert("test_noise_seed".into(), config.test_noise_seed().to_string());
    meta.insert("config".into(), config.to_text());
    meta
}

/// Runs every configured model over the batch stream of a prepared scenario.
pub fn run_scenario(config: &ExperimentConfig, scenario: &Scenario) -> ResultTable {
    let per_model: Vec<Vec<BatchRecord>> = config.models.par_iter().map(|m| run_model(m, config, scenario)).collect();
    let batches = scenario.batches.len();
    let mut rows = Vec::with_capacity(batches * per_model.len());
    for b in 0..batches {
        for model_rows in &per_model {
            rows.push(model_rows[b].clone());
        }
    }
    ResultTable { rows, metadata: metadata(config) }
}

pub fn run_experiment(config: &ExperimentConfig) -> Result<ResultTable, HarnessError> {
    let scenario = Scenario::build(config)?;
    Ok(run_scenario(config, &scenario))
}

/// SSGP runs under a growing pseudo-point schedule, one per `alpha`, plus a
/// full GPR reference on the same stream.
#[derive(Debug, Clone)]
pub struct ScalingStudy {
    pub reference: ResultTable,
    pub runs: Vec<(f64, ResultTable)>,
}

pub fn run_scaling_study(config: &ExperimentConfig, alphas: &[f64]) -> Result<ScalingStudy, HarnessError> {
    let base = match config.models.iter().find_map(|m| match m {
        ModelSpec::Ssgp(PseudoSchedule::Growing { base, .. }) => Some(Some(*base)),
        ModelSpec::Ssgp(_) => Some(None),
        _ => None,
    }) {
        Some(b) => b.unwrap_or(LogBase::Natural),
        None => return Err(HarnessError::Invalid("scaling study needs ssgp in the model list".into())),
    };
    if alphas.is_empty() {
        return Err(HarnessError::Invalid("no alpha values given".into()));
    }
    let scenario = Scenario::build(config)?;
    let mut configs = vec![ExperimentConfig { models: vec![ModelSpec::Gpr], ..config.clone() }];
    for &alpha in alphas {
        let models = vec![ModelSpec::Ssgp(PseudoSchedule::Growing { alpha, base })];
        let c = ExperimentConfig { models, ..config.clone() };
        c.validate()?;
        configs.push(c);
    }
    let mut tables: Vec<ResultTable> = configs.par_iter().map(|c| run_scenario(c, &scenario)).collect();
    let reference = tables.remove(0);
    Ok(ScalingStudy { reference, runs: alphas.iter().copied().zip(tables).collect() })
}
