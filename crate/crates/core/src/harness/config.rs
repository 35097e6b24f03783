//! Experiment configuration and its flat `key = value` file format.
//!
//! ```text
//! # synthetic 100x100 field, all five models
//! field = synthetic
//! field_size = 100, 100
//! field_lengthscales = 0.3, 0.7
//! models = gpr, gpr500, vsgp, spgp, ssgp
//! ssgp_alpha = 2
//! ```
//!
//! Blank lines and `#` comments are ignored. Unknown keys are errors.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use thiserror::Error;

use crate::environment::LawnmowerConfig;
use crate::kernel::Hyperparameters;
use crate::metrics::ModelKind;
use crate::optimizer::OptimizerConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("unknown key `{key}` on line {line}")]
    UnknownKey { line: usize, key: String },
    #[error("invalid value for `{key}`: {message}")]
    Value { key: String, message: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

/// Base of the logarithm in the pseudo-point schedule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LogBase {
    Natural,
    Two,
    Ten,
}

impl LogBase {
    pub fn log(&self, x: f64) -> f64 {
        match self {
            LogBase::Natural => x.ln(),
            LogBase::Two => x.log2(),
            LogBase::Ten => x.log10(),
        }
    }
}

impl fmt::Display for LogBase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LogBase::Natural => "e",
            LogBase::Two => "2",
            LogBase::Ten => "10",
        })
    }
}

impl FromStr for LogBase {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "e" | "ln" | "natural" => Ok(LogBase::Natural),
            "2" => Ok(LogBase::Two),
            "10" => Ok(LogBase::Ten),
            _ => Err(format!("expected e, 2 or 10, got {s:?}")),
        }
    }
}

/// How many pseudo-points a sparse model carries.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PseudoSchedule {
    Fixed(usize),
    /// `M = ceil(alpha * log(N)^2 + 1)` with `N` the samples seen so far.
    Growing { alpha: f64, base: LogBase },
}

impl PseudoSchedule {
    pub fn count(&self, samples_seen: usize) -> usize {
        match *self {
            PseudoSchedule::Fixed(m) => m,
            PseudoSchedule::Growing { alpha, base } => pseudo_count(alpha, samples_seen, base),
        }
    }
}

pub fn pseudo_count(alpha: f64, samples_seen: usize, base: LogBase) -> usize {
    if samples_seen == 0 {
        return 1;
    }
    let l = base.log(samples_seen as f64);
    (alpha * l * l + 1.0).ceil() as usize
}

#[derive(Debug, Clone, PartialEq)]
pub enum ModelSpec {
    Gpr,
    GprWindow(usize),
    Vsgp(usize),
    Spgp(usize),
    Ssgp(PseudoSchedule),
}

impl ModelSpec {
    pub fn kind(&self) -> ModelKind {
        match self {
            ModelSpec::Gpr => ModelKind::Gpr,
            ModelSpec::GprWindow(w) => ModelKind::GprWindow(*w),
            ModelSpec::Vsgp(_) => ModelKind::Vsgp,
            ModelSpec::Spgp(_) => ModelKind::Spgp,
            ModelSpec::Ssgp(_) => ModelKind::Ssgp,
        }
    }

    pub fn label(&self) -> String {
        self.kind().label()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum FieldSource {
    /// Draw from a GP prior; the noise entry of `hp` is unused.
    Synthetic { width: usize, height: usize, hp: Hyperparameters },
    Csv(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub field: FieldSource,
    /// Variance of the noise added to training and test observations.
    pub noise_variance: f64,
    pub plan: LawnmowerConfig,
    pub models: Vec<ModelSpec>,
    pub optimizer: OptimizerConfig,
    pub init_hyperparameters: Hyperparameters,
    /// Field, observation and test-noise seeds are derived from this.
    pub seed: u64,
    pub output: PathBuf,
    /// Stop after this many batches.
    pub max_batches: Option<usize>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let schedule = PseudoSchedule::Fixed(30);
        Self {
            field: FieldSource::Synthetic {
                width: 100,
                height: 100,
                hp: Hyperparameters::new(1.0, &[0.3, 0.7], 0.01).expect("valid defaults"),
            },
            noise_variance: 0.01,
            plan: LawnmowerConfig::default(),
            models: vec![ModelSpec::Gpr, ModelSpec::GprWindow(500), ModelSpec::Vsgp(30), ModelSpec::Spgp(30), ModelSpec::Ssgp(schedule)],
            optimizer: OptimizerConfig::default(),
            init_hyperparameters: Hyperparameters::new(1.0, &[1.0, 1.0], 0.1).expect("valid defaults"),
            seed: 0,
            output: PathBuf::from("results"),
            max_batches: None,
        }
    }
}

impl ExperimentConfig {
    pub fn field_seed(&self) -> u64 {
        self.seed
    }

    pub fn observation_seed(&self) -> u64 {
        self.seed.wrapping_add(1)
    }

    pub fn test_noise_seed(&self) -> u64 {
        self.seed.wrapping_add(2)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.models.is_empty() {
            return Err(ConfigError::Invalid("at least one model is required".into()));
        }
        let mut labels: Vec<String> = self.models.iter().map(ModelSpec::label).collect();
        labels.sort();
        if let Some(w) = labels.windows(2).find(|w| w[0] == w[1]) {
            return Err(ConfigError::Invalid(format!("model `{}` listed twice", w[0])));
        }
        for m in &self.models {
            match m {
                ModelSpec::GprWindow(0) => return Err(ConfigError::Invalid("window must be positive".into())),
                ModelSpec::GprWindow(w) if *w < self.plan.batch_size => {
                    return Err(ConfigError::Invalid(format!("window {w} is smaller than the batch size")));
                }
                ModelSpec::Vsgp(0) | ModelSpec::Spgp(0) | ModelSpec::Ssgp(PseudoSchedule::Fixed(0)) => {
                    return Err(ConfigError::Invalid("pseudo-point count must be positive".into()));
                }
                ModelSpec::Ssgp(PseudoSchedule::Growing { alpha, .. }) if !(*alpha > 0.0) || !alpha.is_finite() => {
                    return Err(ConfigError::Invalid(format!("alpha must be positive, got {alpha}")));
                }
                _ => {}
            }
        }
        let p = self.plan;
        if p.transects == 0 || p.samples_per_transect == 0 || p.batch_size == 0 {
            return Err(ConfigError::Invalid("plan sizes must be positive".into()));
        }
        if (p.transects * p.samples_per_transect) % p.batch_size != 0 {
            return Err(ConfigError::Invalid(format!(
                "{} samples do not split into batches of {}",
                p.transects * p.samples_per_transect,
                p.batch_size
            )));
        }
        if !(self.noise_variance > 0.0) {
            return Err(ConfigError::Invalid("noise_variance must be positive".into()));
        }
        if self.init_hyperparameters.dim() != 2 {
            return Err(ConfigError::Invalid("initial hyperparameters need two lengthscales".into()));
        }
        if let FieldSource::Synthetic { width, height, hp } = &self.field {
            if hp.dim() != 2 {
                return Err(ConfigError::Invalid("field needs two lengthscales".into()));
            }
            if p.transects > *height || p.samples_per_transect > *width {
                return Err(ConfigError::Invalid("plan does not fit the field".into()));
            }
        }
        self.optimizer.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(())
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text =
            std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.into(), source })?;
        let mut cfg: Self = text.parse()?;
        // relative CSV paths are resolved against the config file
        if let FieldSource::Csv(p) = &mut cfg.field {
            if p.is_relative() {
                if let Some(dir) = path.parent() {
                    *p = dir.join(&*p);
                }
            }
        }
        Ok(cfg)
    }

    /// Canonical text form; parsing it yields an equal config.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let mut put = |k: &str, v: String| out.push_str(&format!("{k} = {v}\n"));
        match &self.field {
            FieldSource::Synthetic { width, height, hp } => {
                put("field", "synthetic".into());
                put("field_size", format!("{width}, {height}"));
                put("field_signal_variance", hp.signal_variance().to_string());
                put("field_lengthscales", join(&hp.lengthscales()));
            }
            FieldSource::Csv(p) => {
                put("field", "csv".into());
                put("field_path", p.display().to_string());
            }
        }
        put("noise_variance", self.noise_variance.to_string());
        put("transects", self.plan.transects.to_string());
        put("samples_per_transect", self.plan.samples_per_transect.to_string());
        put("batch_size", self.plan.batch_size.to_string());
        let mut names = Vec::new();
        let mut sparse_m = None;
        let mut ssgp = None;
        for m in &self.models {
            names.push(m.label());
            match m {
                ModelSpec::Vsgp(k) | ModelSpec::Spgp(k) => sparse_m = Some(*k),
                ModelSpec::Ssgp(s) => ssgp = Some(*s),
                _ => {}
            }
        }
        put("models", names.join(", "));
        if let Some(m) = sparse_m {
            put("pseudo_points", m.to_string());
        }
        match ssgp {
            Some(PseudoSchedule::Fixed(m)) => put("ssgp_pseudo_points", m.to_string()),
            Some(PseudoSchedule::Growing { alpha, base }) => {
                put("ssgp_alpha", alpha.to_string());
                put("log_base", base.to_string());
            }
            None => {}
        }
        put("max_iterations", self.optimizer.max_iterations.to_string());
        put("gradient_tolerance", self.optimizer.gradient_tolerance.to_string());
        put("memory", self.optimizer.memory_pairs.to_string());
        let hp = &self.init_hyperparameters;
        put("init_signal_variance", hp.signal_variance().to_string());
        put("init_lengthscales", join(&hp.lengthscales()));
        put("init_noise_variance", hp.noise_variance().to_string());
        put("seed", self.seed.to_string());
        put("output", self.output.display().to_string());
        if let Some(b) = self.max_batches {
            put("max_batches", b.to_string());
        }
        out
    }
}

fn join(v: &[f64]) -> String {
    v.iter().map(f64::to_string).collect::<Vec<_>>().join(", ")
}

fn parse_value<T: FromStr>(key: &str, v: &str) -> Result<T, ConfigError>
where
    T::Err: fmt::Display,
{
    v.parse().map_err(|e: T::Err| ConfigError::Value { key: key.into(), message: format!("{v:?}: {e}") })
}

fn parse_list(key: &str, v: &str) -> Result<Vec<f64>, ConfigError> {
    v.split(',').map(|s| parse_value(key, s.trim())).collect()
}

fn parse_model(token: &str) -> Result<ModelSpec, ConfigError> {
    let err = || ConfigError::Value { key: "models".into(), message: format!("unknown model {token:?}") };
    match token {
        "gpr" => Ok(ModelSpec::Gpr),
        "vsgp" => Ok(ModelSpec::Vsgp(0)),
        "spgp" => Ok(ModelSpec::Spgp(0)),
        "ssgp" => Ok(ModelSpec::Ssgp(PseudoSchedule::Fixed(0))),
        _ => token
            .strip_prefix("gpr")
            .and_then(|w| w.parse().ok())
            .map(ModelSpec::GprWindow)
            .ok_or_else(err),
    }
}

const KEYS: &[&str] = &[
    "field",
    "field_size",
    "field_signal_variance",
    "field_lengthscales",
    "field_path",
    "noise_variance",
    "transects",
    "samples_per_transect",
    "batch_size",
    "models",
    "pseudo_points",
    "ssgp_pseudo_points",
    "ssgp_alpha",
    "log_base",
    "max_iterations",
    "gradient_tolerance",
    "memory",
    "init_signal_variance",
    "init_lengthscales",
    "init_noise_variance",
    "seed",
    "output",
    "max_batches",
];

impl FromStr for ExperimentConfig {
    type Err = ConfigError;

    fn from_str(text: &str) -> Result<Self, ConfigError> {
        let mut kv: BTreeMap<&str, &str> = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| ConfigError::Syntax { line: i + 1, message: format!("expected `key = value`, got {line:?}") })?;
            let (k, v) = (k.trim(), v.trim());
            if !KEYS.contains(&k) {
                return Err(ConfigError::UnknownKey { line: i + 1, key: k.into() });
            }
            if kv.insert(k, v).is_some() {
                return Err(ConfigError::Syntax { line: i + 1, message: format!("duplicate key `{k}`") });
            }
        }

        let mut cfg = ExperimentConfig::default();
        let get = |k: &str| kv.get(k).copied();

        let lengthscales = |key: &str, default: Vec<f64>| -> Result<Vec<f64>, ConfigError> {
            get(key).map(|v| parse_list(key, v)).transpose().map(|o| o.unwrap_or(default))
        };
        let hp = |sf2: f64, ls: &[f64], sn2: f64, key: &str| {
            Hyperparameters::new(sf2, ls, sn2).map_err(|e| ConfigError::Value { key: key.into(), message: e.to_string() })
        };

        if let Some(v) = get("noise_variance") {
            cfg.noise_variance = parse_value("noise_variance", v)?;
        }
        match get("field").unwrap_or("synthetic") {
            "synthetic" => {
                let (mut w, mut h) = (100, 100);
                if let Some(v) = get("field_size") {
                    let parts: Vec<&str> = v.split(',').map(str::trim).collect();
                    if parts.len() != 2 {
                        return Err(ConfigError::Value { key: "field_size".into(), message: "expected width, height".into() });
                    }
                    w = parse_value("field_size", parts[0])?;
                    h = parse_value("field_size", parts[1])?;
                }
                let sf2 = get("field_signal_variance").map(|v| parse_value("field_signal_variance", v)).transpose()?.unwrap_or(1.0);
                let ls = lengthscales("field_lengthscales", vec![0.3, 0.7])?;
                cfg.field = FieldSource::Synthetic { width: w, height: h, hp: hp(sf2, &ls, cfg.noise_variance, "field_lengthscales")? };
            }
            "csv" => {
                let p = get("field_path").ok_or_else(|| ConfigError::Invalid("field = csv needs field_path".into()))?;
                cfg.field = FieldSource::Csv(PathBuf::from(p));
            }
            other => return Err(ConfigError::Value { key: "field".into(), message: format!("expected synthetic or csv, got {other:?}") }),
        }
        if let Some(v) = get("transects") {
            cfg.plan.transects = parse_value("transects", v)?;
        }
        if let Some(v) = get("samples_per_transect") {
            cfg.plan.samples_per_transect = parse_value("samples_per_transect", v)?;
        }
        if let Some(v) = get("batch_size") {
            cfg.plan.batch_size = parse_value("batch_size", v)?;
        }

        let m: usize = get("pseudo_points").map(|v| parse_value("pseudo_points", v)).transpose()?.unwrap_or(30);
        let base: LogBase = get("log_base").map(|v| parse_value("log_base", v)).transpose()?.unwrap_or(LogBase::Natural);
        let schedule = match (get("ssgp_alpha"), get("ssgp_pseudo_points")) {
            (Some(_), Some(_)) => {
                return Err(ConfigError::Invalid("ssgp_alpha and ssgp_pseudo_points are exclusive".into()));
            }
            (Some(a), None) => PseudoSchedule::Growing { alpha: parse_value("ssgp_alpha", a)?, base },
            (None, Some(k)) => PseudoSchedule::Fixed(parse_value("ssgp_pseudo_points", k)?),
            (None, None) => PseudoSchedule::Fixed(m),
        };
        if let Some(v) = get("models") {
            cfg.models = v
                .split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(parse_model)
                .collect::<Result<_, _>>()?;
        }
        for spec in &mut cfg.models {
            match spec {
                ModelSpec::Vsgp(k) | ModelSpec::Spgp(k) => *k = m,
                ModelSpec::Ssgp(s) => *s = schedule,
                _ => {}
            }
        }

        if let Some(v) = get("max_iterations") {
            cfg.optimizer.max_iterations = parse_value("max_iterations", v)?;
        }
        if let Some(v) = get("gradient_tolerance") {
            cfg.optimizer.gradient_tolerance = parse_value("gradient_tolerance", v)?;
        }
        if let Some(v) = get("memory") {
            cfg.optimizer.memory_pairs = parse_value("memory", v)?;
        }

        let sf2 = get("init_signal_variance").map(|v| parse_value("init_signal_variance", v)).transpose()?.unwrap_or(1.0);
        let sn2 = get("init_noise_variance").map(|v| parse_value("init_noise_variance", v)).transpose()?.unwrap_or(0.1);
        let ls = lengthscales("init_lengthscales", vec![1.0, 1.0])?;
        cfg.init_hyperparameters = hp(sf2, &ls, sn2, "init_lengthscales")?;

        if let Some(v) = get("seed") {
            cfg.seed = parse_value("seed", v)?;
        }
        if let Some(v) = get("output") {
            cfg.output = PathBuf::from(v);
        }
        if let Some(v) = get("max_batches") {
            cfg.max_batches = Some(parse_value("max_batches", v)?);
        }
        cfg.validate()?;
        Ok(cfg)
    }
}
