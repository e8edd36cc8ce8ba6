//! Run configuration: a TOML file plus `--set key=value` overrides.

use std::path::{Path, PathBuf};

use bitr::censoring::CensoringKind;
use bitr::copula::CopulaFamily;
use bitr::data::WeightConfig;
use bitr::pipeline::PipelineConfig;
use bitr::policy::TrainConfig;
use bitr::simulation::{Dependence, ScenarioTag, SimulationOptions, TauSource};
use serde::Deserialize;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("invalid config: {0}")]
    Toml(#[from] toml::de::Error),
    #[error("bad override `{0}`: expected key=value")]
    Override(String),
    #[error("invalid config: {0}")]
    Invalid(String),
}

/// How the censoring scales are chosen.
#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum TauSetting {
    Fixed([f64; 2]),
    Named(String),
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub scenario: String,
    pub n: usize,
    pub replications: usize,
    pub n_test: usize,
    /// Single weight configuration; when unset `simulate` runs the three standard ones.
    pub c1: Option<f64>,
    pub c2: Option<f64>,
    pub seed: u64,
    /// Number of non-reference arms for `fit`; inferred from the data when unset.
    pub k: Option<usize>,
    /// `km` or `cox`.
    pub censoring: String,
    pub censoring_floor: f64,
    pub copulas: Vec<String>,
    pub cv_folds: usize,
    pub trees: usize,
    pub width: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// `reference`, `own`, or a fixed pair `[tau1, tau2]`.
    pub tau: TauSetting,
    /// `clayton` or `independent`.
    pub dependence: String,
    pub target: [f64; 2],
    pub max_failure_rate: f64,
    pub output: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            scenario: "main".into(),
            n: 200,
            replications: 100,
            n_test: 1000,
            c1: None,
            c2: None,
            seed: 20240,
            k: None,
            censoring: "km".into(),
            censoring_floor: bitr::censoring::DEFAULT_FLOOR,
            copulas: CopulaFamily::ALL.iter().map(|f| f.name().to_string()).collect(),
            cv_folds: 5,
            trees: 100,
            width: 32,
            epochs: 500,
            batch_size: 64,
            learning_rate: 1e-3,
            tau: TauSetting::Named("reference".into()),
            dependence: "clayton".into(),
            target: [1.0, 1.0],
            max_failure_rate: 0.1,
            output: PathBuf::from("out"),
        }
    }
}

/// Splits `key=value` and parses the value as a TOML literal, falling back to a bare string.
fn parse_override(raw: &str) -> Result<(String, toml::Value), ConfigError> {
    let (key, value) = raw.split_once('=').ok_or_else(|| ConfigError::Override(raw.into()))?;
    let key = key.trim();
    if key.is_empty() {
        return Err(ConfigError::Override(raw.into()));
    }
    let value = value.trim();
    let parsed = match format!("v = {value}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").unwrap(),
        Err(_) => toml::Value::String(value.to_string()),
    };
    Ok((key.to_string(), parsed))
}

impl RunConfig {
    pub fn from_toml(text: &str, overrides: &[String]) -> Result<Self, ConfigError> {
        let mut table: toml::Table = text.parse()?;
        for raw in overrides {
            let (key, value) = parse_override(raw)?;
            table.insert(key, value);
        }
        let cfg: RunConfig = toml::Value::Table(table).try_into()?;
        cfg.check()?;
        Ok(cfg)
    }

    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self, ConfigError> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p).map_err(|source| ConfigError::Read { path: p.to_path_buf(), source })?,
            None => String::new(),
        };
        Self::from_toml(&text, overrides)
    }

    fn check(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        self.scenario_tag()?;
        self.censoring_kind()?;
        self.copula_families()?;
        self.tau_source()?;
        self.dependence_kind()?;
        if self.n == 0 || self.replications == 0 || self.n_test == 0 {
            return bad("n, replications and n_test must be positive".into());
        }
        if self.c1.is_some() != self.c2.is_some() {
            return bad("set both c1 and c2, or neither".into());
        }
        if let (Some(c1), Some(c2)) = (self.c1, self.c2) {
            WeightConfig::new(c1, c2).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        }
        if self.cv_folds < 2 {
            return bad(format!("cv_folds must be at least 2, got {}", self.cv_folds));
        }
        if self.trees == 0 || self.width == 0 || self.epochs == 0 || self.batch_size == 0 {
            return bad("trees, width, epochs and batch_size must be positive".into());
        }
        if !(self.learning_rate > 0.0) {
            return bad(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if !(0.0..1.0).contains(&self.censoring_floor) || self.censoring_floor == 0.0 {
            return bad(format!("censoring_floor must lie in (0, 1), got {}", self.censoring_floor));
        }
        if !(self.target[0] > 0.0 && self.target[1] > 0.0) {
            return bad("target times must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.max_failure_rate) {
            return bad("max_failure_rate must lie in [0, 1]".into());
        }
        Ok(())
    }

    pub fn scenario_tag(&self) -> Result<ScenarioTag, ConfigError> {
        self.scenario.parse().map_err(|e: bitr::Error| ConfigError::Invalid(e.to_string()))
    }

    pub fn censoring_kind(&self) -> Result<CensoringKind, ConfigError> {
        match self.censoring.to_ascii_lowercase().as_str() {
            "km" | "kaplan-meier" => Ok(CensoringKind::KaplanMeier),
            "cox" => Ok(CensoringKind::CoxPh),
            other => Err(ConfigError::Invalid(format!("unknown censoring estimator `{other}` (expected km or cox)"))),
        }
    }

    pub fn copula_families(&self) -> Result<Vec<CopulaFamily>, ConfigError> {
        if self.copulas.is_empty() {
            return Err(ConfigError::Invalid("at least one copula family is required".into()));
        }
        self.copulas
            .iter()
            .map(|s| s.parse().map_err(|e: bitr::Error| ConfigError::Invalid(e.to_string())))
            .collect()
    }

    pub fn tau_source(&self) -> Result<TauSource, ConfigError> {
        match &self.tau {
            TauSetting::Fixed(t) if t.iter().all(|v| *v > 0.0 && v.is_finite()) => Ok(TauSource::Fixed(*t)),
            TauSetting::Fixed(t) => Err(ConfigError::Invalid(format!("fixed tau must be positive, got {t:?}"))),
            TauSetting::Named(s) => match s.as_str() {
                "reference" => Ok(TauSource::Reference),
                "own" => Ok(TauSource::Own),
                other => Err(ConfigError::Invalid(format!("unknown tau `{other}` (expected reference, own or [t1, t2])"))),
            },
        }
    }

    pub fn dependence_kind(&self) -> Result<Dependence, ConfigError> {
        match self.dependence.as_str() {
            "clayton" => Ok(Dependence::Clayton),
            "independent" => Ok(Dependence::Independent),
            other => Err(ConfigError::Invalid(format!("unknown dependence `{other}`"))),
        }
    }

    /// Weight configurations to run, in report order.
    pub fn weight_configs(&self) -> Vec<WeightConfig> {
        match (self.c1, self.c2) {
            (Some(c1), Some(c2)) => vec![WeightConfig { c1, c2 }],
            _ => vec![WeightConfig::BASELINE, WeightConfig::PREDICTION_BASED, WeightConfig::PREDICTION_POWERED],
        }
    }

    pub fn pipeline(&self) -> PipelineConfig {
        PipelineConfig {
            c: self.weight_configs()[0],
            censoring: self.censoring_kind().unwrap_or_default(),
            censoring_floor: self.censoring_floor,
            forest: bitr::forest::ForestParams { n_trees: self.trees, ..Default::default() },
            copula_candidates: self.copula_families().unwrap_or_default(),
            cv_folds: self.cv_folds,
            width: self.width,
            train: TrainConfig {
                epochs: self.epochs,
                batch_size: self.batch_size,
                learning_rate: self.learning_rate,
                ..Default::default()
            },
            target: (self.target[0], self.target[1]),
            seed: self.seed,
        }
    }

    pub fn simulation(&self, jobs: usize) -> SimulationOptions {
        SimulationOptions {
            replications: self.replications,
            n_test: self.n_test,
            pipeline: self.pipeline(),
            jobs,
            max_failure_rate: self.max_failure_rate,
        }
    }
}
