//! Run configuration.
//!
//! A config file is flat `key = value` text. Blank lines and lines starting
//! with `#` are ignored, and the first key must be `schema_version = 1`.
//! A run manifest (JSON) is also accepted: its `config` object is read back
//! with the same keys.
//!
//! | key | default | meaning |
//! |-----|---------|---------|
//! | `data` | none | hourly station CSV |
//! | `schema` | `miami-river` | feature schema |
//! | `split` | `2019-01-01T00:00:00` | first test hour |
//! | `train_start` | none | drop records before this hour |
//! | `test_end` | none | drop records at or after this hour |
//! | `w`, `k` | `72`, `24` | past steps and forecast horizon |
//! | `model` | `rcnn` | mlp, rnn, lstm, cnn, rcnn, lr, persistence |
//! | `seed` | `0` | initialization, shuffling and dropout seed |
//! | `learning_rate`, `batch_size`, `max_epochs`, `patience` | `0.001`, `64`, `200`, `10` | optimizer loop |
//! | `validation_fraction` | `0.1` | chronological tail held out for early stopping |
//! | `beta1`, `beta2`, `epsilon` | `0.9`, `0.999`, `1e-8` | Adam moments |
//! | `clip` | `auto` | global-norm clip; `auto` clips recurrent models at 5, `none` disables |
//! | `mlp_hidden` | `128,128` | MLP layer widths |
//! | `dropout` | `0.2` | MLP dropout rate |
//! | `recurrent_hidden`, `filters`, `kernel_width`, `pool_width` | `64`, `64`, `3`, `2` | layer sizes |
//! | `conv_blocks`, `rcnn_conv_blocks` | `2`, `1` | conv/pool blocks in CNN and RCNN |
//! | `ridge` | `1e-6` | linear-regression ridge term |
//! | `noise_features` | `Grid_Rainfall,WS_S4` | covariates perturbed by `perturb` |
//! | `noise_seed` | `0` | perturbation seed |
//! | `fractions` | `0.2,0.4` | noise fractions of the training range |
//! | `slices` | `table2` | lead-time slices: `table2`, `figure4` or a list like `1,6,entire` |
//! | `threshold` | `0.5` | extreme-error cutoff, feet |
//! | `wilcoxon` | `auto` | exact, approximate or auto |
//! | `external` | none | external prediction CSV |
//! | `external_name` | `HEC-RAS` | label for the external series |
//! | `external_seconds` | none | external wall time for speedups |
//! | `repeats` | `3` | timed passes per model in `bench` |
//! | `out` | `$STAGECAST_OUT` or `runs` | output directory |

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use chrono::NaiveDateTime;
use stagecast::data::{format_timestamp, parse_timestamp, FeatureSchema};
use stagecast::eval::{WilcoxonMode, DEFAULT_EXTREME_THRESHOLD, MIN_TIMING_REPEATS};
use stagecast::models::{Hyperparameters, ModelKind};
use stagecast::train::TrainConfig;

use crate::error::CliError;

pub const SCHEMA_VERSION: u32 = 1;
pub const OUT_ENV: &str = "STAGECAST_OUT";

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Clip {
    Auto,
    Off,
    Norm(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub data: Option<PathBuf>,
    pub schema: String,
    pub split: NaiveDateTime,
    pub train_start: Option<NaiveDateTime>,
    pub test_end: Option<NaiveDateTime>,
    pub w: usize,
    pub k: usize,
    pub model: ModelKind,
    pub seed: u64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub validation_fraction: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub clip: Clip,
    pub hyper: Hyperparameters,
    pub ridge: f64,
    pub noise_features: Vec<String>,
    pub noise_seed: u64,
    pub fractions: Vec<f64>,
    pub slices: String,
    pub threshold: f64,
    pub wilcoxon: WilcoxonMode,
    pub external: Option<PathBuf>,
    pub external_name: String,
    pub external_seconds: Option<f64>,
    pub repeats: usize,
    pub out: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        let train = TrainConfig::default();
        Self {
            data: None,
            schema: "miami-river".into(),
            split: parse_timestamp("2019-01-01T00:00:00").expect("valid literal"),
            train_start: None,
            test_end: None,
            w: 72,
            k: 24,
            model: ModelKind::Rcnn,
            seed: 0,
            learning_rate: train.learning_rate,
            batch_size: train.batch_size,
            max_epochs: train.max_epochs,
            patience: train.patience,
            validation_fraction: train.validation_fraction,
            beta1: train.beta1,
            beta2: train.beta2,
            epsilon: train.epsilon,
            clip: Clip::Auto,
            hyper: Hyperparameters::default(),
            ridge: 1e-6,
            noise_features: FeatureSchema::default_noise_features(),
            noise_seed: 0,
            fractions: vec![0.2, 0.4],
            slices: "table2".into(),
            threshold: DEFAULT_EXTREME_THRESHOLD,
            wilcoxon: WilcoxonMode::Auto,
            external: None,
            external_name: "HEC-RAS".into(),
            external_seconds: None,
            repeats: MIN_TIMING_REPEATS,
            out: std::env::var_os(OUT_ENV).map_or_else(|| PathBuf::from("runs"), PathBuf::from),
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, CliError> {
    value
        .trim()
        .parse()
        .map_err(|_| CliError::config(format!("{key}: cannot parse {value:?}")))
}

fn parse_time(key: &str, value: &str) -> Result<NaiveDateTime, CliError> {
    parse_timestamp(value.trim()).ok_or_else(|| CliError::config(format!("{key}: bad timestamp {value:?}")))
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>, CliError> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse(key, s))
        .collect()
}

fn optional(value: &str) -> Option<&str> {
    let v = value.trim();
    (!v.is_empty() && v != "none").then_some(v)
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    /// Reads a key-value config file or a run manifest.
    pub fn from_file(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io("config", path, e))?;
        if text.trim_start().starts_with('{') {
            return Self::from_manifest(&text, path);
        }
        let mut cfg = Self::default();
        let mut seen = BTreeMap::new();
        let mut version = None;
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| CliError::config(format!("{}:{}: expected key = value", path.display(), n + 1)))?;
            let key = key.trim();
            if seen.insert(key.to_string(), n + 1).is_some() {
                return Err(CliError::config(format!("{}:{}: duplicate key {key}", path.display(), n + 1)));
            }
            if key == "schema_version" {
                version = Some(parse::<u32>(key, value)?);
                continue;
            }
            if version.is_none() {
                return Err(CliError::config(format!(
                    "{}: the first key must be schema_version",
                    path.display()
                )));
            }
            cfg.set(key, value)?;
        }
        match version {
            Some(SCHEMA_VERSION) => Ok(cfg),
            Some(v) => Err(CliError::config(format!(
                "{}: schema_version {v} is not supported (expected {SCHEMA_VERSION})",
                path.display()
            ))),
            None => Err(CliError::config(format!("{}: missing schema_version", path.display()))),
        }
    }

    fn from_manifest(text: &str, path: &Path) -> Result<Self, CliError> {
        let doc: serde_json::Value = serde_json::from_str(text)
            .map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
        let pairs = doc
            .get("config")
            .and_then(|c| c.as_object())
            .ok_or_else(|| CliError::config(format!("{}: manifest has no config object", path.display())))?;
        let mut cfg = Self::default();
        for (key, value) in pairs {
            let value = value
                .as_str()
                .ok_or_else(|| CliError::config(format!("{}: {key} is not a string", path.display())))?;
            if key == "schema_version" {
                if parse::<u32>(key, value)? != SCHEMA_VERSION {
                    return Err(CliError::config(format!("{}: unsupported schema_version", path.display())));
                }
                continue;
            }
            cfg.set(key, value)?;
        }
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        let v = value.trim();
        match key {
            "data" => self.data = optional(v).map(PathBuf::from),
            "schema" => {
                if v != "miami-river" {
                    return Err(CliError::config(format!("schema: unknown schema {v:?}")));
                }
                self.schema = v.to_string();
            }
            "split" => self.split = parse_time(key, v)?,
            "train_start" => self.train_start = optional(v).map(|s| parse_time(key, s)).transpose()?,
            "test_end" => self.test_end = optional(v).map(|s| parse_time(key, s)).transpose()?,
            "w" => self.w = parse(key, v)?,
            "k" => self.k = parse(key, v)?,
            "model" => self.model = v.parse().map_err(|e| CliError::config(format!("model: {e}")))?,
            "seed" => self.seed = parse(key, v)?,
            "learning_rate" => self.learning_rate = parse(key, v)?,
            "batch_size" => self.batch_size = parse(key, v)?,
            "max_epochs" => self.max_epochs = parse(key, v)?,
            "patience" => self.patience = parse(key, v)?,
            "validation_fraction" => self.validation_fraction = parse(key, v)?,
            "beta1" => self.beta1 = parse(key, v)?,
            "beta2" => self.beta2 = parse(key, v)?,
            "epsilon" => self.epsilon = parse(key, v)?,
            "clip" => {
                self.clip = match v {
                    "auto" => Clip::Auto,
                    "none" => Clip::Off,
                    n => Clip::Norm(parse(key, n)?),
                }
            }
            "mlp_hidden" => self.hyper.mlp_hidden = parse_list(key, v)?,
            "dropout" => self.hyper.dropout = parse(key, v)?,
            "recurrent_hidden" => self.hyper.recurrent_hidden = parse(key, v)?,
            "filters" => self.hyper.filters = parse(key, v)?,
            "kernel_width" => self.hyper.kernel_width = parse(key, v)?,
            "pool_width" => self.hyper.pool_width = parse(key, v)?,
            "conv_blocks" => self.hyper.conv_blocks = parse(key, v)?,
            "rcnn_conv_blocks" => self.hyper.rcnn_conv_blocks = parse(key, v)?,
            "ridge" => self.ridge = parse(key, v)?,
            "noise_features" => self.noise_features = parse_list(key, v)?,
            "noise_seed" => self.noise_seed = parse(key, v)?,
            "fractions" => {
                let f: Vec<f64> = parse_list(key, v)?;
                if let Some(bad) = f.iter().find(|x| !(**x >= 0.0) || !x.is_finite()) {
                    return Err(CliError::config(format!("fractions: {bad} must be a finite value >= 0")));
                }
                self.fractions = f;
            }
            "slices" => self.slices = v.to_string(),
            "threshold" => self.threshold = parse(key, v)?,
            "wilcoxon" => {
                self.wilcoxon = match v {
                    "exact" => WilcoxonMode::Exact,
                    "approximate" => WilcoxonMode::Approximate,
                    "auto" => WilcoxonMode::Auto,
                    other => return Err(CliError::config(format!("wilcoxon: unknown mode {other:?}"))),
                }
            }
            "external" => self.external = optional(v).map(PathBuf::from),
            "external_name" => self.external_name = v.to_string(),
            "external_seconds" => self.external_seconds = optional(v).map(|s| parse(key, s)).transpose()?,
            "repeats" => self.repeats = parse(key, v)?,
            "out" => self.out = PathBuf::from(v),
            other => return Err(CliError::config(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }

    /// `KEY=VALUE` override from the command line.
    pub fn set_pair(&mut self, pair: &str) -> Result<(), CliError> {
        let (k, v) = pair
            .split_once('=')
            .ok_or_else(|| CliError::config(format!("--set expects KEY=VALUE, got {pair:?}")))?;
        self.set(k.trim(), v)
    }

    /// Every key with its resolved value, in the file syntax.
    pub fn pairs(&self) -> BTreeMap<&'static str, String> {
        let opt_path = |p: &Option<PathBuf>| p.as_ref().map_or("none".to_string(), |p| p.display().to_string());
        let opt_time = |t: &Option<NaiveDateTime>| t.map_or("none".to_string(), format_timestamp);
        let h = &self.hyper;
        BTreeMap::from([
            ("schema_version", SCHEMA_VERSION.to_string()),
            ("data", opt_path(&self.data)),
            ("schema", self.schema.clone()),
            ("split", format_timestamp(self.split)),
            ("train_start", opt_time(&self.train_start)),
            ("test_end", opt_time(&self.test_end)),
            ("w", self.w.to_string()),
            ("k", self.k.to_string()),
            ("model", self.model.to_string()),
            ("seed", self.seed.to_string()),
            ("learning_rate", self.learning_rate.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("max_epochs", self.max_epochs.to_string()),
            ("patience", self.patience.to_string()),
            ("validation_fraction", self.validation_fraction.to_string()),
            ("beta1", self.beta1.to_string()),
            ("beta2", self.beta2.to_string()),
            ("epsilon", self.epsilon.to_string()),
            (
                "clip",
                match self.clip {
                    Clip::Auto => "auto".to_string(),
                    Clip::Off => "none".to_string(),
                    Clip::Norm(n) => n.to_string(),
                },
            ),
            ("mlp_hidden", join(&h.mlp_hidden)),
            ("dropout", h.dropout.to_string()),
            ("recurrent_hidden", h.recurrent_hidden.to_string()),
            ("filters", h.filters.to_string()),
            ("kernel_width", h.kernel_width.to_string()),
            ("pool_width", h.pool_width.to_string()),
            ("conv_blocks", h.conv_blocks.to_string()),
            ("rcnn_conv_blocks", h.rcnn_conv_blocks.to_string()),
            ("ridge", self.ridge.to_string()),
            ("noise_features", self.noise_features.join(",")),
            ("noise_seed", self.noise_seed.to_string()),
            ("fractions", join(&self.fractions)),
            ("slices", self.slices.clone()),
            ("threshold", self.threshold.to_string()),
            (
                "wilcoxon",
                match self.wilcoxon {
                    WilcoxonMode::Exact => "exact",
                    WilcoxonMode::Approximate => "approximate",
                    WilcoxonMode::Auto => "auto",
                }
                .to_string(),
            ),
            ("external", opt_path(&self.external)),
            ("external_name", self.external_name.clone()),
            ("external_seconds", self.external_seconds.map_or("none".to_string(), |s| s.to_string())),
            ("repeats", self.repeats.to_string()),
            ("out", self.out.display().to_string()),
        ])
    }

    pub fn schema(&self) -> FeatureSchema {
        FeatureSchema::miami_river()
    }

    pub fn train_config(&self) -> TrainConfig {
        let base = TrainConfig::for_kind(self.model);
        TrainConfig {
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            max_epochs: self.max_epochs,
            patience: self.patience,
            validation_fraction: self.validation_fraction,
            seed: self.seed,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
            clip_norm: match self.clip {
                Clip::Auto => base.clip_norm,
                Clip::Off => None,
                Clip::Norm(n) => Some(n),
            },
        }
    }
}
