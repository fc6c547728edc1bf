//! Shared load, split and windowing steps.

use std::path::{Path, PathBuf};

use chrono::Duration;
use stagecast::data::{build_windows, load_frame, split_by_date, DatasetSplit, FeatureSchema, Normalizer, TimeSeriesFrame, WindowSample};
use stagecast::models::{load_checkpoint, ModelError, SurrogateModel};
use stagecast::nn::Tensor;

use crate::config::RunConfig;
use crate::error::{CliError, Stage};

pub struct Dataset {
    pub path: PathBuf,
    pub schema: FeatureSchema,
    /// The record after `train_start`/`test_end` trimming, in feet.
    pub frame: TimeSeriesFrame,
    pub split: DatasetSplit,
}

pub fn load(cfg: &RunConfig) -> Result<Dataset, CliError> {
    let path = cfg
        .data
        .clone()
        .ok_or_else(|| CliError::config("no data file given (use --data or data = ...)"))?;
    let schema = cfg.schema();
    let frame = load_frame(&path, &schema).stage("load")?;
    let frame = frame.between(cfg.train_start, cfg.test_end);
    let split = split_by_date(&frame, cfg.split).stage("split")?;
    log::info!(
        "{}: {} training and {} test hours",
        path.display(),
        split.train.len(),
        split.test.len()
    );
    Ok(Dataset {
        path,
        schema,
        frame,
        split,
    })
}

impl Dataset {
    pub fn train_windows(&self, norm: &Normalizer, cfg: &RunConfig) -> Result<Vec<WindowSample>, CliError> {
        let frame = norm.apply(&self.split.train).stage("normalize")?;
        build_windows(&frame, cfg.w, cfg.k, &self.schema).stage("window")
    }

    /// Windows whose targets all lie in the test period. Their past blocks may
    /// reach back into the training record.
    pub fn test_windows(&self, norm: &Normalizer, cfg: &RunConfig) -> Result<Vec<WindowSample>, CliError> {
        let from = self.split.boundary - Duration::hours(cfg.w as i64);
        let frame = norm.apply(&self.frame.between(Some(from), None)).stage("normalize")?;
        build_windows(&frame, cfg.w, cfg.k, &self.schema).stage("window")
    }
}

/// Loads a checkpoint and checks it against the configured geometry.
pub fn load_model(path: &Path, cfg: &RunConfig) -> Result<SurrogateModel, CliError> {
    let model = load_checkpoint(path).stage("model")?;
    let g = model.geometry();
    if g.past_steps != cfg.w || g.horizon != cfg.k {
        return Err(ModelError::Checkpoint(format!(
            "{} has w = {}, k = {} but the config asks for w = {}, k = {}",
            path.display(),
            g.past_steps,
            g.horizon,
            cfg.w,
            cfg.k
        )))
        .stage("model");
    }
    if model.normalizer().is_none() {
        return Err(ModelError::Checkpoint(format!("{} carries no normalizer", path.display()))).stage("model");
    }
    Ok(model)
}

/// Distinct display labels for a list of models: `RCNN`, `RCNN-2`, ...
pub fn labels(models: &[SurrogateModel]) -> Vec<String> {
    let mut out: Vec<String> = Vec::with_capacity(models.len());
    for m in models {
        let base = m.kind().label();
        let seen = out.iter().filter(|l| l.split('-').next() == Some(base)).count();
        out.push(if seen == 0 { base.to_string() } else { format!("{base}-{}", seen + 1) });
    }
    out
}

/// Observed targets of `samples` as a `[B, k, targets]` tensor.
pub fn observed_targets(samples: &[WindowSample]) -> Result<Tensor, CliError> {
    let (k, c) = samples.first().map_or((1, 1), |s| (s.horizon(), s.num_targets()));
    let data: Vec<f64> = samples.iter().flat_map(|s| s.target().iter().copied()).collect();
    Tensor::new(vec![samples.len(), k, c], data).map_err(|e| CliError::internal("evaluate", e.to_string()))
}
