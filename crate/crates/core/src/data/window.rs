use chrono::{Duration, NaiveDateTime};
use serde::{Deserialize, Serialize};

use super::{DataError, FeatureSchema, TimeSeriesFrame};

/// One forecasting example anchored at time `t`.
///
/// * `past`: `w × P` rows for `t-w+1 ..= t`, all measured features in schema order.
/// * `future`: `k × F` rows for `t+1 ..= t+k`, future-known covariates in schema order.
/// * `target`: `k × 4` rows for `t+1 ..= t+k`, stages in output order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowSample {
    pub anchor: NaiveDateTime,
    past_steps: usize,
    horizon: usize,
    measured: usize,
    covariates: usize,
    targets: usize,
    past: Vec<f64>,
    future: Vec<f64>,
    target: Vec<f64>,
}

impl WindowSample {
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        anchor: NaiveDateTime,
        past_steps: usize,
        horizon: usize,
        measured: usize,
        covariates: usize,
        targets: usize,
        past: Vec<f64>,
        future: Vec<f64>,
        target: Vec<f64>,
    ) -> Result<Self, DataError> {
        if past.len() != past_steps * measured
            || future.len() != horizon * covariates
            || target.len() != horizon * targets
        {
            return Err(DataError::Argument(format!(
                "window blocks ({}, {}, {}) do not match geometry w={past_steps} k={horizon}",
                past.len(),
                future.len(),
                target.len()
            )));
        }
        Ok(Self {
            anchor,
            past_steps,
            horizon,
            measured,
            covariates,
            targets,
            past,
            future,
            target,
        })
    }

    pub fn past_steps(&self) -> usize {
        self.past_steps
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn num_measured(&self) -> usize {
        self.measured
    }

    pub fn num_covariates(&self) -> usize {
        self.covariates
    }

    pub fn num_targets(&self) -> usize {
        self.targets
    }

    pub fn past(&self) -> &[f64] {
        &self.past
    }

    pub fn future(&self) -> &[f64] {
        &self.future
    }

    pub fn target(&self) -> &[f64] {
        &self.target
    }

    pub(crate) fn future_mut(&mut self) -> &mut [f64] {
        &mut self.future
    }

    pub fn past_row(&self, step: usize) -> &[f64] {
        &self.past[step * self.measured..(step + 1) * self.measured]
    }

    pub fn future_row(&self, step: usize) -> &[f64] {
        &self.future[step * self.covariates..(step + 1) * self.covariates]
    }

    pub fn target_row(&self, step: usize) -> &[f64] {
        &self.target[step * self.targets..(step + 1) * self.targets]
    }

    /// Timestamp of past row `step` (row `w-1` is the anchor).
    pub fn past_time(&self, step: usize) -> NaiveDateTime {
        self.anchor - Duration::hours((self.past_steps - 1 - step) as i64)
    }

    /// Timestamp of future/target row `step` (row 0 is `t+1`).
    pub fn future_time(&self, step: usize) -> NaiveDateTime {
        self.anchor + Duration::hours(step as i64 + 1)
    }
}

/// Number of windows a frame of `len` records yields.
pub fn window_count(len: usize, past_steps: usize, horizon: usize) -> usize {
    (len + 1).saturating_sub(past_steps + horizon)
}

/// Slides a `(w, k)` window over `frame`, one sample per admissible anchor,
/// ordered by anchor time.
pub fn build_windows(
    frame: &TimeSeriesFrame,
    past_steps: usize,
    horizon: usize,
    schema: &FeatureSchema,
) -> Result<Vec<WindowSample>, DataError> {
    frame.check_schema(schema)?;
    if past_steps == 0 || horizon == 0 {
        return Err(DataError::Argument(format!(
            "window sizes must be positive (w={past_steps}, k={horizon})"
        )));
    }
    let len = frame.len();
    if len < past_steps + horizon {
        return Err(DataError::InsufficientData {
            length: len,
            required: past_steps + horizon,
        });
    }
    let measured = schema.len();
    let future_cols = schema.future_indices();
    let target_cols = schema.target_indices();
    let mut samples = Vec::with_capacity(window_count(len, past_steps, horizon));
    for anchor in (past_steps - 1)..(len - horizon) {
        let mut past = Vec::with_capacity(past_steps * measured);
        for i in (anchor + 1 - past_steps)..=anchor {
            past.extend((0..measured).map(|f| frame.value(f, i)));
        }
        let mut future = Vec::with_capacity(horizon * future_cols.len());
        let mut target = Vec::with_capacity(horizon * target_cols.len());
        for i in (anchor + 1)..=(anchor + horizon) {
            future.extend(future_cols.iter().map(|&f| frame.value(f, i)));
            target.extend(target_cols.iter().map(|&f| frame.value(f, i)));
        }
        samples.push(WindowSample {
            anchor: frame.timestamp(anchor),
            past_steps,
            horizon,
            measured,
            covariates: future_cols.len(),
            targets: target_cols.len(),
            past,
            future,
            target,
        });
    }
    Ok(samples)
}
