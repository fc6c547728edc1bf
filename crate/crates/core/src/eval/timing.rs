use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::data::WindowSample;
use crate::models::SurrogateModel;

pub const MIN_TIMING_REPEATS: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferenceTiming {
    pub samples: usize,
    pub repeats: usize,
    pub seconds: Vec<f64>,
    pub median_seconds: f64,
    /// Absent for an empty test set.
    pub samples_per_second: Option<f64>,
}

/// Median wall time of `repeats` (at least three) full prediction passes
/// over `test`.
pub fn time_inference(model: &SurrogateModel, test: &[WindowSample], repeats: usize) -> Result<InferenceTiming, EvalError> {
    let repeats = repeats.max(MIN_TIMING_REPEATS);
    let mut seconds = Vec::with_capacity(repeats);
    for _ in 0..repeats {
        let started = Instant::now();
        let out = model.predict(test)?;
        seconds.push(started.elapsed().as_secs_f64());
        std::hint::black_box(out);
    }
    let mut sorted = seconds.clone();
    sorted.sort_by(f64::total_cmp);
    let median_seconds = if repeats % 2 == 1 {
        sorted[repeats / 2]
    } else {
        0.5 * (sorted[repeats / 2 - 1] + sorted[repeats / 2])
    };
    let samples_per_second = (!test.is_empty() && median_seconds > 0.0).then(|| test.len() as f64 / median_seconds);
    if test.is_empty() {
        log::warn!("timing an empty test set; throughput is undefined");
    }
    Ok(InferenceTiming {
        samples: test.len(),
        repeats,
        seconds,
        median_seconds,
        samples_per_second,
    })
}

/// `external_seconds / model_seconds`.
pub fn speedup(external_seconds: f64, model_seconds: f64) -> Option<f64> {
    (external_seconds > 0.0 && model_seconds > 0.0).then(|| external_seconds / model_seconds)
}
