//! Goodness-of-fit metrics, extreme-error fractions, signed-rank tests,
//! per-lead-time and per-location breakdowns, robustness and timing.

mod forecast;
mod metrics;
mod tables;
mod timing;
mod wilcoxon;

use thiserror::Error;

pub use forecast::{breakdown, compare_external, read_external, write_raw_errors, ExternalSeries, Forecasts};
pub use metrics::{
    extreme_error_fraction, kge, mae, nse, rmse, ErrorDistribution, ExtremeFractions, KgeComponents,
    DEFAULT_EXTREME_THRESHOLD,
};
pub use tables::{
    format_change, lead_slices, pvalue_by_lead, pvalue_by_location, relative_mae_change, BenchRow, EvaluationReport,
    LeadSlice, LocationCell, MetricBlock, MetricsCell, MetricsReport, ModelRow, PValueTable, RobustnessRow, SliceCell,
};
pub use timing::{speedup, time_inference, InferenceTiming, MIN_TIMING_REPEATS};
pub use wilcoxon::{
    wilcoxon_from_differences, wilcoxon_signed_rank, WilcoxonMethod, WilcoxonMode, WilcoxonResult,
    EXACT_AUTO_LIMIT, EXACT_MAX_N,
};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("{metric} is undefined: {reason}")]
    Undefined { metric: &'static str, reason: String },
    #[error("alignment: {0}")]
    Alignment(String),
    #[error("schema: {0}")]
    Schema(String),
    #[error("csv: {0}")]
    Csv(String),
    #[error(transparent)]
    Data(#[from] crate::data::DataError),
    #[error(transparent)]
    Model(#[from] crate::models::ModelError),
}
