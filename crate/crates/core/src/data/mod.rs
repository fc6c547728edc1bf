//! Station CSV ingestion, chronological splitting, min-max scaling, window
//! construction and covariate noise injection.

mod frame;
mod noise;
mod normalize;
mod schema;
mod window;

use thiserror::Error;

pub use frame::{
    format_timestamp, load_frame, parse_timestamp, read_frame, split_by_date, write_frame, DatasetSplit,
    TimeSeriesFrame,
    MAX_INTERPOLATED_GAP_HOURS,
};
pub use noise::{inject_noise, CovariateScale, NoiseScales};
pub use normalize::{FeatureRange, Normalizer};
pub use schema::{Feature, FeatureRole, FeatureSchema, NUM_TARGETS};
pub use window::{build_windows, window_count, WindowSample};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("csv: {0}")]
    Csv(String),
    #[error("missing column {0}")]
    MissingColumn(String),
    #[error("line {line}: cannot parse {column} value {value:?}")]
    Parse {
        line: usize,
        column: String,
        value: String,
    },
    #[error("line {line}: timestamp {current} does not follow {previous} on the hourly grid")]
    Ordering {
        line: usize,
        previous: String,
        current: String,
    },
    #[error("gap of {missing_hours} hour(s) between {from} and {to} exceeds the interpolation limit")]
    Gap {
        from: String,
        to: String,
        missing_hours: usize,
    },
    #[error("out of range: {0}")]
    Range(String),
    #[error("feature {0} is constant on the training split and cannot be inverted")]
    Degenerate(String),
    #[error("insufficient data: {length} records, need at least {required}")]
    InsufficientData { length: usize, required: usize },
    #[error("schema: {0}")]
    Schema(String),
    #[error("invalid argument: {0}")]
    Argument(String),
}
