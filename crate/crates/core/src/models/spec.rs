use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::ModelError;
use crate::data::FeatureSchema;
use crate::nn::Activation;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Mlp,
    Rnn,
    Lstm,
    Cnn,
    Rcnn,
    #[serde(rename = "lr")]
    LinearRegression,
    Persistence,
}

impl ModelKind {
    pub const NEURAL: [ModelKind; 5] = [
        ModelKind::Mlp,
        ModelKind::Rnn,
        ModelKind::Lstm,
        ModelKind::Cnn,
        ModelKind::Rcnn,
    ];

    pub const ALL: [ModelKind; 7] = [
        ModelKind::Mlp,
        ModelKind::Rnn,
        ModelKind::Lstm,
        ModelKind::Cnn,
        ModelKind::Rcnn,
        ModelKind::LinearRegression,
        ModelKind::Persistence,
    ];

    pub fn label(self) -> &'static str {
        match self {
            ModelKind::Mlp => "MLP",
            ModelKind::Rnn => "RNN",
            ModelKind::Lstm => "LSTM",
            ModelKind::Cnn => "CNN",
            ModelKind::Rcnn => "RCNN",
            ModelKind::LinearRegression => "LR",
            ModelKind::Persistence => "Persistence",
        }
    }

    /// Consumes the `(w + k) × channels` sequence rather than the flat vector.
    pub fn uses_sequence(self) -> bool {
        matches!(
            self,
            ModelKind::Rnn | ModelKind::Lstm | ModelKind::Cnn | ModelKind::Rcnn
        )
    }

    pub fn is_recurrent(self) -> bool {
        matches!(self, ModelKind::Rnn | ModelKind::Lstm | ModelKind::Rcnn)
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for ModelKind {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "mlp" => Ok(ModelKind::Mlp),
            "rnn" => Ok(ModelKind::Rnn),
            "lstm" => Ok(ModelKind::Lstm),
            "cnn" => Ok(ModelKind::Cnn),
            "rcnn" => Ok(ModelKind::Rcnn),
            "lr" | "linear" | "linear-regression" => Ok(ModelKind::LinearRegression),
            "persistence" => Ok(ModelKind::Persistence),
            other => Err(ModelError::Spec(format!("unknown model kind {other:?}"))),
        }
    }
}

/// Input/output extents shared by every model built for one dataset.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Geometry {
    /// History length `w`.
    pub past_steps: usize,
    /// Forecast horizon `k`.
    pub horizon: usize,
    /// Measured features per past row.
    pub measured: usize,
    /// Column (within a past row) of each future-known covariate.
    pub covariate_columns: Vec<usize>,
    /// Column (within a past row) of each target, in output order.
    pub target_columns: Vec<usize>,
}

impl Geometry {
    pub fn from_schema(schema: &FeatureSchema, past_steps: usize, horizon: usize) -> Self {
        Self {
            past_steps,
            horizon,
            measured: schema.len(),
            covariate_columns: schema.future_indices(),
            target_columns: schema.target_indices().to_vec(),
        }
    }

    pub fn covariates(&self) -> usize {
        self.covariate_columns.len()
    }

    pub fn targets(&self) -> usize {
        self.target_columns.len()
    }

    /// Width of the flattened past ⊕ future input.
    pub fn flat_inputs(&self) -> usize {
        self.past_steps * self.measured + self.horizon * self.covariates()
    }

    pub fn sequence_len(&self) -> usize {
        self.past_steps + self.horizon
    }

    /// Measured channels plus the future-row indicator.
    pub fn sequence_channels(&self) -> usize {
        self.measured + 1
    }

    pub fn output_width(&self) -> usize {
        self.horizon * self.targets()
    }

    fn validate(&self) -> Result<(), ModelError> {
        if self.past_steps == 0 || self.horizon == 0 {
            return Err(ModelError::Spec(format!(
                "window sizes must be positive (w={}, k={})",
                self.past_steps, self.horizon
            )));
        }
        if self.target_columns.is_empty() {
            return Err(ModelError::Spec("no target columns".into()));
        }
        let bad = self
            .covariate_columns
            .iter()
            .chain(&self.target_columns)
            .find(|&&c| c >= self.measured);
        if let Some(c) = bad {
            return Err(ModelError::Spec(format!(
                "column {c} outside {} measured features",
                self.measured
            )));
        }
        Ok(())
    }
}

/// One hidden stage; the linear output head is implicit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Stage {
    Dense { units: usize, activation: Activation },
    Dropout { rate: f64 },
    Rnn { hidden: usize },
    Lstm { hidden: usize },
    Conv { filters: usize, width: usize, stride: usize, activation: Activation },
    MaxPool { window: usize, stride: usize },
}

impl Stage {
    fn group(&self) -> StageGroup {
        match self {
            Stage::Rnn { .. } | Stage::Lstm { .. } => StageGroup::Recurrent,
            Stage::Conv { .. } | Stage::MaxPool { .. } => StageGroup::Convolutional,
            Stage::Dense { .. } | Stage::Dropout { .. } => StageGroup::Dense,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum StageGroup {
    Recurrent,
    Convolutional,
    Dense,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchitectureSpec {
    pub kind: ModelKind,
    pub geometry: Geometry,
    pub stages: Vec<Stage>,
}

pub const DEFAULT_MLP_HIDDEN: [usize; 2] = [128, 128];
pub const DEFAULT_MLP_DROPOUT: f64 = 0.2;
pub const DEFAULT_RECURRENT_HIDDEN: usize = 64;
pub const DEFAULT_FILTERS: usize = 64;
pub const DEFAULT_KERNEL_WIDTH: usize = 3;
pub const DEFAULT_POOL_WIDTH: usize = 2;

/// Knobs for [`ArchitectureSpec::with_hyperparameters`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperparameters {
    pub mlp_hidden: Vec<usize>,
    pub dropout: f64,
    pub recurrent_hidden: usize,
    pub filters: usize,
    pub kernel_width: usize,
    pub pool_width: usize,
    pub conv_blocks: usize,
    pub rcnn_conv_blocks: usize,
}

impl Default for Hyperparameters {
    fn default() -> Self {
        Self {
            mlp_hidden: DEFAULT_MLP_HIDDEN.to_vec(),
            dropout: DEFAULT_MLP_DROPOUT,
            recurrent_hidden: DEFAULT_RECURRENT_HIDDEN,
            filters: DEFAULT_FILTERS,
            kernel_width: DEFAULT_KERNEL_WIDTH,
            pool_width: DEFAULT_POOL_WIDTH,
            conv_blocks: 2,
            rcnn_conv_blocks: 1,
        }
    }
}

impl ArchitectureSpec {
    pub fn default_for(kind: ModelKind, geometry: Geometry) -> Self {
        Self::with_hyperparameters(kind, geometry, &Hyperparameters::default())
    }

    pub fn with_hyperparameters(kind: ModelKind, geometry: Geometry, hp: &Hyperparameters) -> Self {
        let conv_block = |stages: &mut Vec<Stage>| {
            stages.push(Stage::Conv {
                filters: hp.filters,
                width: hp.kernel_width,
                stride: 1,
                activation: Activation::Relu,
            });
            stages.push(Stage::MaxPool {
                window: hp.pool_width,
                stride: hp.pool_width,
            });
        };
        let mut stages = Vec::new();
        match kind {
            ModelKind::Mlp => {
                for &units in &hp.mlp_hidden {
                    stages.push(Stage::Dense {
                        units,
                        activation: Activation::Relu,
                    });
                    if hp.dropout > 0.0 {
                        stages.push(Stage::Dropout { rate: hp.dropout });
                    }
                }
            }
            ModelKind::Rnn => stages.push(Stage::Rnn {
                hidden: hp.recurrent_hidden,
            }),
            ModelKind::Lstm => stages.push(Stage::Lstm {
                hidden: hp.recurrent_hidden,
            }),
            ModelKind::Cnn => (0..hp.conv_blocks).for_each(|_| conv_block(&mut stages)),
            ModelKind::Rcnn => {
                stages.push(Stage::Rnn {
                    hidden: hp.recurrent_hidden,
                });
                (0..hp.rcnn_conv_blocks).for_each(|_| conv_block(&mut stages));
            }
            ModelKind::LinearRegression | ModelKind::Persistence => {}
        }
        Self {
            kind,
            geometry,
            stages,
        }
    }

    /// Width of the linear output head.
    pub fn head_width(&self) -> usize {
        self.geometry.output_width()
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        self.geometry.validate()?;
        let groups: Vec<StageGroup> = self.stages.iter().map(Stage::group).collect();
        let spec_err = |msg: String| Err(ModelError::Spec(format!("{}: {msg}", self.kind)));
        if groups.windows(2).any(|w| w[0] > w[1]) {
            return spec_err(
                "stages out of order (recurrent, then convolutional, then dense)".into(),
            );
        }
        let has = |g: StageGroup| groups.contains(&g);
        match self.kind {
            ModelKind::Mlp => {
                if has(StageGroup::Recurrent) || has(StageGroup::Convolutional) {
                    return spec_err("only dense and dropout stages allowed".into());
                }
            }
            ModelKind::Rnn | ModelKind::Lstm => {
                let want_lstm = self.kind == ModelKind::Lstm;
                let ok = self.stages.first().is_some_and(|s| match s {
                    Stage::Rnn { .. } => !want_lstm,
                    Stage::Lstm { .. } => want_lstm,
                    _ => false,
                });
                let mixed = self.stages.iter().any(|s| {
                    matches!(s, Stage::Lstm { .. }) && !want_lstm
                        || matches!(s, Stage::Rnn { .. }) && want_lstm
                });
                if !ok || mixed || has(StageGroup::Convolutional) {
                    return spec_err("expects recurrent stages of its own type followed by dense stages".into());
                }
            }
            ModelKind::Cnn => {
                if has(StageGroup::Recurrent) || !self.stages.iter().any(|s| matches!(s, Stage::Conv { .. })) {
                    return spec_err("expects at least one convolution and no recurrent stage".into());
                }
            }
            ModelKind::Rcnn => {
                let first_conv = self.stages.iter().position(|s| matches!(s, Stage::Conv { .. }));
                let first_rec = self.stages.iter().position(|s| matches!(s, Stage::Rnn { .. } | Stage::Lstm { .. }));
                match (first_rec, first_conv) {
                    (Some(r), Some(c)) if r < c => {}
                    (_, None) | (None, _) => {
                        return spec_err("needs a recurrent stage followed by a convolutional stage".into())
                    }
                    _ => return spec_err("the recurrent stage must precede the convolutional stage".into()),
                }
            }
            ModelKind::LinearRegression | ModelKind::Persistence => {
                if !self.stages.is_empty() {
                    return spec_err("takes no hidden stages".into());
                }
            }
        }
        // walk extents so every stage has a non-empty input
        let mut steps = self.geometry.sequence_len();
        for stage in &self.stages {
            match *stage {
                Stage::Dense { units, .. } if units == 0 => return spec_err("dense stage with zero units".into()),
                Stage::Dropout { rate } if !(0.0..1.0).contains(&rate) => {
                    return spec_err(format!("dropout rate {rate} outside [0, 1)"))
                }
                Stage::Rnn { hidden } | Stage::Lstm { hidden } if hidden == 0 => {
                    return spec_err("recurrent stage with zero hidden units".into())
                }
                Stage::Conv { filters, width, stride, .. } => {
                    if filters == 0 || width == 0 || stride == 0 {
                        return spec_err("convolution sizes must be positive".into());
                    }
                    if width > steps {
                        return spec_err(format!("kernel width {width} exceeds sequence length {steps}"));
                    }
                    steps = (steps - width) / stride + 1;
                }
                Stage::MaxPool { window, stride } => {
                    if window == 0 || stride == 0 {
                        return spec_err("pool sizes must be positive".into());
                    }
                    if window > steps {
                        return spec_err(format!("pool window {window} exceeds sequence length {steps}"));
                    }
                    steps = (steps - window) / stride + 1;
                }
                _ => {}
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn geometry() -> Geometry {
        Geometry::from_schema(&FeatureSchema::miami_river(), 72, 24)
    }

    #[test]
    fn published_geometry() {
        let g = geometry();
        assert_eq!(g.output_width(), 96);
        assert_eq!(g.flat_inputs(), 72 * 11 + 24 * 7);
        assert_eq!(g.sequence_channels(), 12);
    }

    #[test]
    fn defaults_validate() {
        for kind in ModelKind::ALL {
            ArchitectureSpec::default_for(kind, geometry()).validate().unwrap();
        }
    }

    #[test]
    fn rcnn_conv_first_rejected() {
        let mut spec = ArchitectureSpec::default_for(ModelKind::Rcnn, geometry());
        let rnn = spec.stages.remove(0);
        spec.stages.insert(2, rnn);
        assert!(matches!(spec.validate(), Err(ModelError::Spec(m)) if m.contains("precede") || m.contains("order")));
    }

    #[test]
    fn oversized_kernel_rejected() {
        let mut spec = ArchitectureSpec::default_for(ModelKind::Cnn, Geometry::from_schema(&FeatureSchema::miami_river(), 2, 1));
        spec.stages = vec![Stage::Conv {
            filters: 4,
            width: 5,
            stride: 1,
            activation: Activation::Relu,
        }];
        assert!(spec.validate().is_err());
    }

    #[test]
    fn kind_round_trip() {
        for kind in ModelKind::ALL {
            assert_eq!(kind.label().parse::<ModelKind>().unwrap(), kind);
        }
        assert!("xgboost".parse::<ModelKind>().is_err());
    }
}
