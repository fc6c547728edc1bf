use serde::{Deserialize, Serialize};

use super::{DataError, TimeSeriesFrame};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureRange {
    pub name: String,
    pub min: f64,
    pub max: f64,
    /// `min == max` on the training split; such a feature maps to 0.
    pub degenerate: bool,
}

impl FeatureRange {
    pub fn span(&self) -> f64 {
        self.max - self.min
    }
}

/// Per-feature min-max scaling fitted on the training split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    features: Vec<FeatureRange>,
}

impl Normalizer {
    pub fn fit(train: &TimeSeriesFrame) -> Result<Self, DataError> {
        if train.is_empty() {
            return Err(DataError::InsufficientData {
                length: 0,
                required: 1,
            });
        }
        let features = train
            .names()
            .iter()
            .enumerate()
            .map(|(i, name)| {
                let col = train.column(i);
                let min = col.iter().copied().fold(f64::INFINITY, f64::min);
                let max = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                FeatureRange {
                    name: name.clone(),
                    min,
                    max,
                    degenerate: min == max,
                }
            })
            .collect();
        Ok(Self { features })
    }

    pub fn features(&self) -> &[FeatureRange] {
        &self.features
    }

    pub fn range(&self, feature: usize) -> &FeatureRange {
        &self.features[feature]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.features.iter().position(|f| f.name == name)
    }

    /// `(x - min) / (max - min)`; degenerate features map to 0.
    pub fn normalize_value(&self, feature: usize, x: f64) -> f64 {
        let r = &self.features[feature];
        if r.degenerate {
            0.0
        } else {
            (x - r.min) / (r.max - r.min)
        }
    }

    pub fn denormalize_value(&self, feature: usize, x: f64) -> Result<f64, DataError> {
        let r = &self.features[feature];
        if r.degenerate {
            return Err(DataError::Degenerate(r.name.clone()));
        }
        Ok(x * (r.max - r.min) + r.min)
    }

    fn check(&self, frame: &TimeSeriesFrame) -> Result<(), DataError> {
        let same = frame.names().len() == self.features.len()
            && frame.names().iter().zip(&self.features).all(|(a, b)| *a == b.name);
        if !same {
            return Err(DataError::Schema(format!(
                "frame columns {:?} do not match normalizer features",
                frame.names()
            )));
        }
        Ok(())
    }

    pub fn apply(&self, frame: &TimeSeriesFrame) -> Result<TimeSeriesFrame, DataError> {
        self.check(frame)?;
        let mut out = frame.clone();
        for (i, col) in out.columns_mut().iter_mut().enumerate() {
            col.iter_mut().for_each(|v| *v = self.normalize_value(i, *v));
        }
        Ok(out)
    }

    /// Exact inverse of [`apply`](Self::apply); fails on degenerate features.
    pub fn invert(&self, frame: &TimeSeriesFrame) -> Result<TimeSeriesFrame, DataError> {
        self.check(frame)?;
        if let Some(r) = self.features.iter().find(|r| r.degenerate) {
            return Err(DataError::Degenerate(r.name.clone()));
        }
        let mut out = frame.clone();
        for (i, col) in out.columns_mut().iter_mut().enumerate() {
            for v in col.iter_mut() {
                *v = self.denormalize_value(i, *v)?;
            }
        }
        Ok(out)
    }
}
