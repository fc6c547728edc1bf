use serde::{Deserialize, Serialize};

use super::DataError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeatureRole {
    /// Stage to forecast; also part of the measured history.
    Target,
    /// Observed history only.
    PastOnly,
    /// Covariate whose future values are known at forecast time.
    FutureKnown,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Feature {
    pub name: String,
    pub unit: String,
    pub role: FeatureRole,
    /// Physical lower bound of zero (rainfall, flows).
    pub nonnegative: bool,
    /// Station label for targets (e.g. "S1").
    pub location: Option<String>,
}

impl Feature {
    pub fn new(name: &str, unit: &str, role: FeatureRole) -> Self {
        Self {
            name: name.to_string(),
            unit: unit.to_string(),
            role,
            nonnegative: false,
            location: None,
        }
    }

    pub fn nonnegative(mut self) -> Self {
        self.nonnegative = true;
        self
    }

    pub fn at(mut self, location: &str) -> Self {
        self.location = Some(location.to_string());
        self
    }
}

/// Number of stage targets every schema carries.
pub const NUM_TARGETS: usize = 4;

/// Ordered feature list. Column order of the past block follows `features`;
/// output channel order follows `target_order`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSchema {
    features: Vec<Feature>,
    target_order: Vec<usize>,
}

impl FeatureSchema {
    /// Target channels are ordered as they appear in `features`.
    pub fn new(features: Vec<Feature>) -> Result<Self, DataError> {
        let order: Vec<String> = features
            .iter()
            .filter(|f| f.role == FeatureRole::Target)
            .map(|f| f.name.clone())
            .collect();
        let order: Vec<&str> = order.iter().map(String::as_str).collect();
        Self::with_target_order(features.clone(), &order)
    }

    pub fn with_target_order(features: Vec<Feature>, order: &[&str]) -> Result<Self, DataError> {
        for (i, f) in features.iter().enumerate() {
            if features[..i].iter().any(|g| g.name == f.name) {
                return Err(DataError::Schema(format!("duplicate feature {}", f.name)));
            }
        }
        let targets = features.iter().filter(|f| f.role == FeatureRole::Target).count();
        if targets != NUM_TARGETS || order.len() != NUM_TARGETS {
            return Err(DataError::Schema(format!(
                "expected {NUM_TARGETS} target features, found {targets}"
            )));
        }
        let mut target_order = Vec::with_capacity(order.len());
        for name in order {
            let idx = features
                .iter()
                .position(|f| f.name == *name && f.role == FeatureRole::Target)
                .ok_or_else(|| DataError::Schema(format!("{name} is not a target feature")))?;
            if target_order.contains(&idx) {
                return Err(DataError::Schema(format!("target {name} listed twice")));
            }
            target_order.push(idx);
        }
        Ok(Self {
            features,
            target_order,
        })
    }

    /// The hourly Miami River station set: S1, S4, S25A, S25B, S26 and
    /// grid-mean rainfall. Outputs are ordered S1, S25A, S25B, S26.
    pub fn miami_river() -> Self {
        use FeatureRole::*;
        let cfs = "cubic feet / second";
        let features = vec![
            Feature::new("Flow_S26", cfs, FutureKnown).nonnegative(),
            Feature::new("Pump_S26", cfs, FutureKnown).nonnegative(),
            Feature::new("TWS_S26", "feet", Target).at("S26"),
            Feature::new("Flow_S25A", cfs, FutureKnown).nonnegative(),
            Feature::new("TWS_S25A", "feet", Target).at("S25A"),
            Feature::new("Flow_S25B", cfs, FutureKnown).nonnegative(),
            Feature::new("Pump_S25B", cfs, FutureKnown).nonnegative(),
            Feature::new("TWS_S25B", "feet", Target).at("S25B"),
            Feature::new("WS_S1", "feet", Target).at("S1"),
            Feature::new("WS_S4", "feet", FutureKnown),
            Feature::new("Grid_Rainfall", "inches / hour", FutureKnown).nonnegative(),
        ];
        Self::with_target_order(features, &["WS_S1", "TWS_S25A", "TWS_S25B", "TWS_S26"])
            .expect("built-in schema is valid")
    }

    /// Covariates perturbed by default in robustness runs: tide and rainfall.
    pub fn default_noise_features() -> Vec<String> {
        vec!["Grid_Rainfall".to_string(), "WS_S4".to_string()]
    }

    pub fn features(&self) -> &[Feature] {
        &self.features
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn names(&self) -> Vec<&str> {
        self.features.iter().map(|f| f.name.as_str()).collect()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.features.iter().position(|f| f.name == name)
    }

    /// Feature indices of the output channels, in output order.
    pub fn target_indices(&self) -> &[usize] {
        &self.target_order
    }

    pub fn future_indices(&self) -> Vec<usize> {
        self.features
            .iter()
            .enumerate()
            .filter(|(_, f)| f.role == FeatureRole::FutureKnown)
            .map(|(i, _)| i)
            .collect()
    }

    /// Station labels of the output channels, falling back to feature names.
    pub fn locations(&self) -> Vec<String> {
        self.target_order
            .iter()
            .map(|&i| {
                let f = &self.features[i];
                f.location.clone().unwrap_or_else(|| f.name.clone())
            })
            .collect()
    }

    pub fn target_names(&self) -> Vec<String> {
        self.target_order
            .iter()
            .map(|&i| self.features[i].name.clone())
            .collect()
    }
}
