use serde::{Deserialize, Serialize};

use super::EvalError;

/// Default cutoff for extreme errors, feet.
pub const DEFAULT_EXTREME_THRESHOLD: f64 = 0.5;

/// Paired observed/predicted values. Errors are always recomputed as
/// `predicted - observed`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ErrorDistribution {
    observed: Vec<f64>,
    predicted: Vec<f64>,
}

impl ErrorDistribution {
    pub fn new(observed: Vec<f64>, predicted: Vec<f64>) -> Result<Self, EvalError> {
        if observed.len() != predicted.len() {
            return Err(EvalError::Argument(format!(
                "{} observations but {} predictions",
                observed.len(),
                predicted.len()
            )));
        }
        if observed.iter().chain(&predicted).any(|v| !v.is_finite()) {
            return Err(EvalError::Argument("non-finite value in distribution".into()));
        }
        Ok(Self { observed, predicted })
    }

    pub fn push(&mut self, observed: f64, predicted: f64) {
        self.observed.push(observed);
        self.predicted.push(predicted);
    }

    pub fn len(&self) -> usize {
        self.observed.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observed.is_empty()
    }

    pub fn observed(&self) -> &[f64] {
        &self.observed
    }

    pub fn predicted(&self) -> &[f64] {
        &self.predicted
    }

    pub fn errors(&self) -> impl Iterator<Item = f64> + '_ {
        self.predicted.iter().zip(&self.observed).map(|(p, o)| p - o)
    }

    fn non_empty(&self) -> Result<f64, EvalError> {
        if self.is_empty() {
            Err(EvalError::Argument("empty error distribution".into()))
        } else {
            Ok(self.len() as f64)
        }
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

pub fn mae(d: &ErrorDistribution) -> Result<f64, EvalError> {
    let n = d.non_empty()?;
    Ok(d.errors().map(f64::abs).sum::<f64>() / n)
}

pub fn rmse(d: &ErrorDistribution) -> Result<f64, EvalError> {
    let n = d.non_empty()?;
    Ok((d.errors().map(|e| e * e).sum::<f64>() / n).sqrt())
}

/// `1 - Σ(y - ŷ)² / Σ(y - ȳ)²`.
pub fn nse(d: &ErrorDistribution) -> Result<f64, EvalError> {
    d.non_empty()?;
    let y_bar = mean(&d.observed);
    let denom: f64 = d.observed.iter().map(|y| (y - y_bar) * (y - y_bar)).sum();
    if denom == 0.0 {
        return Err(EvalError::Undefined {
            metric: "NSE",
            reason: "observations are constant".into(),
        });
    }
    let num: f64 = d.errors().map(|e| e * e).sum();
    Ok(1.0 - num / denom)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KgeComponents {
    pub kge: f64,
    /// Pearson correlation of observed and predicted.
    pub r: f64,
    /// `std(ŷ) / std(y)`.
    pub alpha: f64,
    /// `mean(ŷ) / mean(y)`.
    pub beta: f64,
}

/// Kling-Gupta efficiency with its components.
pub fn kge(d: &ErrorDistribution) -> Result<KgeComponents, EvalError> {
    d.non_empty()?;
    let (y, p) = (&d.observed, &d.predicted);
    let (my, mp) = (mean(y), mean(p));
    if my == 0.0 {
        return Err(EvalError::Undefined {
            metric: "KGE",
            reason: "observed mean is zero, bias ratio undefined".into(),
        });
    }
    let syy: f64 = y.iter().map(|v| (v - my) * (v - my)).sum();
    let spp: f64 = p.iter().map(|v| (v - mp) * (v - mp)).sum();
    if syy == 0.0 || spp == 0.0 {
        return Err(EvalError::Undefined {
            metric: "KGE",
            reason: "zero variance, correlation undefined".into(),
        });
    }
    let syp: f64 = y.iter().zip(p).map(|(a, b)| (a - my) * (b - mp)).sum();
    let r = syp / (syy * spp).sqrt();
    let alpha = (spp / syy).sqrt();
    let beta = mp / my;
    let kge = 1.0 - ((r - 1.0).powi(2) + (alpha - 1.0).powi(2) + (beta - 1.0).powi(2)).sqrt();
    Ok(KgeComponents { kge, r, alpha, beta })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExtremeFractions {
    /// `|error| >= threshold`.
    pub total: f64,
    /// `error >= threshold`.
    pub over: f64,
    /// `error <= -threshold`.
    pub under: f64,
    pub count: usize,
    pub threshold: f64,
}

pub fn extreme_error_fraction(d: &ErrorDistribution, threshold: f64) -> Result<ExtremeFractions, EvalError> {
    let n = d.non_empty()?;
    if !(threshold > 0.0) {
        return Err(EvalError::Argument(format!("threshold {threshold} must be > 0")));
    }
    let (mut over, mut under) = (0usize, 0usize);
    for e in d.errors() {
        if e >= threshold {
            over += 1;
        } else if e <= -threshold {
            under += 1;
        }
    }
    Ok(ExtremeFractions {
        total: (over + under) as f64 / n,
        over: over as f64 / n,
        under: under as f64 / n,
        count: over + under,
        threshold,
    })
}
