use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{DataError, FeatureRole, FeatureSchema, Normalizer, WindowSample};

/// Noise scale and lower clamp for one covariate, in the units the samples
/// are expressed in.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CovariateScale {
    /// Training range `x_max - x_min`.
    pub range: f64,
    pub lower_bound: Option<f64>,
}

/// Per-schema-feature noise scales.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseScales {
    scales: Vec<CovariateScale>,
}

impl NoiseScales {
    pub fn from_scales(scales: Vec<CovariateScale>) -> Self {
        Self { scales }
    }

    /// Scales for samples in physical units.
    pub fn physical(schema: &FeatureSchema, normalizer: &Normalizer) -> Self {
        let scales = schema
            .features()
            .iter()
            .zip(normalizer.features())
            .map(|(f, r)| CovariateScale {
                range: r.span(),
                lower_bound: f.nonnegative.then_some(0.0),
            })
            .collect();
        Self { scales }
    }

    /// Scales for min-max normalized samples: the training range maps to 1 and
    /// a physical zero maps to `-min / (max - min)`.
    pub fn normalized(schema: &FeatureSchema, normalizer: &Normalizer) -> Self {
        let scales = schema
            .features()
            .iter()
            .zip(normalizer.features())
            .enumerate()
            .map(|(i, (f, r))| {
                if r.degenerate {
                    CovariateScale {
                        range: 0.0,
                        lower_bound: None,
                    }
                } else {
                    CovariateScale {
                        range: 1.0,
                        lower_bound: f.nonnegative.then(|| normalizer.normalize_value(i, 0.0)),
                    }
                }
            })
            .collect();
        Self { scales }
    }
}

/// Perturbs the future covariate block of every sample with zero-mean
/// Gaussian noise of standard deviation `fraction × range`, clamped at each
/// feature's lower bound. Past blocks and targets are untouched. Deterministic
/// per `seed`.
pub fn inject_noise(
    samples: &[WindowSample],
    fraction: f64,
    features: &[String],
    seed: u64,
    schema: &FeatureSchema,
    scales: &NoiseScales,
) -> Result<Vec<WindowSample>, DataError> {
    if !(fraction >= 0.0) || !fraction.is_finite() {
        return Err(DataError::Argument(format!(
            "noise fraction must be a finite value >= 0, got {fraction}"
        )));
    }
    if scales.scales.len() != schema.len() {
        return Err(DataError::Schema(format!(
            "{} noise scales for {} features",
            scales.scales.len(),
            schema.len()
        )));
    }
    let future = schema.future_indices();
    let mut selected = Vec::with_capacity(features.len());
    for name in features {
        let idx = schema
            .index_of(name)
            .ok_or_else(|| DataError::Schema(format!("unknown feature {name}")))?;
        if schema.features()[idx].role != FeatureRole::FutureKnown {
            return Err(DataError::Schema(format!("{name} is not a future-known covariate")));
        }
        let slot = future.iter().position(|&f| f == idx).expect("future-known");
        selected.push((slot, scales.scales[idx]));
    }
    let mut out = samples.to_vec();
    if fraction == 0.0 || selected.is_empty() {
        return Ok(out);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dists: Vec<Option<Normal<f64>>> = selected
        .iter()
        .map(|(_, s)| {
            let sd = fraction * s.range;
            (sd > 0.0).then(|| Normal::new(0.0, sd).expect("finite positive sd"))
        })
        .collect();
    for sample in out.iter_mut() {
        let width = sample.num_covariates();
        let horizon = sample.horizon();
        let block = sample.future_mut();
        for step in 0..horizon {
            for ((slot, scale), dist) in selected.iter().zip(&dists) {
                let Some(dist) = dist else { continue };
                let v = &mut block[step * width + slot];
                let mut noisy = *v + dist.sample(&mut rng);
                if let Some(lo) = scale.lower_bound {
                    noisy = noisy.max(lo);
                }
                *v = noisy;
            }
        }
    }
    Ok(out)
}
