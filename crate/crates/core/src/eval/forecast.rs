use std::collections::HashMap;
use std::io::{Read, Write};

use chrono::{Duration, NaiveDateTime};

use super::tables::{LeadSlice, LocationCell, MetricsCell, MetricsReport, SliceCell};
use super::{ErrorDistribution, EvalError};
use crate::data::{format_timestamp, parse_timestamp, FeatureSchema, Normalizer, TimeSeriesFrame, WindowSample};
use crate::nn::Tensor;

/// Forecasts of one model in feet: value `(i, j, c)` predicts target `c` at
/// `anchors[i] + (j + 1)` hours.
#[derive(Debug, Clone, PartialEq)]
pub struct Forecasts {
    pub model: String,
    horizon: usize,
    /// Output channel names, matching observation columns.
    targets: Vec<String>,
    /// Display label per channel.
    locations: Vec<String>,
    anchors: Vec<NaiveDateTime>,
    values: Vec<f64>,
}

impl Forecasts {
    pub fn new(
        model: impl Into<String>,
        horizon: usize,
        targets: Vec<String>,
        locations: Vec<String>,
        anchors: Vec<NaiveDateTime>,
        values: Vec<f64>,
    ) -> Result<Self, EvalError> {
        if targets.len() != locations.len() || targets.is_empty() {
            return Err(EvalError::Argument(format!(
                "{} targets but {} location labels",
                targets.len(),
                locations.len()
            )));
        }
        if horizon == 0 || values.len() != anchors.len() * horizon * targets.len() {
            return Err(EvalError::Argument(format!(
                "{} values for {} anchors × {horizon} steps × {} targets",
                values.len(),
                anchors.len(),
                targets.len()
            )));
        }
        Ok(Self {
            model: model.into(),
            horizon,
            targets,
            locations,
            anchors,
            values,
        })
    }

    /// Denormalizes `[B, k, targets]` model output for `samples`.
    pub fn from_normalized(
        model: impl Into<String>,
        samples: &[WindowSample],
        predictions: &Tensor,
        normalizer: &Normalizer,
        schema: &FeatureSchema,
    ) -> Result<Self, EvalError> {
        let targets = schema.target_names();
        let horizon = samples.first().map_or(predictions.shape().get(1).copied().unwrap_or(1), |s| s.horizon());
        let expected = [samples.len(), horizon, targets.len()];
        if predictions.shape() != expected {
            return Err(EvalError::Argument(format!(
                "prediction shape {:?}, expected {expected:?}",
                predictions.shape()
            )));
        }
        let idx = schema.target_indices();
        let mut values = Vec::with_capacity(predictions.len());
        for (n, &v) in predictions.data().iter().enumerate() {
            values.push(normalizer.denormalize_value(idx[n % idx.len()], v)?);
        }
        Self::new(
            model,
            horizon,
            targets.iter().map(|s| s.to_string()).collect(),
            schema.locations().iter().map(|s| s.to_string()).collect(),
            samples.iter().map(|s| s.anchor).collect(),
            values,
        )
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn anchors(&self) -> &[NaiveDateTime] {
        &self.anchors
    }

    pub fn targets(&self) -> &[String] {
        &self.targets
    }

    pub fn locations(&self) -> &[String] {
        &self.locations
    }

    pub fn len(&self) -> usize {
        self.anchors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.anchors.is_empty()
    }

    pub fn value(&self, sample: usize, step: usize, channel: usize) -> f64 {
        self.values[(sample * self.horizon + step) * self.targets.len() + channel]
    }

    /// Observed values in the same `(i, j, c)` layout.
    pub fn align(&self, observations: &TimeSeriesFrame) -> Result<Vec<f64>, EvalError> {
        let cols: Vec<usize> = self
            .targets
            .iter()
            .map(|t| {
                observations
                    .names()
                    .iter()
                    .position(|n| n == t)
                    .ok_or_else(|| EvalError::Schema(format!("observations lack column {t}")))
            })
            .collect::<Result<_, _>>()?;
        let mut out = Vec::with_capacity(self.values.len());
        for &anchor in &self.anchors {
            for j in 0..self.horizon {
                let at = anchor + Duration::hours(j as i64 + 1);
                let row = observations.index_of(at).ok_or_else(|| {
                    EvalError::Alignment(format!("no observation at {} for {}", format_timestamp(at), self.model))
                })?;
                out.extend(cols.iter().map(|&c| observations.value(c, row)));
            }
        }
        Ok(out)
    }

    /// Same anchors, horizon and channels as `other`.
    pub fn check_paired(&self, other: &Forecasts) -> Result<(), EvalError> {
        if self.anchors != other.anchors || self.horizon != other.horizon || self.targets != other.targets {
            return Err(EvalError::Alignment(format!(
                "{} and {} cover different anchors, horizons or targets",
                self.model, other.model
            )));
        }
        Ok(())
    }

    /// Observed/predicted pairs restricted to one step (1-based) and/or one
    /// channel, in `(i, j, c)` order.
    pub(crate) fn select(
        &self,
        observed: &[f64],
        step: Option<usize>,
        channel: Option<usize>,
    ) -> Result<ErrorDistribution, EvalError> {
        let c_n = self.targets.len();
        let mut d = ErrorDistribution::default();
        for i in 0..self.anchors.len() {
            for j in 0..self.horizon {
                if step.is_some_and(|s| s != j + 1) {
                    continue;
                }
                for c in 0..c_n {
                    if channel.is_some_and(|x| x != c) {
                        continue;
                    }
                    let n = (i * self.horizon + j) * c_n + c;
                    d.push(observed[n], self.values[n]);
                }
            }
        }
        Ok(d)
    }
}

fn slice_step(slice: LeadSlice, horizon: usize) -> Result<Option<usize>, EvalError> {
    match slice {
        LeadSlice::Entire => Ok(None),
        LeadSlice::Step(s) if (1..=horizon).contains(&s) => Ok(Some(s)),
        LeadSlice::Step(s) => Err(EvalError::Argument(format!("lead time {s} outside 1..={horizon}"))),
    }
}

/// Metrics per lead-time slice (all locations pooled), per location (all
/// steps pooled), per location and slice, and overall.
pub fn breakdown(
    forecasts: &Forecasts,
    observations: &TimeSeriesFrame,
    slices: &[LeadSlice],
    threshold: f64,
) -> Result<MetricsReport, EvalError> {
    if forecasts.is_empty() {
        return Err(EvalError::Argument(format!("{} has no forecasts", forecasts.model)));
    }
    let observed = forecasts.align(observations)?;
    let cell = |step: Option<usize>, channel: Option<usize>| -> Result<MetricsCell, EvalError> {
        MetricsCell::compute(&forecasts.select(&observed, step, channel)?, threshold)
    };
    let mut by_lead = Vec::with_capacity(slices.len());
    for &slice in slices {
        by_lead.push(SliceCell {
            slice,
            cell: cell(slice_step(slice, forecasts.horizon)?, None)?,
        });
    }
    let mut by_location = Vec::with_capacity(forecasts.locations.len());
    for (c, loc) in forecasts.locations.iter().enumerate() {
        let mut per_slice = Vec::with_capacity(slices.len());
        for &slice in slices {
            per_slice.push(SliceCell {
                slice,
                cell: cell(slice_step(slice, forecasts.horizon)?, Some(c))?,
            });
        }
        by_location.push(LocationCell {
            location: loc.clone(),
            cell: cell(None, Some(c))?,
            by_lead: per_slice,
        });
    }
    Ok(MetricsReport {
        model: forecasts.model.clone(),
        threshold,
        horizon: forecasts.horizon,
        samples: forecasts.len(),
        overall: cell(None, None)?,
        by_lead,
        by_location,
    })
}

/// Timestamped stage series from an external simulator, one column per
/// target.
#[derive(Debug, Clone, PartialEq)]
pub struct ExternalSeries {
    pub name: String,
    targets: Vec<String>,
    values: HashMap<NaiveDateTime, Vec<f64>>,
}

impl ExternalSeries {
    pub fn new(name: impl Into<String>, targets: Vec<String>) -> Self {
        Self {
            name: name.into(),
            targets,
            values: HashMap::new(),
        }
    }

    pub fn insert(&mut self, at: NaiveDateTime, row: Vec<f64>) -> Result<(), EvalError> {
        if row.len() != self.targets.len() {
            return Err(EvalError::Argument(format!(
                "{} values for {} targets",
                row.len(),
                self.targets.len()
            )));
        }
        self.values.insert(at, row);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Lead-time-invariant forecasts on the anchors of `like`: every step
    /// reads the external value at its own target time.
    pub fn as_forecasts(&self, like: &Forecasts) -> Result<Forecasts, EvalError> {
        let perm: Vec<usize> = like
            .targets
            .iter()
            .map(|t| {
                self.targets
                    .iter()
                    .position(|x| x == t)
                    .ok_or_else(|| EvalError::Schema(format!("{} lacks column {t}", self.name)))
            })
            .collect::<Result<_, _>>()?;
        let mut values = Vec::with_capacity(like.values.len());
        for &anchor in &like.anchors {
            for j in 0..like.horizon {
                let at = anchor + Duration::hours(j as i64 + 1);
                let row = self.values.get(&at).ok_or_else(|| {
                    EvalError::Alignment(format!("{} has no value at {}", self.name, format_timestamp(at)))
                })?;
                values.extend(perm.iter().map(|&p| row[p]));
            }
        }
        Forecasts::new(
            self.name.clone(),
            like.horizon,
            like.targets.clone(),
            like.locations.clone(),
            like.anchors.clone(),
            values,
        )
    }
}

/// Parses `timestamp,<target>...` CSV. Every target in `schema` must be
/// present; other columns are ignored.
pub fn read_external<R: Read>(name: &str, reader: R, schema: &FeatureSchema) -> Result<ExternalSeries, EvalError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers().map_err(|e| EvalError::Csv(e.to_string()))?.clone();
    let find = |n: &str| headers.iter().position(|h| h == n);
    let ts = find("timestamp").ok_or_else(|| EvalError::Schema("external file lacks a timestamp column".into()))?;
    let targets: Vec<String> = schema.target_names().iter().map(|s| s.to_string()).collect();
    let cols: Vec<usize> = targets
        .iter()
        .map(|t| find(t).ok_or_else(|| EvalError::Schema(format!("external file lacks column {t}"))))
        .collect::<Result<_, _>>()?;
    let mut series = ExternalSeries::new(name, targets);
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| EvalError::Csv(e.to_string()))?;
        let raw = rec.get(ts).unwrap_or("");
        let at = parse_timestamp(raw)
            .ok_or_else(|| EvalError::Csv(format!("line {}: bad timestamp {raw:?}", line + 2)))?;
        let row = cols
            .iter()
            .map(|&c| {
                let v = rec.get(c).unwrap_or("");
                v.parse::<f64>()
                    .ok()
                    .filter(|x| x.is_finite())
                    .ok_or_else(|| EvalError::Csv(format!("line {}: bad value {v:?}", line + 2)))
            })
            .collect::<Result<Vec<_>, _>>()?;
        series.insert(at, row)?;
    }
    Ok(series)
}

/// Scores an external series on the anchors of `like`.
pub fn compare_external(
    external: &ExternalSeries,
    like: &Forecasts,
    observations: &TimeSeriesFrame,
    slices: &[LeadSlice],
    threshold: f64,
) -> Result<MetricsReport, EvalError> {
    breakdown(&external.as_forecasts(like)?, observations, slices, threshold)
}

/// One row per forecast value:
/// `location,lead_time,timestamp,observed,predicted,error`.
pub fn write_raw_errors<W: Write>(
    forecasts: &Forecasts,
    observations: &TimeSeriesFrame,
    writer: W,
) -> Result<(), EvalError> {
    let observed = forecasts.align(observations)?;
    let csv_err = |e: csv::Error| EvalError::Csv(e.to_string());
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["location", "lead_time", "timestamp", "observed", "predicted", "error"])
        .map_err(csv_err)?;
    let c_n = forecasts.targets.len();
    for (i, &anchor) in forecasts.anchors.iter().enumerate() {
        for j in 0..forecasts.horizon {
            let at = format_timestamp(anchor + Duration::hours(j as i64 + 1));
            for c in 0..c_n {
                let n = (i * forecasts.horizon + j) * c_n + c;
                let (o, p) = (observed[n], forecasts.values[n]);
                w.write_record([
                    forecasts.locations[c].clone(),
                    (j + 1).to_string(),
                    at.clone(),
                    o.to_string(),
                    p.to_string(),
                    (p - o).to_string(),
                ])
                .map_err(csv_err)?;
            }
        }
    }
    w.flush().map_err(|e| EvalError::Csv(e.to_string()))
}
