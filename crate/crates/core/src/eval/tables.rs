use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{
    extreme_error_fraction, kge, mae, nse, rmse, wilcoxon_signed_rank, ErrorDistribution, EvalError,
    ExtremeFractions, Forecasts, KgeComponents, WilcoxonMode,
};
use crate::data::TimeSeriesFrame;

pub const REPORT_FORMAT: &str = "stagecast-report/1";

/// Lead-time columns of the tables: one forecast step (1-based) or the whole
/// horizon pooled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum LeadSlice {
    Step(usize),
    Entire,
}

impl fmt::Display for LeadSlice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LeadSlice::Step(s) => write!(f, "t+{s}"),
            LeadSlice::Entire => f.write_str("entire"),
        }
    }
}

impl From<LeadSlice> for String {
    fn from(s: LeadSlice) -> Self {
        s.to_string()
    }
}

impl FromStr for LeadSlice {
    type Err = EvalError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let t = s.trim().to_ascii_lowercase();
        if t == "entire" || t == "all" {
            return Ok(LeadSlice::Entire);
        }
        let digits = t.strip_prefix("t+").unwrap_or(&t);
        match digits.parse::<usize>() {
            Ok(n) if n > 0 => Ok(LeadSlice::Step(n)),
            _ => Err(EvalError::Argument(format!("bad lead-time slice {s:?}"))),
        }
    }
}

impl TryFrom<String> for LeadSlice {
    type Error = EvalError;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

/// Resolves a slice preset (`table2`: 1/8/16/24, `figure4`: 1/12/18/24, each
/// plus the entire horizon, steps beyond `horizon` dropped) or a comma list
/// such as `1,6,entire`.
pub fn lead_slices(spec: &str, horizon: usize) -> Result<Vec<LeadSlice>, EvalError> {
    let preset: Option<&[usize]> = match spec.trim() {
        "table2" => Some(&[1, 8, 16, 24]),
        "figure4" => Some(&[1, 12, 18, 24]),
        _ => None,
    };
    if let Some(steps) = preset {
        let mut out: Vec<LeadSlice> = steps
            .iter()
            .filter(|&&s| s <= horizon)
            .map(|&s| LeadSlice::Step(s))
            .collect();
        out.push(LeadSlice::Entire);
        return Ok(out);
    }
    let out: Vec<LeadSlice> = spec
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(str::parse)
        .collect::<Result<_, _>>()?;
    if out.is_empty() {
        return Err(EvalError::Argument("no lead-time slices given".into()));
    }
    if let Some(LeadSlice::Step(s)) = out.iter().find(|s| matches!(s, LeadSlice::Step(n) if *n > horizon)) {
        return Err(EvalError::Argument(format!("lead time {s} exceeds horizon {horizon}")));
    }
    Ok(out)
}

/// All metrics of one pooled set of forecasts. NSE and KGE are absent where
/// undefined (constant or zero-mean observations).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsCell {
    pub n: usize,
    pub mae: f64,
    pub rmse: f64,
    pub nse: Option<f64>,
    pub kge: Option<KgeComponents>,
    pub extreme: ExtremeFractions,
}

impl MetricsCell {
    pub fn compute(d: &ErrorDistribution, threshold: f64) -> Result<Self, EvalError> {
        Ok(Self {
            n: d.len(),
            mae: mae(d)?,
            rmse: rmse(d)?,
            nse: undefined_ok(nse(d))?,
            kge: undefined_ok(kge(d))?,
            extreme: extreme_error_fraction(d, threshold)?,
        })
    }
}

fn undefined_ok<T>(r: Result<T, EvalError>) -> Result<Option<T>, EvalError> {
    match r {
        Ok(v) => Ok(Some(v)),
        Err(EvalError::Undefined { .. }) => Ok(None),
        Err(e) => Err(e),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliceCell {
    pub slice: LeadSlice,
    pub cell: MetricsCell,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocationCell {
    pub location: String,
    /// All steps pooled.
    pub cell: MetricsCell,
    pub by_lead: Vec<SliceCell>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub model: String,
    pub threshold: f64,
    pub horizon: usize,
    pub samples: usize,
    pub overall: MetricsCell,
    pub by_lead: Vec<SliceCell>,
    pub by_location: Vec<LocationCell>,
}

impl MetricsReport {
    pub fn lead(&self, slice: LeadSlice) -> Option<&MetricsCell> {
        self.by_lead.iter().find(|s| s.slice == slice).map(|s| &s.cell)
    }

    pub fn location(&self, name: &str) -> Option<&MetricsCell> {
        self.by_location.iter().find(|l| l.location == name).map(|l| &l.cell)
    }
}

/// Signed MAE change (percent) per slice after perturbing the covariates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustnessRow {
    pub model: String,
    pub fraction: f64,
    pub changes: Vec<(LeadSlice, f64)>,
}

impl RobustnessRow {
    pub fn formatted(&self) -> Vec<String> {
        self.changes.iter().map(|(_, p)| format_change(*p)).collect()
    }
}

/// `100 (MAE_noisy - MAE_clean) / MAE_clean` per slice of `clean`.
pub fn relative_mae_change(clean: &MetricsReport, noisy: &MetricsReport, fraction: f64) -> Result<RobustnessRow, EvalError> {
    let mut changes = Vec::with_capacity(clean.by_lead.len());
    for s in &clean.by_lead {
        let other = noisy
            .lead(s.slice)
            .ok_or_else(|| EvalError::Argument(format!("perturbed report lacks slice {}", s.slice)))?;
        let pct = if other.mae == s.cell.mae {
            0.0
        } else if s.cell.mae == 0.0 {
            f64::INFINITY
        } else {
            100.0 * (other.mae - s.cell.mae) / s.cell.mae
        };
        changes.push((s.slice, pct));
    }
    Ok(RobustnessRow {
        model: clean.model.clone(),
        fraction,
        changes,
    })
}

/// `↑ 0.047%` for increases, `↓ 0.005%` for decreases, `0.000%` for none.
pub fn format_change(pct: f64) -> String {
    if pct > 0.0 {
        format!("↑ {pct:.3}%")
    } else if pct < 0.0 {
        format!("↓ {:.3}%", -pct)
    } else {
        "0.000%".to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PValueTable {
    pub title: String,
    pub rows: Vec<String>,
    pub columns: Vec<String>,
    pub p_values: Vec<Vec<f64>>,
    /// Cells where every paired difference was zero.
    pub degenerate: Vec<Vec<bool>>,
}

fn abs_errors(f: &Forecasts, observed: &[f64], step: Option<usize>, channel: Option<usize>) -> Result<Vec<f64>, EvalError> {
    Ok(f.select(observed, step, channel)?.errors().map(f64::abs).collect())
}

/// Signed-rank p-values of `reference` against each of `others` on paired
/// absolute errors, one row per slice.
pub fn pvalue_by_lead(
    reference: &Forecasts,
    others: &[&Forecasts],
    observations: &TimeSeriesFrame,
    slices: &[LeadSlice],
    mode: WilcoxonMode,
) -> Result<PValueTable, EvalError> {
    let obs = reference.align(observations)?;
    let mut table = PValueTable {
        title: format!("P values between {} and other models", reference.model),
        rows: slices.iter().map(|s| s.to_string().to_uppercase()).collect(),
        columns: others.iter().map(|o| format!("{}_{}", reference.model, o.model)).collect(),
        p_values: Vec::new(),
        degenerate: Vec::new(),
    };
    for o in others {
        reference.check_paired(o)?;
    }
    for &slice in slices {
        let step = match slice {
            LeadSlice::Step(s) => Some(s),
            LeadSlice::Entire => None,
        };
        let a = abs_errors(reference, &obs, step, None)?;
        let (mut row, mut flags) = (Vec::new(), Vec::new());
        for o in others {
            let r = wilcoxon_signed_rank(&a, &abs_errors(o, &obs, step, None)?, mode)?;
            row.push(r.p_value);
            flags.push(r.degenerate());
        }
        table.p_values.push(row);
        table.degenerate.push(flags);
    }
    Ok(table)
}

/// Signed-rank p-values of each model against `baseline` at forecast step
/// `step`, one row per location.
pub fn pvalue_by_location(
    models: &[&Forecasts],
    baseline: &Forecasts,
    observations: &TimeSeriesFrame,
    step: usize,
    mode: WilcoxonMode,
) -> Result<PValueTable, EvalError> {
    let obs = baseline.align(observations)?;
    for m in models {
        m.check_paired(baseline)?;
    }
    let mut table = PValueTable {
        title: format!("P values between models (t+{step}) and {} at each location", baseline.model),
        rows: baseline.locations().to_vec(),
        columns: models.iter().map(|m| format!("{}_{}", m.model, baseline.model)).collect(),
        p_values: Vec::new(),
        degenerate: Vec::new(),
    };
    for c in 0..baseline.locations().len() {
        let b = abs_errors(baseline, &obs, Some(step), Some(c))?;
        let (mut row, mut flags) = (Vec::new(), Vec::new());
        for m in models {
            let r = wilcoxon_signed_rank(&abs_errors(m, &obs, Some(step), Some(c))?, &b, mode)?;
            row.push(r.p_value);
            flags.push(r.degenerate());
        }
        table.p_values.push(row);
        table.degenerate.push(flags);
    }
    Ok(table)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub model: String,
    pub samples: usize,
    pub median_seconds: f64,
    pub samples_per_second: Option<f64>,
    /// External seconds over model seconds.
    pub speedup: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelRow {
    pub model: String,
    pub values: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricBlock {
    pub metric: String,
    pub rows: Vec<ModelRow>,
}

/// Report document with the published table layouts:
///
/// * `lead_time_metrics`: MAE/RMSE/NSE/KGE blocks, model rows, slice columns;
/// * `lead_time_extremes`: extreme-error percentage, model rows, slice columns;
/// * `location_mae` / `location_extremes`: model rows, location columns;
/// * `p_values`: signed-rank tables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub format: String,
    pub threshold: f64,
    pub slices: Vec<LeadSlice>,
    pub locations: Vec<String>,
    pub lead_time_metrics: Vec<MetricBlock>,
    pub lead_time_extremes: Vec<ModelRow>,
    pub location_mae: Vec<ModelRow>,
    pub location_extremes: Vec<ModelRow>,
    pub p_values: Vec<PValueTable>,
    pub models: Vec<MetricsReport>,
}

impl EvaluationReport {
    pub fn assemble(reports: Vec<MetricsReport>, p_values: Vec<PValueTable>) -> Result<Self, EvalError> {
        let first = reports
            .first()
            .ok_or_else(|| EvalError::Argument("no model reports to assemble".into()))?;
        let slices: Vec<LeadSlice> = first.by_lead.iter().map(|s| s.slice).collect();
        let locations: Vec<String> = first.by_location.iter().map(|l| l.location.clone()).collect();
        let threshold = first.threshold;
        for r in &reports {
            let same_slices = r.by_lead.iter().map(|s| s.slice).eq(slices.iter().copied());
            let same_locs = r.by_location.iter().map(|l| &l.location).eq(locations.iter());
            if !same_slices || !same_locs || r.threshold != threshold {
                return Err(EvalError::Argument(format!(
                    "{} was scored with different slices, locations or threshold",
                    r.model
                )));
            }
        }
        type Pick = fn(&MetricsCell) -> Option<f64>;
        let metrics: [(&str, Pick); 4] = [
            ("MAE (ft)", |c| Some(c.mae)),
            ("RMSE (ft)", |c| Some(c.rmse)),
            ("NSE", |c| c.nse),
            ("KGE", |c| c.kge.map(|k| k.kge)),
        ];
        let lead_row = |r: &MetricsReport, pick: Pick| ModelRow {
            model: r.model.clone(),
            values: r.by_lead.iter().map(|s| pick(&s.cell)).collect(),
        };
        let loc_row = |r: &MetricsReport, pick: Pick| ModelRow {
            model: r.model.clone(),
            values: r.by_location.iter().map(|l| pick(&l.cell)).collect(),
        };
        let extreme_pct: Pick = |c| Some(100.0 * c.extreme.total);
        Ok(Self {
            format: REPORT_FORMAT.to_string(),
            threshold,
            lead_time_metrics: metrics
                .iter()
                .map(|(name, pick)| MetricBlock {
                    metric: name.to_string(),
                    rows: reports.iter().map(|r| lead_row(r, *pick)).collect(),
                })
                .collect(),
            lead_time_extremes: reports.iter().map(|r| lead_row(r, extreme_pct)).collect(),
            location_mae: reports.iter().map(|r| loc_row(r, |c| Some(c.mae))).collect(),
            location_extremes: reports.iter().map(|r| loc_row(r, extreme_pct)).collect(),
            slices,
            locations,
            p_values,
            models: reports,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slice_presets_and_parsing() {
        let t2 = lead_slices("table2", 24).unwrap();
        assert_eq!(
            t2,
            vec![
                LeadSlice::Step(1),
                LeadSlice::Step(8),
                LeadSlice::Step(16),
                LeadSlice::Step(24),
                LeadSlice::Entire
            ]
        );
        assert_eq!(lead_slices("figure4", 12).unwrap().len(), 3);
        assert_eq!(lead_slices("t+2, entire", 4).unwrap(), vec![LeadSlice::Step(2), LeadSlice::Entire]);
        assert!(lead_slices("30", 24).is_err());
        assert!(lead_slices("0", 24).is_err());
        let json = serde_json::to_string(&t2).unwrap();
        assert_eq!(json, r#"["t+1","t+8","t+16","t+24","entire"]"#);
    }

    #[test]
    fn change_formatting() {
        assert_eq!(format_change(0.047), "↑ 0.047%");
        assert_eq!(format_change(-0.005), "↓ 0.005%");
        assert_eq!(format_change(0.0), "0.000%");
    }
}
