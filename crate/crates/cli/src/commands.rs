use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use stagecast::data::{inject_noise, parse_timestamp, write_frame, Normalizer, NoiseScales};
use stagecast::eval::{
    breakdown, compare_external, lead_slices, pvalue_by_lead, pvalue_by_location, read_external,
    relative_mae_change, speedup, time_inference, write_raw_errors, BenchRow, EvaluationReport, Forecasts,
    LeadSlice, MetricsReport,
};
use stagecast::models::{
    build_model, fit_linear_regression, save_checkpoint, ArchitectureSpec, Geometry, ModelKind, SurrogateModel,
};
use stagecast::synthetic::river_like_frame;
use stagecast::train::train;

use crate::config::RunConfig;
use crate::error::{CliError, Stage};
use crate::manifest::{write_json, Manifest};
use crate::pipeline::{self, labels, load_model, observed_targets, Dataset};

pub const ROBUSTNESS_FORMAT: &str = "stagecast-robustness/1";
pub const BENCH_FORMAT: &str = "stagecast-bench/1";

fn out_dir(cfg: &RunConfig) -> Result<PathBuf, CliError> {
    std::fs::create_dir_all(&cfg.out).map_err(|e| CliError::io("output", &cfg.out, e))?;
    Ok(cfg.out.clone())
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::io("output", path, e))
}

/// load → split → normalize → window → build → train, then checkpoint,
/// history and manifest.
pub fn cmd_train(cfg: &RunConfig) -> Result<Vec<PathBuf>, CliError> {
    let ds = pipeline::load(cfg)?;
    let norm = Normalizer::fit(&ds.split.train).stage("normalize")?;
    let windows = ds.train_windows(&norm, cfg)?;
    let geometry = Geometry::from_schema(&ds.schema, cfg.w, cfg.k);
    let out = out_dir(cfg)?;
    let name = cfg.model.label().to_ascii_lowercase();
    let mut manifest = Manifest::new("train", cfg);
    manifest.input("data", &ds.path)?;
    let mut written = Vec::new();

    let (model, history) = match cfg.model {
        ModelKind::Persistence => {
            let spec = ArchitectureSpec::default_for(cfg.model, geometry);
            (build_model(spec, cfg.seed).stage("build")?, None)
        }
        ModelKind::LinearRegression => (fit_linear_regression(&windows, &geometry, cfg.ridge).stage("train")?, None),
        kind => {
            let spec = ArchitectureSpec::with_hyperparameters(kind, geometry, &cfg.hyper);
            spec.validate().stage("build")?;
            let model = build_model(spec, cfg.seed).stage("build")?;
            log::info!(
                "training {} ({} parameters) on {} windows",
                kind,
                model.num_parameters(),
                windows.len()
            );
            let (model, history) = train(model, &windows, &cfg.train_config()).stage("train")?;
            (model, Some(history))
        }
    };
    let model = model.with_normalizer(norm, ds.schema.clone());

    let ckpt = out.join(format!("{name}.checkpoint.json"));
    save_checkpoint(&model, &ckpt).stage("checkpoint")?;
    manifest.output("checkpoint", &ckpt)?;
    written.push(ckpt);
    if let Some(history) = history {
        let path = out.join(format!("{name}.history.csv"));
        history
            .write_csv(create(&path)?)
            .map_err(|e| CliError::io("output", &path, e))?;
        manifest.output("history", &path)?;
        written.push(path);
        if let Some(best) = history.best() {
            println!(
                "{}: best epoch {} of {}, train loss {:.6e}, validation loss {}",
                model.kind(),
                history.best_epoch,
                history.epochs.len(),
                best.train_loss,
                best.val_loss.map_or("n/a".to_string(), |v| format!("{v:.6e}"))
            );
        }
    }
    written.push(manifest.write(&out.join(format!("train-{name}.manifest.json")))?);
    Ok(written)
}

struct Scored {
    forecasts: Vec<Forecasts>,
    reports: Vec<MetricsReport>,
}

fn forecast(
    model: &SurrogateModel,
    label: &str,
    ds: &Dataset,
    cfg: &RunConfig,
    identity: bool,
) -> Result<Forecasts, CliError> {
    let norm = model.normalizer().expect("checked on load");
    if identity {
        // observed values straight from the record, so the scores are exact
        let windows = ds.train_windows(norm, cfg)?;
        let shell = Forecasts::from_normalized(label, &windows, &observed_targets(&windows)?, norm, &ds.schema)
            .stage("evaluate")?;
        let observed = shell.align(&ds.frame).stage("evaluate")?;
        return Forecasts::new(
            label,
            shell.horizon(),
            shell.targets().to_vec(),
            shell.locations().to_vec(),
            shell.anchors().to_vec(),
            observed,
        )
        .stage("evaluate");
    }
    let windows = ds.test_windows(norm, cfg)?;
    let pred = model.predict(&windows).stage("predict")?;
    Forecasts::from_normalized(label, &windows, &pred, norm, &ds.schema).stage("evaluate")
}

fn load_models(cfg: &RunConfig, checkpoints: &[PathBuf]) -> Result<Vec<SurrogateModel>, CliError> {
    if checkpoints.is_empty() {
        return Err(CliError::config("at least one --checkpoint is required"));
    }
    checkpoints.iter().map(|p| load_model(p, cfg)).collect()
}

/// Scores every checkpoint (and the external series, if configured) on the
/// test period: report JSON with the lead-time, location and p-value tables
/// plus one raw-error CSV per series.
pub fn cmd_evaluate(cfg: &RunConfig, checkpoints: &[PathBuf], identity: bool) -> Result<Vec<PathBuf>, CliError> {
    let ds = pipeline::load(cfg)?;
    let models = load_models(cfg, checkpoints)?;
    let names = labels(&models);
    let slices = lead_slices(&cfg.slices, cfg.k).stage("evaluate")?;
    let mut manifest = Manifest::new("evaluate", cfg);
    manifest.input("data", &ds.path)?;
    for p in checkpoints {
        manifest.input("checkpoint", p)?;
    }

    let mut scored = Scored {
        forecasts: Vec::new(),
        reports: Vec::new(),
    };
    for (model, name) in models.iter().zip(&names) {
        let f = forecast(model, name, &ds, cfg, identity)?;
        scored
            .reports
            .push(breakdown(&f, &ds.frame, &slices, cfg.threshold).stage("evaluate")?);
        scored.forecasts.push(f);
    }
    let model_count = scored.forecasts.len();
    if let Some(path) = &cfg.external {
        manifest.input("external", path)?;
        let file = File::open(path).map_err(|e| CliError::io("external", path, e))?;
        let ext = read_external(&cfg.external_name, file, &ds.schema).stage("external")?;
        let like = &scored.forecasts[0];
        let report = compare_external(&ext, like, &ds.frame, &slices, cfg.threshold).stage("external")?;
        let f = ext.as_forecasts(like).stage("external")?;
        scored.reports.push(report);
        scored.forecasts.push(f);
    }

    let mut tables = Vec::new();
    if scored.forecasts.len() > 1 {
        let r = scored.forecasts[..model_count]
            .iter()
            .position(|f| f.model == ModelKind::Rcnn.label())
            .unwrap_or(0);
        let others: Vec<&Forecasts> = scored
            .forecasts
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != r)
            .map(|(_, f)| f)
            .collect();
        tables.push(pvalue_by_lead(&scored.forecasts[r], &others, &ds.frame, &slices, cfg.wilcoxon).stage("wilcoxon")?);
    }
    if cfg.external.is_some() {
        let models: Vec<&Forecasts> = scored.forecasts[..model_count].iter().collect();
        let baseline = &scored.forecasts[model_count];
        tables.push(pvalue_by_location(&models, baseline, &ds.frame, cfg.k, cfg.wilcoxon).stage("wilcoxon")?);
    }

    let out = out_dir(cfg)?;
    let raw_dir = out.join("raw");
    std::fs::create_dir_all(&raw_dir).map_err(|e| CliError::io("output", &raw_dir, e))?;
    let mut written = Vec::new();
    for f in &scored.forecasts {
        let path = raw_dir.join(format!("{}.csv", file_stem(&f.model)));
        write_raw_errors(f, &ds.frame, create(&path)?).stage("output")?;
        manifest.output("raw-errors", &path)?;
        written.push(path);
    }
    let report = EvaluationReport::assemble(scored.reports, tables).stage("evaluate")?;
    let path = out.join("report.json");
    write_json(&path, &report)?;
    manifest.output("report", &path)?;
    written.push(path);
    print_lead_table(&report);
    written.push(manifest.write(&out.join("evaluate.manifest.json"))?);
    Ok(written)
}

fn file_stem(label: &str) -> String {
    label
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' { c.to_ascii_lowercase() } else { '_' })
        .collect()
}

fn cell(v: Option<f64>) -> String {
    v.map_or("n/a".to_string(), |x| format!("{x:.3}"))
}

fn print_lead_table(report: &EvaluationReport) {
    let header: Vec<String> = report.slices.iter().map(|s| s.to_string()).collect();
    for block in &report.lead_time_metrics {
        println!("{}\t{}", block.metric, header.join("\t"));
        for row in &block.rows {
            let vals: Vec<String> = row.values.iter().map(|v| cell(*v)).collect();
            println!("{}\t{}", row.model, vals.join("\t"));
        }
    }
}

/// Signed MAE changes of one model at one noise fraction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustnessEntry {
    pub model: String,
    pub fraction: f64,
    /// Percent change per slice; absent when the clean MAE is zero and the
    /// noisy one is not.
    pub changes: Vec<Option<f64>>,
    pub formatted: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustnessReport {
    pub format: String,
    pub noise_features: Vec<String>,
    pub noise_seed: u64,
    pub slices: Vec<LeadSlice>,
    pub rows: Vec<RobustnessEntry>,
}

/// Evaluates each checkpoint on test windows whose future covariates carry
/// Gaussian noise, one row per (model, fraction).
pub fn cmd_perturb(cfg: &RunConfig, checkpoints: &[PathBuf]) -> Result<Vec<PathBuf>, CliError> {
    let ds = pipeline::load(cfg)?;
    let models = load_models(cfg, checkpoints)?;
    let names = labels(&models);
    let slices = lead_slices(&cfg.slices, cfg.k).stage("perturb")?;
    let mut manifest = Manifest::new("perturb", cfg);
    manifest.input("data", &ds.path)?;
    for p in checkpoints {
        manifest.input("checkpoint", p)?;
    }

    let mut rows = Vec::new();
    for (model, name) in models.iter().zip(&names) {
        let norm = model.normalizer().expect("checked on load");
        let windows = ds.test_windows(norm, cfg)?;
        let scales = NoiseScales::normalized(&ds.schema, norm);
        let score = |samples: &[_]| -> Result<MetricsReport, CliError> {
            let pred = model.predict(samples).stage("predict")?;
            let f = Forecasts::from_normalized(name.as_str(), samples, &pred, norm, &ds.schema).stage("perturb")?;
            breakdown(&f, &ds.frame, &slices, cfg.threshold).stage("perturb")
        };
        let clean = score(&windows)?;
        for &fraction in &cfg.fractions {
            let noisy = inject_noise(&windows, fraction, &cfg.noise_features, cfg.noise_seed, &ds.schema, &scales)
                .stage("perturb")?;
            let row = relative_mae_change(&clean, &score(&noisy)?, fraction).stage("perturb")?;
            rows.push(RobustnessEntry {
                model: row.model.clone(),
                fraction,
                changes: row.changes.iter().map(|(_, p)| p.is_finite().then_some(*p)).collect(),
                formatted: row.formatted(),
            });
        }
    }
    let report = RobustnessReport {
        format: ROBUSTNESS_FORMAT.to_string(),
        noise_features: cfg.noise_features.clone(),
        noise_seed: cfg.noise_seed,
        slices,
        rows,
    };
    print!("{}", robustness_markdown(&report));
    let out = out_dir(cfg)?;
    let path = out.join("robustness.json");
    write_json(&path, &report)?;
    manifest.output("robustness", &path)?;
    Ok(vec![path.clone(), manifest.write(&out.join("perturb.manifest.json"))?])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub format: String,
    pub repeats: usize,
    pub external: Option<String>,
    pub external_seconds: Option<f64>,
    pub rows: Vec<BenchRow>,
}

/// Median test-pass wall time and throughput per checkpoint, with speedups
/// over the configured external wall time.
pub fn cmd_bench(cfg: &RunConfig, checkpoints: &[PathBuf]) -> Result<Vec<PathBuf>, CliError> {
    let ds = pipeline::load(cfg)?;
    let models = load_models(cfg, checkpoints)?;
    let names = labels(&models);
    if let Some(s) = cfg.external_seconds {
        if !(s > 0.0) || !s.is_finite() {
            return Err(CliError::config(format!("external_seconds must be > 0, got {s}")));
        }
    }
    let mut manifest = Manifest::new("bench", cfg);
    manifest.input("data", &ds.path)?;
    for p in checkpoints {
        manifest.input("checkpoint", p)?;
    }
    let mut rows = Vec::new();
    for (model, name) in models.iter().zip(&names) {
        let windows = ds.test_windows(model.normalizer().expect("checked on load"), cfg)?;
        let t = time_inference(model, &windows, cfg.repeats).stage("bench")?;
        rows.push(BenchRow {
            model: name.clone(),
            samples: t.samples,
            median_seconds: t.median_seconds,
            samples_per_second: t.samples_per_second,
            speedup: cfg.external_seconds.and_then(|e| speedup(e, t.median_seconds)),
        });
    }
    let report = BenchReport {
        format: BENCH_FORMAT.to_string(),
        repeats: cfg.repeats,
        external: cfg.external_seconds.map(|_| cfg.external_name.clone()),
        external_seconds: cfg.external_seconds,
        rows,
    };
    print!("{}", bench_markdown(&report));
    let out = out_dir(cfg)?;
    let path = out.join("bench.json");
    write_json(&path, &report)?;
    manifest.output("bench", &path)?;
    Ok(vec![path.clone(), manifest.write(&out.join("bench.manifest.json"))?])
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io("report", path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::config(format!("{}: {e}", path.display())))
}

/// Renders `report.json`, and `robustness.json` / `bench.json` when present,
/// from the output directory as Markdown tables.
pub fn cmd_report(cfg: &RunConfig) -> Result<Vec<PathBuf>, CliError> {
    let out = cfg.out.clone();
    let mut manifest = Manifest::new("report", cfg);
    let mut md = String::new();
    let eval_path = out.join("report.json");
    let report: EvaluationReport = read_json(&eval_path)?;
    manifest.input("report", &eval_path)?;
    md.push_str(&evaluation_markdown(&report));
    let rob_path = out.join("robustness.json");
    if rob_path.exists() {
        let rob: RobustnessReport = read_json(&rob_path)?;
        manifest.input("robustness", &rob_path)?;
        md.push_str("\n## MAE changes under covariate noise\n\n");
        md.push_str(&robustness_markdown(&rob));
    }
    let bench_path = out.join("bench.json");
    if bench_path.exists() {
        let bench: BenchReport = read_json(&bench_path)?;
        manifest.input("bench", &bench_path)?;
        md.push_str("\n## Test time\n\n");
        md.push_str(&bench_markdown(&bench));
    }
    let path = out.join("report.md");
    std::fs::write(&path, &md).map_err(|e| CliError::io("output", &path, e))?;
    manifest.output("report", &path)?;
    print!("{md}");
    Ok(vec![path.clone(), manifest.write(&out.join("report.manifest.json"))?])
}

fn table(header: &[String], rows: &[Vec<String>]) -> String {
    let mut s = format!("| {} |\n|{}\n", header.join(" | "), "---|".repeat(header.len()));
    for r in rows {
        s.push_str(&format!("| {} |\n", r.join(" | ")));
    }
    s
}

fn evaluation_markdown(r: &EvaluationReport) -> String {
    let slices: Vec<String> = r.slices.iter().map(|s| s.to_string()).collect();
    let mut md = String::from("## Metrics by lead time\n\n");
    for block in &r.lead_time_metrics {
        let mut header = vec![block.metric.clone()];
        header.extend(slices.iter().cloned());
        let rows: Vec<Vec<String>> = block
            .rows
            .iter()
            .map(|row| std::iter::once(row.model.clone()).chain(row.values.iter().map(|v| cell(*v))).collect())
            .collect();
        md.push_str(&table(&header, &rows));
        md.push('\n');
    }
    let pct_rows = |rows: &[stagecast::eval::ModelRow]| -> Vec<Vec<String>> {
        rows.iter()
            .map(|row| {
                std::iter::once(row.model.clone())
                    .chain(row.values.iter().map(|v| v.map_or("n/a".into(), |x| format!("{x:.2}%"))))
                    .collect()
            })
            .collect()
    };
    md.push_str(&format!("## Errors beyond ±{} ft by lead time\n\n", r.threshold));
    let mut header = vec!["Model".to_string()];
    header.extend(slices.iter().cloned());
    md.push_str(&table(&header, &pct_rows(&r.lead_time_extremes)));
    let mut header = vec!["Model".to_string()];
    header.extend(r.locations.iter().cloned());
    md.push_str("\n## MAE (ft) by location\n\n");
    let rows: Vec<Vec<String>> = r
        .location_mae
        .iter()
        .map(|row| std::iter::once(row.model.clone()).chain(row.values.iter().map(|v| cell(*v))).collect())
        .collect();
    md.push_str(&table(&header, &rows));
    md.push_str(&format!("\n## Errors beyond ±{} ft by location\n\n", r.threshold));
    md.push_str(&table(&header, &pct_rows(&r.location_extremes)));
    for p in &r.p_values {
        md.push_str(&format!("\n## {}\n\n", p.title));
        let mut header = vec![String::new()];
        header.extend(p.columns.iter().cloned());
        let rows: Vec<Vec<String>> = p
            .rows
            .iter()
            .zip(p.p_values.iter().zip(&p.degenerate))
            .map(|(name, (vals, flags))| {
                std::iter::once(name.clone())
                    .chain(vals.iter().zip(flags).map(|(v, d)| if *d { format!("{v:.3e}*") } else { format!("{v:.3e}") }))
                    .collect()
            })
            .collect();
        md.push_str(&table(&header, &rows));
    }
    md
}

fn robustness_markdown(r: &RobustnessReport) -> String {
    let mut header = vec!["Model".to_string(), "Noise".to_string()];
    header.extend(r.slices.iter().map(|s| s.to_string()));
    let rows: Vec<Vec<String>> = r
        .rows
        .iter()
        .map(|e| {
            [e.model.clone(), format!("{}%", 100.0 * e.fraction)]
                .into_iter()
                .chain(e.formatted.iter().cloned())
                .collect()
        })
        .collect();
    table(&header, &rows)
}

fn bench_markdown(r: &BenchReport) -> String {
    let header: Vec<String> = ["Model", "Windows", "Median seconds", "Windows/s", "Speedup"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let mut rows: Vec<Vec<String>> = r
        .rows
        .iter()
        .map(|b| {
            vec![
                b.model.clone(),
                b.samples.to_string(),
                format!("{:.3}", b.median_seconds),
                b.samples_per_second.map_or("n/a".into(), |s| format!("{s:.0}")),
                b.speedup.map_or("n/a".into(), |s| format!("{s:.0}x")),
            ]
        })
        .collect();
    if let (Some(name), Some(s)) = (&r.external, r.external_seconds) {
        rows.push(vec![name.clone(), String::new(), format!("{s:.3}"), String::new(), "1x".into()]);
    }
    table(&header, &rows)
}

/// Writes a synthetic river-like record in the station CSV layout.
pub fn cmd_synth(path: &Path, start: &str, hours: usize, seed: u64) -> Result<(), CliError> {
    let start = parse_timestamp(start).ok_or_else(|| CliError::config(format!("bad start timestamp {start:?}")))?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io("output", dir, e))?;
    }
    let frame = river_like_frame(start, hours, seed);
    write_frame(&frame, create(path)?).stage("output")
}
