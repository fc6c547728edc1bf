//! Synthetic records with the river schema, for demos, throughput checks and
//! trainability experiments.

use std::f64::consts::TAU;

use chrono::NaiveDateTime;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal};

use crate::data::{build_windows, parse_timestamp, DataError, FeatureSchema, Normalizer, TimeSeriesFrame, WindowSample};

/// Principal lunar semi-diurnal period, hours.
const M2_HOURS: f64 = 12.42;

fn default_start() -> NaiveDateTime {
    parse_timestamp("2018-01-01T00:00:00").expect("valid literal")
}

/// Every feature is the sum of two sinusoids with feature-specific periods
/// (6 to 30 hours) and seed-dependent phases. Nonnegative features are offset
/// to stay above zero.
pub fn sinusoid_frame(hours: usize, seed: u64) -> TimeSeriesFrame {
    let schema = FeatureSchema::miami_river();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let columns = schema
        .features()
        .iter()
        .enumerate()
        .map(|(f, feat)| {
            let p1 = 6.0 + 2.0 * f as f64;
            let p2 = 30.0 - 1.5 * f as f64;
            let (a1, a2) = (rng.random_range(0.5..1.5), rng.random_range(0.2..0.6));
            let (ph1, ph2) = (rng.random_range(0.0..TAU), rng.random_range(0.0..TAU));
            let offset = if feat.nonnegative { a1 + a2 } else { 0.0 };
            (0..hours)
                .map(|t| {
                    let t = t as f64;
                    offset + a1 * (TAU * t / p1 + ph1).sin() + a2 * (TAU * t / p2 + ph2).sin()
                })
                .collect()
        })
        .collect();
    TimeSeriesFrame::new(default_start(), names(&schema), columns).expect("consistent columns")
}

/// Exactly `samples` min-max normalized windows cut from a
/// [`sinusoid_frame`], plus the fitted normalizer.
pub fn sinusoid_task(
    samples: usize,
    past_steps: usize,
    horizon: usize,
    seed: u64,
) -> Result<(FeatureSchema, Normalizer, Vec<WindowSample>), DataError> {
    let schema = FeatureSchema::miami_river();
    let frame = sinusoid_frame(samples + past_steps + horizon - 1, seed);
    let norm = Normalizer::fit(&frame)?;
    let windows = build_windows(&norm.apply(&frame)?, past_steps, horizon, &schema)?;
    Ok((schema, norm, windows))
}

/// An hourly record loosely shaped like a tidal, pump-managed coastal river:
///
/// * the downstream tide (`WS_S4`) mixes semi-diurnal, diurnal and
///   spring-neap components;
/// * rainfall arrives in storms and fills a slowly draining catchment store;
/// * gate flows track the store and pumps switch on when it is high;
/// * stages follow the lagged tide plus catchment and gate effects.
///
/// Deterministic per `seed`.
pub fn river_like_frame(start: NaiveDateTime, hours: usize, seed: u64) -> TimeSeriesFrame {
    let schema = FeatureSchema::miami_river();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let jitter = Normal::new(0.0, 1.0).expect("unit normal");
    let storm_depth = Exp::new(1.0 / 0.15).expect("positive rate");
    let phase = rng.random_range(0.0..TAU);

    let tide: Vec<f64> = (0..hours + 3)
        .map(|t| {
            let t = t as f64;
            let spring = 1.0 + 0.25 * (TAU * t / (14.77 * 24.0)).cos();
            0.9 + spring * 1.1 * (TAU * t / M2_HOURS + phase).sin() + 0.25 * (TAU * t / 24.0 + 0.5 * phase).sin()
                + 0.3 * (TAU * t / (365.25 * 24.0)).sin()
        })
        .collect();

    let mut cols: Vec<Vec<f64>> = vec![Vec::with_capacity(hours); schema.len()];
    let idx = |name: &str| schema.index_of(name).expect("river feature");
    let (flow26, pump26, tws26) = (idx("Flow_S26"), idx("Pump_S26"), idx("TWS_S26"));
    let (flow25a, tws25a) = (idx("Flow_S25A"), idx("TWS_S25A"));
    let (flow25b, pump25b, tws25b) = (idx("Flow_S25B"), idx("Pump_S25B"), idx("TWS_S25B"));
    let (ws1, ws4, rain_i) = (idx("WS_S1"), idx("WS_S4"), idx("Grid_Rainfall"));

    let (mut store, mut storm_left, mut intensity, mut drift) = (0.0f64, 0usize, 0.0, 0.0);
    for t in 0..hours {
        if storm_left == 0 && rng.random::<f64>() < 0.015 {
            storm_left = rng.random_range(2..12);
            intensity = storm_depth.sample(&mut rng);
        }
        let rain = if storm_left > 0 {
            storm_left -= 1;
            (intensity * (0.5 + rng.random::<f64>())).max(0.0)
        } else {
            0.0
        };
        store = 0.97 * store + rain;
        drift = 0.98 * drift + 0.01 * jitter.sample(&mut rng);
        let pump_on = store > 1.0;
        let gate = |scale: f64, rng: &mut ChaCha8Rng| (scale * store + 5.0 * rng.random::<f64>()).max(0.0);
        let f26 = gate(120.0, &mut rng);
        let f25a = gate(60.0, &mut rng);
        let f25b = gate(80.0, &mut rng);
        let p26 = if pump_on { 250.0 + 20.0 * store } else { 0.0 };
        let p25b = if pump_on { 150.0 + 10.0 * store } else { 0.0 };
        let tide_now = tide[t];
        let tide_lag = |lag: usize| tide[t.saturating_sub(lag)];

        cols[ws4].push(tide_now);
        cols[rain_i].push(rain);
        cols[flow26].push(f26);
        cols[pump26].push(p26);
        cols[flow25a].push(f25a);
        cols[flow25b].push(f25b);
        cols[pump25b].push(p25b);
        cols[tws26].push(0.95 * tide_lag(1) + 0.0008 * (f26 + p26) + drift);
        cols[tws25a].push(0.9 * tide_lag(1) + 0.0015 * f25a + drift);
        cols[tws25b].push(0.92 * tide_lag(2) + 0.001 * (f25b + p25b) + drift);
        cols[ws1].push(0.85 * tide_lag(3) + 0.12 * store + 0.6 + drift);
    }
    TimeSeriesFrame::new(start, names(&schema), cols).expect("consistent columns")
}

fn names(schema: &FeatureSchema) -> Vec<String> {
    schema.names().iter().map(|s| s.to_string()).collect()
}
