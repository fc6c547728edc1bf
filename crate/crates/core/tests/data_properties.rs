mod common;

use common::{check_alignment, random_frame};
use proptest::prelude::*;
use stagecast::data::{
    build_windows, inject_noise, parse_timestamp, split_by_date, window_count, CovariateScale, DataError,
    FeatureSchema, NoiseScales, Normalizer, TimeSeriesFrame,
};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn window_count_and_alignment(w in 1usize..20, k in 1usize..10, extra in 0usize..30, seed in 0u64..500) {
        let len = w + k + extra;
        let frame = random_frame(len, seed);
        let schema = FeatureSchema::miami_river();
        let samples = build_windows(&frame, w, k, &schema).unwrap();
        prop_assert_eq!(samples.len(), len - w - k + 1);
        prop_assert_eq!(window_count(len, w, k), samples.len());
        prop_assert_eq!(check_alignment(&frame, &samples, w, k), Ok(()));

        // one more record adds exactly one sample
        let longer = build_windows(&random_frame(len + 1, seed), w, k, &schema).unwrap();
        prop_assert_eq!(longer.len(), samples.len() + 1);
    }

    #[test]
    fn too_short_frame_is_rejected(w in 1usize..20, k in 1usize..10, seed in 0u64..100) {
        let frame = random_frame(w + k - 1, seed);
        let is_insufficient = matches!(
            build_windows(&frame, w, k, &FeatureSchema::miami_river()),
            Err(DataError::InsufficientData { .. })
        );
        prop_assert!(is_insufficient);
    }

    #[test]
    fn normalize_round_trip(len in 2usize..200, seed in 0u64..500) {
        let frame = random_frame(len, seed);
        let norm = Normalizer::fit(&frame).unwrap();
        let scaled = norm.apply(&frame).unwrap();
        let back = norm.invert(&scaled).unwrap();
        for f in 0..frame.num_features() {
            let col = frame.column(f);
            let s = scaled.column(f);
            let (min, max) = (norm.range(f).min, norm.range(f).max);
            for (i, &x) in col.iter().enumerate() {
                prop_assert!((back.column(f)[i] - x).abs() <= 1e-12 * (1.0 + x.abs()));
                if x == min {
                    prop_assert_eq!(s[i], 0.0);
                }
                if x == max {
                    prop_assert_eq!(s[i], 1.0);
                }
            }
        }
    }
}

#[test]
fn normalizer_sees_only_the_training_split() {
    let frame = random_frame(500, 9);
    let boundary = frame.timestamp(400);
    let clean = split_by_date(&frame, boundary).unwrap();
    let fitted = Normalizer::fit(&clean.train).unwrap();

    // blow up every test-period value; the statistics must not move
    let cols = (0..frame.num_features())
        .map(|f| {
            frame
                .column(f)
                .iter()
                .enumerate()
                .map(|(i, &v)| if i >= 400 { v * 1e3 + 7.0 } else { v })
                .collect()
        })
        .collect();
    let tampered = TimeSeriesFrame::new(frame.start(), frame.names().to_vec(), cols).unwrap();
    let split = split_by_date(&tampered, boundary).unwrap();
    assert_eq!(Normalizer::fit(&split.train).unwrap(), fitted);

    let schema = FeatureSchema::miami_river();
    assert_eq!(
        NoiseScales::physical(&schema, &Normalizer::fit(&split.train).unwrap()),
        NoiseScales::physical(&schema, &fitted)
    );
}

#[test]
fn noise_standard_deviation_matches_fraction_of_range() {
    // WS_S4 has no lower bound, so no draw is clamped
    let schema = FeatureSchema::miami_river();
    let (w, k, n) = (1, 10, 10_000);
    let start = parse_timestamp("2019-01-01").unwrap();
    let mut frame = TimeSeriesFrame::with_schema(start, &schema);
    for _ in 0..(n + w + k - 1) {
        frame.push_row(&vec![1.0; schema.len()]).unwrap();
    }
    let samples = build_windows(&frame, w, k, &schema).unwrap();
    assert_eq!(samples.len() * k, 100_000);
    let scales = NoiseScales::from_scales(
        (0..schema.len())
            .map(|_| CovariateScale {
                range: 10.0,
                lower_bound: None,
            })
            .collect(),
    );
    let noisy = inject_noise(&samples, 0.2, &["WS_S4".to_string()], 42, &schema, &scales).unwrap();
    let slot = schema
        .future_indices()
        .iter()
        .position(|&f| f == schema.index_of("WS_S4").unwrap())
        .unwrap();
    let diffs: Vec<f64> = noisy
        .iter()
        .zip(&samples)
        .flat_map(|(a, b)| (0..k).map(move |j| a.future_row(j)[slot] - b.future_row(j)[slot]))
        .collect();
    let m = diffs.iter().sum::<f64>() / diffs.len() as f64;
    let sd = (diffs.iter().map(|d| (d - m).powi(2)).sum::<f64>() / (diffs.len() - 1) as f64).sqrt();
    assert!((sd - 2.0).abs() <= 0.05, "sd {sd}");
}
