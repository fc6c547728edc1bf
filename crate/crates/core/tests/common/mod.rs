//! Independent oracles and toy fixtures shared by the integration suites.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stagecast::data::WindowSample;
use stagecast::models::{ArchitectureSpec, Geometry, Hyperparameters, ModelKind};
use stagecast::nn::layers::{Conv1dLayer, DenseLayer, LstmLayer, MaxPool1d, RnnLayer};
use stagecast::nn::{gradient_check, Activation, NnError, ParamSet, Tape, Tensor, Var};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

// ---- metric oracles, written directly from the textbook formulas ----

pub fn oracle_mae(y: &[f64], p: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..y.len() {
        s += (y[i] - p[i]).abs();
    }
    s / y.len() as f64
}

pub fn oracle_rmse(y: &[f64], p: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..y.len() {
        s += (y[i] - p[i]).powi(2);
    }
    (s / y.len() as f64).sqrt()
}

pub fn oracle_nse(y: &[f64], p: &[f64]) -> f64 {
    let n = y.len() as f64;
    let mean = y.iter().sum::<f64>() / n;
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..y.len() {
        num += (y[i] - p[i]).powi(2);
        den += (y[i] - mean).powi(2);
    }
    1.0 - num / den
}

/// Population standard deviation.
fn sd(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n).sqrt()
}

/// `(kge, r, alpha, beta)`.
pub fn oracle_kge(y: &[f64], p: &[f64]) -> (f64, f64, f64, f64) {
    let n = y.len() as f64;
    let my = y.iter().sum::<f64>() / n;
    let mp = p.iter().sum::<f64>() / n;
    let cov = y.iter().zip(p).map(|(a, b)| (a - my) * (b - mp)).sum::<f64>() / n;
    let r = cov / (sd(y) * sd(p));
    let alpha = sd(p) / sd(y);
    let beta = mp / my;
    let kge = 1.0 - ((r - 1.0).powi(2) + (alpha - 1.0).powi(2) + (beta - 1.0).powi(2)).sqrt();
    (kge, r, alpha, beta)
}

/// `(total, over, under)` extreme fractions by direct counting.
pub fn oracle_extremes(errors: &[f64], threshold: f64) -> (f64, f64, f64) {
    let n = errors.len() as f64;
    let over = errors.iter().filter(|&&e| e >= threshold).count() as f64;
    let under = errors.iter().filter(|&&e| e <= -threshold).count() as f64;
    let total = errors.iter().filter(|&&e| e.abs() >= threshold).count() as f64;
    (total / n, over / n, under / n)
}

// ---- signed-rank oracle ----

/// Midrank of every `|d_i|` by pairwise counting, zeros included.
fn midranks(d: &[f64]) -> Vec<f64> {
    d.iter()
        .map(|x| {
            let below = d.iter().filter(|y| y.abs() < x.abs()).count() as f64;
            let tied = d.iter().filter(|y| y.abs() == x.abs()).count() as f64;
            below + (tied + 1.0) / 2.0
        })
        .collect()
}

/// Pratt-style signed-rank test by enumerating every sign assignment of the
/// nonzero differences. Returns `(statistic, two-sided p, nonzero count)`.
pub fn brute_wilcoxon(d: &[f64]) -> (f64, f64, usize) {
    let ranks = midranks(d);
    let kept: Vec<(f64, bool)> = d
        .iter()
        .zip(&ranks)
        .filter(|(x, _)| **x != 0.0)
        .map(|(x, r)| (*r, *x > 0.0))
        .collect();
    let m = kept.len();
    let w: f64 = kept.iter().filter(|k| k.1).map(|k| k.0).sum();
    if m == 0 {
        return (0.0, 1.0, 0);
    }
    let (mut le, mut ge) = (0u64, 0u64);
    for mask in 0u64..(1 << m) {
        let s: f64 = (0..m).filter(|i| mask >> i & 1 == 1).map(|i| kept[i].0).sum();
        if s <= w {
            le += 1;
        }
        if s >= w {
            ge += 1;
        }
    }
    let p = (2.0 * le.min(ge) as f64 / 2f64.powi(m as i32)).min(1.0);
    (w, p, m)
}

/// Random difference vector of length `n` with ties and zeros mixed in.
pub fn random_differences(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n)
        .map(|_| match rng.random_range(0..10) {
            0 => 0.0,
            1..=3 => rng.random_range(-3i32..=3) as f64,
            _ => rng.random_range(-5.0..5.0),
        })
        .collect()
}

// ---- toy networks for gradient checks ----

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

/// A scalar-loss network with its own parameters and fixed data.
pub struct Toy {
    pub name: &'static str,
    pub params: ParamSet,
    pub loss: Box<dyn FnMut(&mut Tape, &ParamSet) -> Result<Var, NnError>>,
}

impl Toy {
    pub fn check(&mut self, epsilon: f64) -> f64 {
        gradient_check(&mut self.params, epsilon, &mut self.loss).unwrap()
    }
}

/// Dense stack, RNN over 5 steps, LSTM over 5 steps, conv1d + max-pool, and
/// the recurrent-then-convolutional composition, all at toy size.
pub fn toy_networks(seed: u64) -> Vec<Toy> {
    let mut r = rng(seed);
    let mut out = Vec::new();

    {
        let mut params = ParamSet::new();
        let l1 = DenseLayer::new(&mut params, &mut r, "d1", 4, 5, Activation::Tanh);
        let l2 = DenseLayer::new(&mut params, &mut r, "d2", 5, 3, Activation::Sigmoid);
        let l3 = DenseLayer::new(&mut params, &mut r, "d3", 3, 2, Activation::Identity);
        let (x, t) = (random_tensor(&mut r, &[3, 4]), random_tensor(&mut r, &[3, 2]));
        out.push(Toy {
            name: "dense",
            params,
            loss: Box::new(move |tape, p| {
                let xi = tape.input(x.clone());
                let h = l1.forward(tape, p, xi)?;
                let h = l2.forward(tape, p, h)?;
                let y = l3.forward(tape, p, h)?;
                let ti = tape.input(t.clone());
                tape.mse(y, ti)
            }),
        });
    }
    {
        let mut params = ParamSet::new();
        let rnn = RnnLayer::new(&mut params, &mut r, "rnn", 3, 4);
        let head = DenseLayer::new(&mut params, &mut r, "head", 4, 2, Activation::Identity);
        let (x, t) = (random_tensor(&mut r, &[2, 5, 3]), random_tensor(&mut r, &[2, 2]));
        out.push(Toy {
            name: "rnn (5 steps)",
            params,
            loss: Box::new(move |tape, p| {
                let xi = tape.input(x.clone());
                let s = rnn.forward(tape, p, xi)?;
                let last = tape.select_step(s, 4)?;
                let y = head.forward(tape, p, last)?;
                let ti = tape.input(t.clone());
                tape.mse(y, ti)
            }),
        });
    }
    {
        let mut params = ParamSet::new();
        let lstm = LstmLayer::new(&mut params, &mut r, "lstm", 3, 4);
        let head = DenseLayer::new(&mut params, &mut r, "head", 4, 2, Activation::Identity);
        let (x, t) = (random_tensor(&mut r, &[2, 5, 3]), random_tensor(&mut r, &[2, 2]));
        out.push(Toy {
            name: "lstm (5 steps)",
            params,
            loss: Box::new(move |tape, p| {
                let xi = tape.input(x.clone());
                let s = lstm.forward(tape, p, xi)?;
                let last = tape.select_step(s, 4)?;
                let y = head.forward(tape, p, last)?;
                let ti = tape.input(t.clone());
                tape.mse(y, ti)
            }),
        });
    }
    {
        let mut params = ParamSet::new();
        let conv = Conv1dLayer::new(&mut params, &mut r, "conv", 3, 4, 3, 1, Activation::Tanh);
        let pool = MaxPool1d { window: 2, stride: 2 };
        let head = DenseLayer::new(&mut params, &mut r, "head", 3 * 4, 2, Activation::Identity);
        let (x, t) = (random_tensor(&mut r, &[2, 8, 3]), random_tensor(&mut r, &[2, 2]));
        out.push(Toy {
            name: "conv1d + maxpool",
            params,
            loss: Box::new(move |tape, p| {
                let xi = tape.input(x.clone());
                let c = conv.forward(tape, p, xi)?;
                let m = pool.forward(tape, c)?;
                let f = tape.reshape(m, &[2, 12])?;
                let y = head.forward(tape, p, f)?;
                let ti = tape.input(t.clone());
                tape.mse(y, ti)
            }),
        });
    }
    {
        let mut params = ParamSet::new();
        let rnn = RnnLayer::new(&mut params, &mut r, "rnn", 3, 4);
        let conv = Conv1dLayer::new(&mut params, &mut r, "conv", 4, 3, 2, 1, Activation::Tanh);
        let pool = MaxPool1d { window: 2, stride: 2 };
        let head = DenseLayer::new(&mut params, &mut r, "head", 2 * 3, 2, Activation::Identity);
        let (x, t) = (random_tensor(&mut r, &[2, 5, 3]), random_tensor(&mut r, &[2, 2]));
        out.push(Toy {
            name: "rcnn (rnn -> conv -> pool)",
            params,
            loss: Box::new(move |tape, p| {
                let xi = tape.input(x.clone());
                let s = rnn.forward(tape, p, xi)?;
                let c = conv.forward(tape, p, s)?;
                let m = pool.forward(tape, c)?;
                let f = tape.reshape(m, &[2, 6])?;
                let y = head.forward(tape, p, f)?;
                let ti = tape.input(t.clone());
                tape.mse(y, ti)
            }),
        });
    }
    out
}

// ---- model fixtures ----

/// Small-but-complete hyperparameters for fast model-level tests.
pub fn small_hyperparameters() -> Hyperparameters {
    Hyperparameters {
        mlp_hidden: vec![8],
        dropout: 0.0,
        recurrent_hidden: 4,
        filters: 3,
        kernel_width: 2,
        pool_width: 2,
        conv_blocks: 1,
        rcnn_conv_blocks: 1,
    }
}

pub fn small_spec(kind: ModelKind, samples: &[WindowSample]) -> ArchitectureSpec {
    let s = &samples[0];
    let geometry = Geometry::from_schema(&stagecast::data::FeatureSchema::miami_river(), s.past_steps(), s.horizon());
    ArchitectureSpec::with_hyperparameters(kind, geometry, &small_hyperparameters())
}

// ---- data fixtures ----

pub fn random_frame(len: usize, seed: u64) -> stagecast::data::TimeSeriesFrame {
    let schema = stagecast::data::FeatureSchema::miami_river();
    let mut r = rng(seed);
    let columns = (0..schema.len())
        .map(|_| (0..len).map(|_| r.random_range(-10.0..10.0)).collect())
        .collect();
    let names = schema.names().iter().map(|s| s.to_string()).collect();
    let start = stagecast::data::parse_timestamp("2018-03-01T05:00:00").unwrap();
    stagecast::data::TimeSeriesFrame::new(start, names, columns).unwrap()
}

/// Checks every window against the frame it was cut from: timestamps of the
/// three blocks and exact value equality.
pub fn check_alignment(
    frame: &stagecast::data::TimeSeriesFrame,
    samples: &[WindowSample],
    w: usize,
    k: usize,
) -> Result<(), String> {
    let schema = stagecast::data::FeatureSchema::miami_river();
    let future = schema.future_indices();
    let targets = schema.target_indices();
    for (n, s) in samples.iter().enumerate() {
        let anchor = frame.index_of(s.anchor).ok_or("anchor outside frame")?;
        if anchor != w - 1 + n {
            return Err(format!("sample {n} anchored at row {anchor}"));
        }
        if s.past_time(w - 1) != s.anchor || s.future_time(0) != s.anchor + chrono::Duration::hours(1) {
            return Err(format!("sample {n}: block boundaries misplaced"));
        }
        for i in 0..w {
            let row = frame.index_of(s.past_time(i)).ok_or("past row outside frame")?;
            if (0..schema.len()).any(|f| s.past_row(i)[f] != frame.value(f, row)) {
                return Err(format!("sample {n}: past row {i} differs from the frame"));
            }
        }
        for j in 0..k {
            let row = frame.index_of(s.future_time(j)).ok_or("future row outside frame")?;
            if future.iter().enumerate().any(|(c, &f)| s.future_row(j)[c] != frame.value(f, row)) {
                return Err(format!("sample {n}: covariate row {j} differs from the frame"));
            }
            if targets.iter().enumerate().any(|(c, &f)| s.target_row(j)[c] != frame.value(f, row)) {
                return Err(format!("sample {n}: target row {j} differs from the frame"));
            }
        }
    }
    Ok(())
}
