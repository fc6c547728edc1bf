mod common;

use common::{random_tensor, rng, toy_networks};
use proptest::prelude::*;
use stagecast::nn::layers::{Conv1dLayer, DenseLayer, LstmLayer, MaxPool1d, RnnLayer};
use stagecast::nn::{Activation, ParamSet, Tape, Tensor};

#[test]
fn toy_gradients_match_central_differences() {
    for mut toy in toy_networks(7) {
        let err = toy.check(1e-6);
        assert!(err < 1e-5, "{}: {err}", toy.name);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn declared_shapes_match_produced(
        batch in 1usize..4,
        steps in 1usize..9,
        channels in 1usize..5,
        hidden in 1usize..6,
        width in 1usize..4,
        stride in 1usize..3,
        seed in 0u64..1000,
    ) {
        let mut r = rng(seed);
        let mut params = ParamSet::new();
        let mut tape = Tape::new();
        let x = tape.input(random_tensor(&mut r, &[batch, steps, channels]));

        let dense = DenseLayer::new(&mut params, &mut r, "d", channels, hidden, Activation::Relu);
        let flat = tape.input(random_tensor(&mut r, &[batch, channels]));
        let y = dense.forward(&mut tape, &params, flat).unwrap();
        prop_assert_eq!(tape.value(y).shape(), &[batch, hidden]);

        let rnn = RnnLayer::new(&mut params, &mut r, "r", channels, hidden);
        let y = rnn.forward(&mut tape, &params, x).unwrap();
        prop_assert_eq!(tape.value(y).shape(), &[batch, steps, hidden]);

        let lstm = LstmLayer::new(&mut params, &mut r, "l", channels, hidden);
        let y = lstm.forward(&mut tape, &params, x).unwrap();
        prop_assert_eq!(tape.value(y).shape(), &[batch, steps, hidden]);

        let conv = Conv1dLayer::new(&mut params, &mut r, "c", channels, hidden, width, stride, Activation::Tanh);
        match conv.output_len(steps) {
            Some(len) => {
                let y = conv.forward(&mut tape, &params, x).unwrap();
                prop_assert_eq!(tape.value(y).shape(), &[batch, len, hidden]);
            }
            None => prop_assert!(conv.forward(&mut tape, &params, x).is_err()),
        }

        let pool = MaxPool1d { window: width, stride };
        match pool.output_len(steps) {
            Some(len) => {
                let y = pool.forward(&mut tape, x).unwrap();
                prop_assert_eq!(tape.value(y).shape(), &[batch, len, channels]);
            }
            None => prop_assert!(pool.forward(&mut tape, x).is_err()),
        }
    }

    #[test]
    fn backward_is_linear_in_the_seed(a in -3.0f64..3.0, seed in 0u64..1000) {
        let mut r = rng(seed);
        let mut params = ParamSet::new();
        let lstm = LstmLayer::new(&mut params, &mut r, "l", 3, 4);
        let conv = Conv1dLayer::new(&mut params, &mut r, "c", 4, 2, 2, 1, Activation::Tanh);
        let x = random_tensor(&mut r, &[2, 5, 3]);
        let mut tape = Tape::new();
        let xi = tape.input(x);
        let h = lstm.forward(&mut tape, &params, xi).unwrap();
        let y = conv.forward(&mut tape, &params, h).unwrap();
        let s = random_tensor(&mut r, tape.value(y).shape());

        params.zero_grad();
        tape.backward(y, &s, &mut params).unwrap();
        let base: Vec<Tensor> = params.iter().map(|p| p.gradient().clone()).collect();
        params.zero_grad();
        tape.backward(y, &s.scale(a), &mut params).unwrap();
        for (p, g) in params.iter().zip(&base) {
            for (u, v) in p.gradient().data().iter().zip(g.data()) {
                prop_assert!((u - a * v).abs() <= 1e-12 * (1.0 + v.abs()), "{} vs {}", u, a * v);
            }
        }
    }
}

#[test]
fn forward_and_backward_are_bit_deterministic() {
    let run = || {
        let mut toys = toy_networks(3);
        let toy = &mut toys[4];
        let mut tape = Tape::new();
        let loss = (toy.loss)(&mut tape, &toy.params).unwrap();
        toy.params.zero_grad();
        tape.backward(loss, &Tensor::scalar(1.0), &mut toy.params).unwrap();
        let grads: Vec<f64> = toy.params.iter().flat_map(|p| p.gradient().data().to_vec()).collect();
        (tape.value(loss).item(), grads)
    };
    let (a, b) = (run(), run());
    assert_eq!(a.0.to_bits(), b.0.to_bits());
    assert!(a.1.iter().zip(&b.1).all(|(x, y)| x.to_bits() == y.to_bits()));
}

#[test]
fn maxpool_routes_each_window_gradient_intact() {
    let mut r = rng(11);
    for _ in 0..20 {
        let (t, k, window) = (12, 3, 3);
        let mut params = ParamSet::new();
        let id = params.add("x", random_tensor(&mut r, &[2, t, k]));
        let mut tape = Tape::new();
        let x = tape.param(&params, id);
        let y = tape.maxpool1d(x, window, window).unwrap();
        let seed = random_tensor(&mut r, tape.value(y).shape());
        tape.backward(y, &seed, &mut params).unwrap();
        let g = params.get(id).gradient().data();
        let tout = t / window;
        for b in 0..2 {
            for p in 0..tout {
                for c in 0..k {
                    let routed: f64 = (0..window).map(|u| g[(b * t + p * window + u) * k + c]).sum();
                    let incoming = seed.data()[(b * tout + p) * k + c];
                    assert_eq!(routed, incoming);
                }
            }
        }
    }
}
