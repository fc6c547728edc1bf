//! Central finite-difference verification of tape gradients.

use super::{NnError, ParamSet, Tape, Tensor, Var};

fn eval_loss<F>(params: &ParamSet, loss: &mut F) -> Result<f64, NnError>
where
    F: FnMut(&mut Tape, &ParamSet) -> Result<Var, NnError>,
{
    let mut tape = Tape::new();
    let out = loss(&mut tape, params)?;
    let v = tape.value(out).item();
    if !v.is_finite() {
        return Err(NnError::NumericInstability(format!("loss evaluated to {v}")));
    }
    Ok(v)
}

/// Compares every analytic parameter gradient of the scalar `loss` against
/// `(L(θ+ε) - L(θ-ε)) / 2ε` and returns the largest relative error
/// `|a - n| / max(|a|, |n|, 1e-12)`. A set without parameters yields 0.
///
/// `loss` must record a rank-0 output on the tape it is given and must be a
/// deterministic function of `params`.
pub fn gradient_check<F>(params: &mut ParamSet, epsilon: f64, mut loss: F) -> Result<f64, NnError>
where
    F: FnMut(&mut Tape, &ParamSet) -> Result<Var, NnError>,
{
    if !(epsilon > 0.0 && epsilon <= 1e-3) {
        return Err(NnError::Argument(format!(
            "epsilon {epsilon} outside (0, 1e-3]"
        )));
    }
    params.zero_grad();
    let mut tape = Tape::new();
    let out = loss(&mut tape, params)?;
    let value = tape.value(out).item();
    if !value.is_finite() {
        return Err(NnError::NumericInstability(format!("loss evaluated to {value}")));
    }
    tape.backward(out, &Tensor::scalar(1.0), params)?;
    let analytic: Vec<Tensor> = params.iter().map(|p| p.gradient().clone()).collect();

    let mut worst: f64 = 0.0;
    let ids: Vec<_> = params.ids().collect();
    for (id, grad) in ids.into_iter().zip(&analytic) {
        for i in 0..grad.len() {
            let original = params.get(id).value().data()[i];
            params.get_mut(id).value_mut().data_mut()[i] = original + epsilon;
            let plus = eval_loss(params, &mut loss);
            params.get_mut(id).value_mut().data_mut()[i] = original - epsilon;
            let minus = eval_loss(params, &mut loss);
            params.get_mut(id).value_mut().data_mut()[i] = original;
            let numeric = (plus? - minus?) / (2.0 * epsilon);
            let a = grad.data()[i];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-12);
            worst = worst.max(rel);
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Activation;

    #[test]
    fn no_parameters_gives_zero() {
        let mut params = ParamSet::new();
        let err = gradient_check(&mut params, 1e-6, |tape, _| {
            let x = tape.input(Tensor::vector(vec![1.0, 2.0]));
            let y = tape.input(Tensor::vector(vec![0.0, 0.0]));
            tape.mse(x, y)
        })
        .unwrap();
        assert_eq!(err, 0.0);
    }

    #[test]
    fn rejects_bad_epsilon() {
        let mut params = ParamSet::new();
        for eps in [0.0, -1e-6, 1e-2] {
            let r = gradient_check(&mut params, eps, |tape, _| Ok(tape.input(Tensor::scalar(0.0))));
            assert!(matches!(r, Err(NnError::Argument(_))));
        }
    }

    #[test]
    fn non_finite_loss_is_reported() {
        let mut params = ParamSet::new();
        params.add("w", Tensor::vector(vec![1.0]));
        let r = gradient_check(&mut params, 1e-6, |tape, _| Ok(tape.input(Tensor::scalar(f64::NAN))));
        assert!(matches!(r, Err(NnError::NumericInstability(_))));
    }

    #[test]
    fn sigmoid_dense_passes() {
        let mut params = ParamSet::new();
        let w = params.add("w", Tensor::new(vec![2, 3], vec![0.3, -0.2, 0.5, 0.1, 0.4, -0.6]).unwrap());
        let b = params.add("b", Tensor::vector(vec![0.05, -0.1]));
        let err = gradient_check(&mut params, 1e-6, |tape, p| {
            let x = tape.input(Tensor::new(vec![2, 3], vec![0.5, -1.0, 0.25, 1.5, 0.3, -0.7]).unwrap());
            let wv = tape.param(p, w);
            let bv = tape.param(p, b);
            let y = tape.dense(x, wv, bv, Activation::Sigmoid)?;
            let target = tape.input(Tensor::new(vec![2, 2], vec![0.1, 0.9, 0.4, 0.2]).unwrap());
            tape.mse(y, target)
        })
        .unwrap();
        assert!(err < 1e-5, "{err}");
    }
}
