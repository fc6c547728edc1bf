//! Parameterised layers built on the tape primitives.

use rand::Rng;

use super::{Activation, LstmWeights, NnError, ParamId, ParamSet, Tape, Tensor, Var};

#[derive(Debug, Clone)]
pub struct DenseLayer {
    pub weight: ParamId,
    pub bias: ParamId,
    pub activation: Activation,
    pub inputs: usize,
    pub outputs: usize,
}

impl DenseLayer {
    pub fn new<R: Rng + ?Sized>(
        params: &mut ParamSet,
        rng: &mut R,
        name: &str,
        inputs: usize,
        outputs: usize,
        activation: Activation,
    ) -> Self {
        let weight = params.add_glorot(
            format!("{name}.weight"),
            &[outputs, inputs],
            inputs,
            outputs,
            rng,
        );
        let bias = params.add_zeros(format!("{name}.bias"), &[outputs]);
        Self {
            weight,
            bias,
            activation,
            inputs,
            outputs,
        }
    }

    pub fn forward(&self, tape: &mut Tape, params: &ParamSet, x: Var) -> Result<Var, NnError> {
        let w = tape.param(params, self.weight);
        let b = tape.param(params, self.bias);
        tape.dense(x, w, b, self.activation)
    }
}

fn zero_state(tape: &mut Tape, x: Var, hidden: usize) -> Result<(usize, usize, Var), NnError> {
    let s = tape.value(x).shape().to_vec();
    if s.len() != 3 {
        return Err(NnError::Dimension {
            op: "recurrent sequence",
            left: s,
            right: vec![hidden],
        });
    }
    let state = tape.input(Tensor::zeros(&[s[0], hidden]));
    Ok((s[0], s[1], state))
}

/// Elman recurrent layer returning the full hidden-state sequence.
#[derive(Debug, Clone)]
pub struct RnnLayer {
    pub weight: ParamId,
    pub bias: ParamId,
    pub inputs: usize,
    pub hidden: usize,
}

impl RnnLayer {
    pub fn new<R: Rng + ?Sized>(
        params: &mut ParamSet,
        rng: &mut R,
        name: &str,
        inputs: usize,
        hidden: usize,
    ) -> Self {
        let weight = params.add_glorot(
            format!("{name}.w_xs"),
            &[hidden, inputs + hidden],
            inputs + hidden,
            hidden,
            rng,
        );
        let bias = params.add_zeros(format!("{name}.b_s"), &[hidden]);
        Self {
            weight,
            bias,
            inputs,
            hidden,
        }
    }

    /// `x`: `[batch, T, inputs]` → `[batch, T, hidden]`, processed in
    /// increasing time order from a zero initial state.
    pub fn forward(&self, tape: &mut Tape, params: &ParamSet, x: Var) -> Result<Var, NnError> {
        let (_, steps, mut state) = zero_state(tape, x, self.hidden)?;
        let w = tape.param(params, self.weight);
        let b = tape.param(params, self.bias);
        let mut states = Vec::with_capacity(steps);
        for t in 0..steps {
            let x_t = tape.select_step(x, t)?;
            state = tape.rnn_step(x_t, state, w, b)?;
            states.push(state);
        }
        tape.stack_steps(&states)
    }
}

#[derive(Debug, Clone)]
pub struct LstmLayer {
    pub weights: [ParamId; 4],
    pub biases: [ParamId; 4],
    pub inputs: usize,
    pub hidden: usize,
}

impl LstmLayer {
    pub fn new<R: Rng + ?Sized>(
        params: &mut ParamSet,
        rng: &mut R,
        name: &str,
        inputs: usize,
        hidden: usize,
    ) -> Self {
        let gates = ["f", "i", "c", "o"];
        let weights = gates.map(|g| {
            params.add_glorot(
                format!("{name}.w_{g}"),
                &[hidden, inputs + hidden],
                inputs + hidden,
                hidden,
                rng,
            )
        });
        let biases = gates.map(|g| params.add_zeros(format!("{name}.b_{g}"), &[hidden]));
        Self {
            weights,
            biases,
            inputs,
            hidden,
        }
    }

    pub fn forward(&self, tape: &mut Tape, params: &ParamSet, x: Var) -> Result<Var, NnError> {
        let (batch, steps, mut state) = zero_state(tape, x, self.hidden)?;
        let mut cell = tape.input(Tensor::zeros(&[batch, self.hidden]));
        let [wf, wi, wc, wo] = self.weights.map(|id| tape.param(params, id));
        let [bf, bi, bc, bo] = self.biases.map(|id| tape.param(params, id));
        let weights = LstmWeights {
            w_forget: wf,
            w_input: wi,
            w_candidate: wc,
            w_output: wo,
            b_forget: bf,
            b_input: bi,
            b_candidate: bc,
            b_output: bo,
        };
        let mut states = Vec::with_capacity(steps);
        for t in 0..steps {
            let x_t = tape.select_step(x, t)?;
            (state, cell) = tape.lstm_step(x_t, state, cell, &weights)?;
            states.push(state);
        }
        tape.stack_steps(&states)
    }
}

#[derive(Debug, Clone)]
pub struct Conv1dLayer {
    pub kernels: ParamId,
    pub bias: ParamId,
    pub channels: usize,
    pub filters: usize,
    pub width: usize,
    pub stride: usize,
    pub activation: Activation,
}

impl Conv1dLayer {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng + ?Sized>(
        params: &mut ParamSet,
        rng: &mut R,
        name: &str,
        channels: usize,
        filters: usize,
        width: usize,
        stride: usize,
        activation: Activation,
    ) -> Self {
        let kernels = params.add_glorot(
            format!("{name}.kernels"),
            &[filters, width, channels],
            width * channels,
            width * filters,
            rng,
        );
        let bias = params.add_zeros(format!("{name}.bias"), &[filters]);
        Self {
            kernels,
            bias,
            channels,
            filters,
            width,
            stride,
            activation,
        }
    }

    pub fn output_len(&self, steps: usize) -> Option<usize> {
        (self.width <= steps).then(|| (steps - self.width) / self.stride + 1)
    }

    pub fn forward(&self, tape: &mut Tape, params: &ParamSet, x: Var) -> Result<Var, NnError> {
        let k = tape.param(params, self.kernels);
        let b = tape.param(params, self.bias);
        tape.conv1d(x, k, b, self.stride, self.activation)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct MaxPool1d {
    pub window: usize,
    pub stride: usize,
}

impl MaxPool1d {
    pub fn output_len(&self, steps: usize) -> Option<usize> {
        (self.window <= steps).then(|| (steps - self.window) / self.stride + 1)
    }

    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var, NnError> {
        tape.maxpool1d(x, self.window, self.stride)
    }
}
