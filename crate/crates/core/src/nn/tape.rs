use rand::Rng;

use super::gemm::{gemm, Mat};
use super::{Activation, NnError, ParamId, ParamSet, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    Dense {
        x: Var,
        w: Var,
        b: Var,
        act: Activation,
    },
    Act {
        x: Var,
        act: Activation,
    },
    Add(Var, Var),
    Mul(Var, Var),
    Concat {
        parts: Vec<Var>,
    },
    SelectStep {
        x: Var,
        step: usize,
    },
    StackSteps {
        parts: Vec<Var>,
    },
    Reshape {
        x: Var,
    },
    Conv1d {
        x: Var,
        kernels: Var,
        bias: Var,
        stride: usize,
        act: Activation,
    },
    MaxPool {
        x: Var,
        argmax: Vec<usize>,
    },
    Dropout {
        x: Var,
        mask: Vec<f64>,
    },
    Mse {
        pred: Var,
        target: Var,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// The eight LSTM weights, already placed on a tape.
#[derive(Debug, Clone, Copy)]
pub struct LstmWeights {
    pub w_forget: Var,
    pub w_input: Var,
    pub w_candidate: Var,
    pub w_output: Var,
    pub b_forget: Var,
    pub b_input: Var,
    pub b_candidate: Var,
    pub b_output: Var,
}

/// Per-node gradients produced by [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient with respect to `var`, or `None` when nothing flowed into it.
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }
}

/// Record of executed operations for reverse-mode differentiation.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Splits a shape into (batch, trailing dims) where rank `core` is the
/// unbatched rank of the operand.
fn batch_of(shape: &[usize], core: usize) -> Option<usize> {
    match shape.len() {
        r if r == core => Some(1),
        r if r == core + 1 => Some(shape[0]),
        _ => None,
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn requires(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }

    /// Records a constant (no gradient flows back into callers' data).
    pub fn input(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Records a copy of a parameter's current value.
    pub fn param(&mut self, params: &ParamSet, id: ParamId) -> Var {
        self.push(params.get(id).value().clone(), Op::Param(id), true)
    }

    /// `activation(W x + b)` for `x` of shape `[in]` or `[batch, in]`.
    pub fn dense(&mut self, x: Var, w: Var, b: Var, act: Activation) -> Result<Var, NnError> {
        let xs = self.value(x).shape().to_vec();
        let ws = self.value(w).shape().to_vec();
        let bs = self.value(b).shape().to_vec();
        let dim_err = || NnError::Dimension {
            op: "dense",
            left: xs.clone(),
            right: ws.clone(),
        };
        if ws.len() != 2 {
            return Err(dim_err());
        }
        let (out, inp) = (ws[0], ws[1]);
        let batch = batch_of(&xs, 1).ok_or_else(dim_err)?;
        if *xs.last().unwrap() != inp {
            return Err(dim_err());
        }
        if bs != [out] {
            return Err(NnError::Dimension {
                op: "dense bias",
                left: ws.clone(),
                right: bs,
            });
        }
        let mut z = Vec::with_capacity(batch * out);
        let bias = self.value(b).data();
        for _ in 0..batch {
            z.extend_from_slice(bias);
        }
        gemm(
            batch,
            inp,
            out,
            Mat::rows(self.value(x).data(), inp),
            Mat::transposed(self.value(w).data(), inp),
            1.0,
            &mut z,
            out,
        );
        if act != Activation::Identity {
            z.iter_mut().for_each(|v| *v = act.apply(*v));
        }
        let shape = if xs.len() == 1 { vec![out] } else { vec![batch, out] };
        let rg = self.requires(x) || self.requires(w) || self.requires(b);
        Ok(self.push(
            Tensor::new(shape, z).expect("dense shape"),
            Op::Dense { x, w, b, act },
            rg,
        ))
    }

    pub fn activation(&mut self, x: Var, act: Activation) -> Var {
        let value = self.value(x).map(|v| act.apply(v));
        let rg = self.requires(x);
        self.push(value, Op::Act { x, act }, rg)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<(), NnError> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(NnError::Dimension {
                op,
                left: sa.to_vec(),
                right: sb.to_vec(),
            });
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        self.same_shape("add", a, b)?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x + y)
            .collect();
        let value = Tensor::new(self.value(a).shape().to_vec(), data)?;
        let rg = self.requires(a) || self.requires(b);
        Ok(self.push(value, Op::Add(a, b), rg))
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        self.same_shape("mul", a, b)?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x * y)
            .collect();
        let value = Tensor::new(self.value(a).shape().to_vec(), data)?;
        let rg = self.requires(a) || self.requires(b);
        Ok(self.push(value, Op::Mul(a, b), rg))
    }

    /// Concatenates along the last axis; leading axes must agree.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var, NnError> {
        let first = parts
            .first()
            .ok_or_else(|| NnError::Argument("concat of zero tensors".into()))?;
        let lead = self.value(*first).shape().split_last().map(|(_, l)| l.to_vec());
        let lead = lead.ok_or_else(|| NnError::Argument("concat of scalars".into()))?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let s = self.value(p).shape();
            if s.len() != lead.len() + 1 || s[..lead.len()] != lead[..] {
                return Err(NnError::Dimension {
                    op: "concat",
                    left: self.value(*first).shape().to_vec(),
                    right: s.to_vec(),
                });
            }
            widths.push(*s.last().unwrap());
        }
        let rows: usize = lead.iter().product();
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&p, &wdt) in parts.iter().zip(&widths) {
                data.extend_from_slice(&self.value(p).data()[r * wdt..(r + 1) * wdt]);
            }
        }
        let mut shape = lead;
        shape.push(total);
        let rg = parts.iter().any(|&p| self.requires(p));
        Ok(self.push(
            Tensor::new(shape, data)?,
            Op::Concat {
                parts: parts.to_vec(),
            },
            rg,
        ))
    }

    /// Picks time step `step` from `[T, F]` or `[batch, T, F]`.
    pub fn select_step(&mut self, x: Var, step: usize) -> Result<Var, NnError> {
        let s = self.value(x).shape().to_vec();
        let batch = batch_of(&s, 2).ok_or(NnError::Dimension {
            op: "select_step",
            left: s.clone(),
            right: vec![step],
        })?;
        let (t, f) = (s[s.len() - 2], s[s.len() - 1]);
        if step >= t {
            return Err(NnError::Dimension {
                op: "select_step",
                left: s,
                right: vec![step],
            });
        }
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(batch * f);
        for b in 0..batch {
            let off = (b * t + step) * f;
            data.extend_from_slice(&src[off..off + f]);
        }
        let shape = if s.len() == 2 { vec![f] } else { vec![batch, f] };
        let rg = self.requires(x);
        Ok(self.push(Tensor::new(shape, data)?, Op::SelectStep { x, step }, rg))
    }

    /// Stacks per-step `[F]` / `[batch, F]` values into `[T, F]` / `[batch, T, F]`.
    pub fn stack_steps(&mut self, parts: &[Var]) -> Result<Var, NnError> {
        let first = parts
            .first()
            .ok_or_else(|| NnError::Argument("stack of zero steps".into()))?;
        let s0 = self.value(*first).shape().to_vec();
        for &p in parts {
            if self.value(p).shape() != s0.as_slice() {
                return Err(NnError::Dimension {
                    op: "stack_steps",
                    left: s0,
                    right: self.value(p).shape().to_vec(),
                });
            }
        }
        let batch = batch_of(&s0, 1).ok_or(NnError::Dimension {
            op: "stack_steps",
            left: s0.clone(),
            right: vec![],
        })?;
        let f = *s0.last().unwrap();
        let t = parts.len();
        let mut data = vec![0.0; batch * t * f];
        for (step, &p) in parts.iter().enumerate() {
            let src = self.value(p).data();
            for b in 0..batch {
                let dst = (b * t + step) * f;
                data[dst..dst + f].copy_from_slice(&src[b * f..(b + 1) * f]);
            }
        }
        let shape = if s0.len() == 1 { vec![t, f] } else { vec![batch, t, f] };
        let rg = parts.iter().any(|&p| self.requires(p));
        Ok(self.push(
            Tensor::new(shape, data)?,
            Op::StackSteps {
                parts: parts.to_vec(),
            },
            rg,
        ))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var, NnError> {
        let value = self.value(x).clone().reshape(shape)?;
        let rg = self.requires(x);
        Ok(self.push(value, Op::Reshape { x }, rg))
    }

    /// Valid (unpadded) 1-D convolution over the time axis.
    ///
    /// `x`: `[T, F]` or `[batch, T, F]`; `kernels`: `[K, width, F]`; `bias`: `[K]`.
    pub fn conv1d(
        &mut self,
        x: Var,
        kernels: Var,
        bias: Var,
        stride: usize,
        act: Activation,
    ) -> Result<Var, NnError> {
        let xs = self.value(x).shape().to_vec();
        let ks = self.value(kernels).shape().to_vec();
        let dim_err = || NnError::Dimension {
            op: "conv1d",
            left: xs.clone(),
            right: ks.clone(),
        };
        if stride == 0 {
            return Err(NnError::Argument("conv1d stride must be positive".into()));
        }
        if ks.len() != 3 {
            return Err(dim_err());
        }
        let batch = batch_of(&xs, 2).ok_or_else(dim_err)?;
        let (t, f) = (xs[xs.len() - 2], xs[xs.len() - 1]);
        let (nk, width) = (ks[0], ks[1]);
        if ks[2] != f || width == 0 {
            return Err(dim_err());
        }
        if self.value(bias).shape() != [nk] {
            return Err(NnError::Dimension {
                op: "conv1d bias",
                left: ks.clone(),
                right: self.value(bias).shape().to_vec(),
            });
        }
        if width > t {
            return Err(NnError::EmptyOutput {
                op: "conv1d",
                detail: format!("kernel width {width} exceeds sequence length {t}"),
            });
        }
        let tout = (t - width) / stride + 1;
        let patch = width * f;
        let mut out = Vec::with_capacity(batch * tout * nk);
        let bias_v = self.value(bias).data();
        for _ in 0..batch * tout {
            out.extend_from_slice(bias_v);
        }
        let xv = self.value(x).data();
        let kv = self.value(kernels).data();
        for b in 0..batch {
            let xb = &xv[b * t * f..(b + 1) * t * f];
            gemm(
                tout,
                patch,
                nk,
                Mat::strided(xb, stride * f, 1),
                Mat::transposed(kv, patch),
                1.0,
                &mut out[b * tout * nk..(b + 1) * tout * nk],
                nk,
            );
        }
        if act != Activation::Identity {
            out.iter_mut().for_each(|v| *v = act.apply(*v));
        }
        let shape = if xs.len() == 2 {
            vec![tout, nk]
        } else {
            vec![batch, tout, nk]
        };
        let rg = self.requires(x) || self.requires(kernels) || self.requires(bias);
        Ok(self.push(
            Tensor::new(shape, out)?,
            Op::Conv1d {
                x,
                kernels,
                bias,
                stride,
                act,
            },
            rg,
        ))
    }

    /// Per-channel windowed maximum over the time axis of `[T, K]` / `[batch, T, K]`.
    pub fn maxpool1d(&mut self, x: Var, window: usize, stride: usize) -> Result<Var, NnError> {
        let xs = self.value(x).shape().to_vec();
        if window == 0 || stride == 0 {
            return Err(NnError::Argument(
                "maxpool window and stride must be positive".into(),
            ));
        }
        let batch = batch_of(&xs, 2).ok_or(NnError::Dimension {
            op: "maxpool1d",
            left: xs.clone(),
            right: vec![window],
        })?;
        let (t, k) = (xs[xs.len() - 2], xs[xs.len() - 1]);
        if window > t {
            return Err(NnError::EmptyOutput {
                op: "maxpool1d",
                detail: format!("window {window} exceeds sequence length {t}"),
            });
        }
        let tout = (t - window) / stride + 1;
        let xv = self.value(x).data();
        let mut out = Vec::with_capacity(batch * tout * k);
        let mut argmax = Vec::with_capacity(batch * tout * k);
        for b in 0..batch {
            for p in 0..tout {
                for c in 0..k {
                    let mut best = (b * t + p * stride) * k + c;
                    for u in 1..window {
                        let idx = (b * t + p * stride + u) * k + c;
                        // strict comparison keeps the first occurrence on ties
                        if xv[idx] > xv[best] {
                            best = idx;
                        }
                    }
                    out.push(xv[best]);
                    argmax.push(best);
                }
            }
        }
        let shape = if xs.len() == 2 {
            vec![tout, k]
        } else {
            vec![batch, tout, k]
        };
        let rg = self.requires(x);
        Ok(self.push(Tensor::new(shape, out)?, Op::MaxPool { x, argmax }, rg))
    }

    /// Inverted dropout: zeroes each element with probability `rate` and
    /// rescales survivors by `1 / (1 - rate)`.
    pub fn dropout<R: Rng + ?Sized>(
        &mut self,
        x: Var,
        rate: f64,
        rng: &mut R,
    ) -> Result<Var, NnError> {
        if !(0.0..1.0).contains(&rate) {
            return Err(NnError::Argument(format!(
                "dropout rate {rate} outside [0, 1)"
            )));
        }
        let keep = 1.0 - rate;
        let mask: Vec<f64> = (0..self.value(x).len())
            .map(|_| {
                if rng.random::<f64>() < keep {
                    1.0 / keep
                } else {
                    0.0
                }
            })
            .collect();
        let data = self
            .value(x)
            .data()
            .iter()
            .zip(&mask)
            .map(|(v, m)| v * m)
            .collect();
        let value = Tensor::new(self.value(x).shape().to_vec(), data)?;
        let rg = self.requires(x);
        Ok(self.push(value, Op::Dropout { x, mask }, rg))
    }

    /// Mean of squared elementwise differences, as a rank-0 tensor.
    pub fn mse(&mut self, pred: Var, target: Var) -> Result<Var, NnError> {
        self.same_shape("mse", pred, target)?;
        let (p, t) = (self.value(pred).data(), self.value(target).data());
        if p.is_empty() {
            return Err(NnError::Argument("mse of empty tensors".into()));
        }
        let sse: f64 = p.iter().zip(t).map(|(a, b)| (a - b) * (a - b)).sum();
        let value = Tensor::scalar(sse / p.len() as f64);
        let rg = self.requires(pred) || self.requires(target);
        Ok(self.push(value, Op::Mse { pred, target }, rg))
    }

    /// `S_t = tanh(W_xs (x_t ⊕ S_{t-1}) + b_s)`.
    pub fn rnn_step(&mut self, x_t: Var, s_prev: Var, w_xs: Var, b_s: Var) -> Result<Var, NnError> {
        self.check_recurrent("rnn_step", x_t, s_prev, &[w_xs], &[b_s])?;
        let xs = self.concat(&[x_t, s_prev])?;
        self.dense(xs, w_xs, b_s, Activation::Tanh)
    }

    /// One LSTM step; returns `(S_t, C_t)`.
    pub fn lstm_step(
        &mut self,
        x_t: Var,
        s_prev: Var,
        c_prev: Var,
        w: &LstmWeights,
    ) -> Result<(Var, Var), NnError> {
        self.check_recurrent(
            "lstm_step",
            x_t,
            s_prev,
            &[w.w_forget, w.w_input, w.w_candidate, w.w_output],
            &[w.b_forget, w.b_input, w.b_candidate, w.b_output],
        )?;
        self.same_shape("lstm_step cell", s_prev, c_prev)?;
        let xs = self.concat(&[x_t, s_prev])?;
        let f = self.dense(xs, w.w_forget, w.b_forget, Activation::Sigmoid)?;
        let i = self.dense(xs, w.w_input, w.b_input, Activation::Sigmoid)?;
        let cand = self.dense(xs, w.w_candidate, w.b_candidate, Activation::Tanh)?;
        let kept = self.mul(f, c_prev)?;
        let added = self.mul(i, cand)?;
        let c = self.add(kept, added)?;
        let o = self.dense(xs, w.w_output, w.b_output, Activation::Sigmoid)?;
        let tc = self.activation(c, Activation::Tanh);
        let s = self.mul(tc, o)?;
        Ok((s, c))
    }

    fn check_recurrent(
        &self,
        op: &'static str,
        x_t: Var,
        s_prev: Var,
        weights: &[Var],
        biases: &[Var],
    ) -> Result<(), NnError> {
        let xs = self.value(x_t).shape();
        let ss = self.value(s_prev).shape();
        if xs.len() != ss.len() || xs.len() > 2 || (xs.len() == 2 && xs[0] != ss[0]) {
            return Err(NnError::Dimension {
                op,
                left: xs.to_vec(),
                right: ss.to_vec(),
            });
        }
        let m = *xs.last().unwrap_or(&0);
        let n = *ss.last().unwrap_or(&0);
        for &w in weights {
            let ws = self.value(w).shape();
            if ws != [n, m + n] {
                return Err(NnError::Dimension {
                    op,
                    left: vec![n, m + n],
                    right: ws.to_vec(),
                });
            }
        }
        for &b in biases {
            let bs = self.value(b).shape();
            if bs != [n] {
                return Err(NnError::Dimension {
                    op,
                    left: vec![n],
                    right: bs.to_vec(),
                });
            }
        }
        Ok(())
    }

    /// Reverse sweep from `output`, seeded with `seed` (same shape as the
    /// output). Parameter gradients are accumulated into `params`.
    pub fn backward(
        &self,
        output: Var,
        seed: &Tensor,
        params: &mut ParamSet,
    ) -> Result<Gradients, NnError> {
        if self.nodes.is_empty() {
            return Err(NnError::EmptyTape);
        }
        if output.0 >= self.nodes.len() {
            return Err(NnError::Argument(format!(
                "output {} not recorded on this tape",
                output.0
            )));
        }
        let out_shape = self.value(output).shape();
        if seed.shape() != out_shape {
            return Err(NnError::Dimension {
                op: "backward seed",
                left: out_shape.to_vec(),
                right: seed.shape().to_vec(),
            });
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[output.0] = Some(seed.clone());

        for idx in (0..=output.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.backprop_node(node, &g, &mut grads, params)?;
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn backprop_node(
        &self,
        node: &Node,
        g: &Tensor,
        grads: &mut [Option<Tensor>],
        params: &mut ParamSet,
    ) -> Result<(), NnError> {
        match &node.op {
            Op::Leaf => {}
            Op::Param(id) => {
                params.get_mut(*id).gradient_mut().add_assign(g)?;
            }
            Op::Dense { x, w, b, act } => {
                let xs = self.value(*x).shape();
                let (out, inp) = {
                    let ws = self.value(*w).shape();
                    (ws[0], ws[1])
                };
                let batch = batch_of(xs, 1).unwrap_or(1);
                let gz = pre_activation_grad(g, &node.value, *act);
                if self.requires(*x) {
                    let gx = grad_slot(grads, self, *x);
                    gemm(
                        batch,
                        out,
                        inp,
                        Mat::rows(&gz, out),
                        Mat::rows(self.value(*w).data(), inp),
                        1.0,
                        gx,
                        inp,
                    );
                }
                if self.requires(*w) {
                    let gw = grad_slot(grads, self, *w);
                    gemm(
                        out,
                        batch,
                        inp,
                        Mat::transposed(&gz, out),
                        Mat::rows(self.value(*x).data(), inp),
                        1.0,
                        gw,
                        inp,
                    );
                }
                if self.requires(*b) {
                    let gb = grad_slot(grads, self, *b);
                    for row in gz.chunks_exact(out) {
                        for (acc, v) in gb.iter_mut().zip(row) {
                            *acc += v;
                        }
                    }
                }
            }
            Op::Act { x, act } => {
                if self.requires(*x) {
                    let gz = pre_activation_grad(g, &node.value, *act);
                    add_into(grad_slot(grads, self, *x), &gz);
                }
            }
            Op::Add(a, b) => {
                for v in [a, b] {
                    if self.requires(*v) {
                        add_into(grad_slot(grads, self, *v), g.data());
                    }
                }
            }
            Op::Mul(a, b) => {
                if self.requires(*a) {
                    let other = self.value(*b).data();
                    let ga = grad_slot(grads, self, *a);
                    for ((acc, gi), o) in ga.iter_mut().zip(g.data()).zip(other) {
                        *acc += gi * o;
                    }
                }
                if self.requires(*b) {
                    let other = self.value(*a).data();
                    let gb = grad_slot(grads, self, *b);
                    for ((acc, gi), o) in gb.iter_mut().zip(g.data()).zip(other) {
                        *acc += gi * o;
                    }
                }
            }
            Op::Concat { parts } => {
                let total = *node.value.shape().last().unwrap();
                let rows = node.value.len() / total.max(1);
                let mut offset = 0;
                for &p in parts {
                    let wdt = *self.value(p).shape().last().unwrap();
                    if self.requires(p) {
                        let gp = grad_slot(grads, self, p);
                        for r in 0..rows {
                            let src = &g.data()[r * total + offset..r * total + offset + wdt];
                            add_into(&mut gp[r * wdt..(r + 1) * wdt], src);
                        }
                    }
                    offset += wdt;
                }
            }
            Op::SelectStep { x, step } => {
                if self.requires(*x) {
                    let s = self.value(*x).shape();
                    let (t, f) = (s[s.len() - 2], s[s.len() - 1]);
                    let batch = batch_of(s, 2).unwrap_or(1);
                    let gx = grad_slot(grads, self, *x);
                    for b in 0..batch {
                        let off = (b * t + step) * f;
                        add_into(&mut gx[off..off + f], &g.data()[b * f..(b + 1) * f]);
                    }
                }
            }
            Op::StackSteps { parts } => {
                let t = parts.len();
                let f = *node.value.shape().last().unwrap();
                let batch = node.value.len() / (t * f).max(1);
                for (step, &p) in parts.iter().enumerate() {
                    if self.requires(p) {
                        let gp = grad_slot(grads, self, p);
                        for b in 0..batch {
                            let src = (b * t + step) * f;
                            add_into(&mut gp[b * f..(b + 1) * f], &g.data()[src..src + f]);
                        }
                    }
                }
            }
            Op::Reshape { x } => {
                if self.requires(*x) {
                    add_into(grad_slot(grads, self, *x), g.data());
                }
            }
            Op::Conv1d {
                x,
                kernels,
                bias,
                stride,
                act,
            } => {
                let xs = self.value(*x).shape();
                let (t, f) = (xs[xs.len() - 2], xs[xs.len() - 1]);
                let batch = batch_of(xs, 2).unwrap_or(1);
                let ks = self.value(*kernels).shape();
                let (nk, width) = (ks[0], ks[1]);
                let patch = width * f;
                let tout = (t - width) / stride + 1;
                let gz = pre_activation_grad(g, &node.value, *act);
                if self.requires(*x) {
                    let kv = self.value(*kernels).data();
                    let mut cols = vec![0.0; tout * patch];
                    let gx = grad_slot(grads, self, *x);
                    for b in 0..batch {
                        gemm(
                            tout,
                            nk,
                            patch,
                            Mat::rows(&gz[b * tout * nk..(b + 1) * tout * nk], nk),
                            Mat::rows(kv, patch),
                            0.0,
                            &mut cols,
                            patch,
                        );
                        // windows overlap when stride < width, so scatter-add
                        for p in 0..tout {
                            let dst = b * t * f + p * stride * f;
                            add_into(&mut gx[dst..dst + patch], &cols[p * patch..(p + 1) * patch]);
                        }
                    }
                }
                if self.requires(*kernels) {
                    let xv = self.value(*x).data();
                    let gk = grad_slot(grads, self, *kernels);
                    for b in 0..batch {
                        gemm(
                            nk,
                            tout,
                            patch,
                            Mat::transposed(&gz[b * tout * nk..(b + 1) * tout * nk], nk),
                            Mat::strided(&xv[b * t * f..(b + 1) * t * f], stride * f, 1),
                            1.0,
                            gk,
                            patch,
                        );
                    }
                }
                if self.requires(*bias) {
                    let gb = grad_slot(grads, self, *bias);
                    for row in gz.chunks_exact(nk) {
                        add_into(gb, row);
                    }
                }
            }
            Op::MaxPool { x, argmax } => {
                if self.requires(*x) {
                    let gx = grad_slot(grads, self, *x);
                    for (&src, gi) in argmax.iter().zip(g.data()) {
                        gx[src] += gi;
                    }
                }
            }
            Op::Dropout { x, mask } => {
                if self.requires(*x) {
                    let gx = grad_slot(grads, self, *x);
                    for ((acc, gi), m) in gx.iter_mut().zip(g.data()).zip(mask) {
                        *acc += gi * m;
                    }
                }
            }
            Op::Mse { pred, target } => {
                let n = self.value(*pred).len() as f64;
                let scale = 2.0 * g.item() / n;
                let (p, t) = (self.value(*pred).data(), self.value(*target).data());
                if self.requires(*pred) {
                    let gp = grad_slot(grads, self, *pred);
                    for ((acc, a), b) in gp.iter_mut().zip(p).zip(t) {
                        *acc += scale * (a - b);
                    }
                }
                if self.requires(*target) {
                    let gt = grad_slot(grads, self, *target);
                    for ((acc, a), b) in gt.iter_mut().zip(p).zip(t) {
                        *acc -= scale * (a - b);
                    }
                }
            }
        }
        Ok(())
    }
}

fn pre_activation_grad(g: &Tensor, y: &Tensor, act: Activation) -> Vec<f64> {
    if act == Activation::Identity {
        return g.data().to_vec();
    }
    g.data()
        .iter()
        .zip(y.data())
        .map(|(gi, yi)| gi * act.derivative_from_output(*yi))
        .collect()
}

fn grad_slot<'g>(grads: &'g mut [Option<Tensor>], tape: &Tape, var: Var) -> &'g mut [f64] {
    grads[var.0]
        .get_or_insert_with(|| Tensor::zeros(tape.value(var).shape()))
        .data_mut()
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    fn leaf_params(tape: &mut Tape, params: &mut ParamSet, w: Tensor, b: Tensor) -> (Var, Var) {
        let wi = params.add("w", w);
        let bi = params.add("b", b);
        (tape.param(params, wi), tape.param(params, bi))
    }

    #[test]
    fn dense_identity_weights() {
        let mut tape = Tape::new();
        let mut params = ParamSet::new();
        let (w, b) = leaf_params(
            &mut tape,
            &mut params,
            t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]),
            t(&[2], &[0.0, 0.0]),
        );
        let x = tape.input(Tensor::vector(vec![3.0, -1.0]));
        let y = tape.dense(x, w, b, Activation::Identity).unwrap();
        assert_eq!(tape.value(y).data(), &[3.0, -1.0]);
        assert_eq!(tape.value(y).shape(), &[2]);
    }

    #[test]
    fn dense_sigmoid_matches_scalar_evaluation() {
        let mut tape = Tape::new();
        let mut params = ParamSet::new();
        let (w, b) = leaf_params(&mut tape, &mut params, t(&[1, 2], &[1.0, 1.0]), t(&[1], &[1.0]));
        let x = tape.input(Tensor::vector(vec![1.0, 1.0]));
        let y = tape.dense(x, w, b, Activation::Sigmoid).unwrap();
        let expected = 1.0 / (1.0 + (-3.0f64).exp());
        assert!((tape.value(y).item() - expected).abs() < 1e-15);
        assert!((expected - 0.952_574_126_822_433).abs() < 1e-12);
    }

    #[test]
    fn dense_tanh_of_zero() {
        let mut tape = Tape::new();
        let mut params = ParamSet::new();
        let (w, b) = leaf_params(&mut tape, &mut params, t(&[1, 1], &[2.0]), t(&[1], &[0.0]));
        let x = tape.input(Tensor::vector(vec![0.0]));
        let y = tape.dense(x, w, b, Activation::Tanh).unwrap();
        assert_eq!(tape.value(y).data(), &[0.0]);
    }

    #[test]
    fn dense_shape_mismatch_names_both_shapes() {
        let mut tape = Tape::new();
        let mut params = ParamSet::new();
        let (w, b) = leaf_params(&mut tape, &mut params, Tensor::zeros(&[2, 3]), Tensor::zeros(&[2]));
        let x = tape.input(Tensor::vector(vec![1.0, 2.0]));
        let err = tape.dense(x, w, b, Activation::Identity).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2]") && msg.contains("[2, 3]"), "{msg}");
    }

    #[test]
    fn rnn_step_cases() {
        let run = |w: [f64; 2], x: f64, s: f64| {
            let mut tape = Tape::new();
            let mut params = ParamSet::new();
            let (w, b) = leaf_params(&mut tape, &mut params, t(&[1, 2], &w), t(&[1], &[0.0]));
            let xv = tape.input(Tensor::vector(vec![x]));
            let sv = tape.input(Tensor::vector(vec![s]));
            let out = tape.rnn_step(xv, sv, w, b).unwrap();
            tape.value(out).item()
        };
        assert_eq!(run([0.0, 0.0], 0.3, -0.8), 0.0);
        assert!((run([1.0, 0.0], 0.5, 0.7) - 0.5f64.tanh()).abs() < 1e-15);
        assert!((0.5f64.tanh() - 0.462_117_157_260_009_8).abs() < 1e-15);
        assert_eq!(run([0.0, 1.0], 9.9, 0.0), 0.0);
    }

    #[test]
    fn rnn_step_rejects_wrong_width() {
        let mut tape = Tape::new();
        let mut params = ParamSet::new();
        let (w, b) = leaf_params(&mut tape, &mut params, Tensor::zeros(&[1, 3]), Tensor::zeros(&[1]));
        let xv = tape.input(Tensor::vector(vec![1.0]));
        let sv = tape.input(Tensor::vector(vec![0.0]));
        assert!(matches!(
            tape.rnn_step(xv, sv, w, b),
            Err(NnError::Dimension { .. })
        ));
    }

    fn lstm_zero(tape: &mut Tape, params: &mut ParamSet, b_forget: f64) -> LstmWeights {
        let mut mk = |name: &str, shape: &[usize], fill: f64| {
            let id = params.add(name, Tensor::filled(shape, fill));
            tape.param(params, id)
        };
        LstmWeights {
            w_forget: mk("wf", &[1, 2], 0.0),
            w_input: mk("wi", &[1, 2], 0.0),
            w_candidate: mk("wc", &[1, 2], 0.0),
            w_output: mk("wo", &[1, 2], 0.0),
            b_forget: mk("bf", &[1], b_forget),
            b_input: mk("bi", &[1], 0.0),
            b_candidate: mk("bc", &[1], 0.0),
            b_output: mk("bo", &[1], 0.0),
        }
    }

    #[test]
    fn lstm_step_cases() {
        let run = |c_prev: f64, b_forget: f64| {
            let mut tape = Tape::new();
            let mut params = ParamSet::new();
            let w = lstm_zero(&mut tape, &mut params, b_forget);
            let x = tape.input(Tensor::vector(vec![0.4]));
            let s = tape.input(Tensor::vector(vec![0.0]));
            let c = tape.input(Tensor::vector(vec![c_prev]));
            let (s_t, c_t) = tape.lstm_step(x, s, c, &w).unwrap();
            (tape.value(s_t).item(), tape.value(c_t).item())
        };
        assert_eq!(run(0.0, 0.0), (0.0, 0.0));

        let (s, c) = run(1.0, 0.0);
        // f = i = o = σ(0) = 0.5, candidate = tanh(0) = 0
        assert_eq!(c, 0.5);
        assert!((s - 0.5f64.tanh() * 0.5).abs() < 1e-15);
        assert!((s - 0.231_058_578_630_004_9).abs() < 1e-12);

        for c_prev in [-3.0, 0.25, 2.0] {
            let (_, c) = run(c_prev, 20.0);
            assert!((c - c_prev).abs() < 1e-8 * c_prev.abs().max(1.0));
        }
    }

    fn conv(x: &[f64], t_len: usize, f: usize, kernel: &[f64], width: usize, stride: usize) -> Result<Tensor, NnError> {
        let mut tape = Tape::new();
        let mut params = ParamSet::new();
        let nk = kernel.len() / (width * f);
        let (k, b) = leaf_params(
            &mut tape,
            &mut params,
            t(&[nk, width, f], kernel),
            Tensor::zeros(&[nk]),
        );
        let xv = tape.input(t(&[t_len, f], x));
        let y = tape.conv1d(xv, k, b, stride, Activation::Identity)?;
        Ok(tape.value(y).clone())
    }

    #[test]
    fn conv1d_cases() {
        let x = [0.5, -1.0, 2.0];
        assert_eq!(conv(&x, 3, 1, &[1.0], 1, 1).unwrap().data(), &x);
        assert_eq!(
            conv(&[1.0, 2.0, 3.0, 4.0], 4, 1, &[1.0, 0.0, -1.0], 3, 1).unwrap().data(),
            &[-2.0, -2.0]
        );
        assert_eq!(conv(&[5.0, 5.0, 5.0], 3, 1, &[1.0, -1.0], 2, 1).unwrap().data(), &[0.0, 0.0]);
        // T' = floor((T - width) / stride) + 1
        let y = conv(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0], 6, 1, &[1.0, 1.0], 2, 2).unwrap();
        assert_eq!(y.data(), &[3.0, 7.0, 11.0]);
        assert!(matches!(
            conv(&[1.0, 2.0], 2, 1, &[1.0, 1.0, 1.0], 3, 1),
            Err(NnError::EmptyOutput { .. })
        ));
    }

    fn pool(x: &[f64], window: usize, stride: usize) -> Result<Tensor, NnError> {
        let mut tape = Tape::new();
        let xv = tape.input(t(&[x.len(), 1], x));
        let y = tape.maxpool1d(xv, window, stride)?;
        Ok(tape.value(y).clone())
    }

    #[test]
    fn maxpool_cases() {
        assert_eq!(pool(&[1.0, 3.0, 2.0, 5.0], 2, 2).unwrap().data(), &[3.0, 5.0]);
        assert_eq!(pool(&[4.0; 5], 2, 1).unwrap().data(), &[4.0; 4]);
        assert_eq!(pool(&[1.0, 9.0, -2.0, 3.0], 4, 1).unwrap().data(), &[9.0]);
        assert!(matches!(pool(&[1.0, 2.0], 3, 1), Err(NnError::EmptyOutput { .. })));
    }

    #[test]
    fn maxpool_tie_routes_to_first_occurrence() {
        let mut tape = Tape::new();
        let mut params = ParamSet::new();
        let id = params.add("x", t(&[3, 1], &[2.0, 2.0, 1.0]));
        let xv = tape.param(&params, id);
        let y = tape.maxpool1d(xv, 3, 1).unwrap();
        tape.backward(y, &Tensor::filled(&[1, 1], 1.0), &mut params).unwrap();
        assert_eq!(params.get(id).gradient().data(), &[1.0, 0.0, 0.0]);
    }

    #[test]
    fn dense_backward_row_selects_input() {
        let mut tape = Tape::new();
        let mut params = ParamSet::new();
        let wi = params.add("w", t(&[3, 2], &[0.1, 0.2, 0.3, 0.4, 0.5, 0.6]));
        let bi = params.add_zeros("b", &[3]);
        let w = tape.param(&params, wi);
        let b = tape.param(&params, bi);
        let x = tape.input(Tensor::vector(vec![1.5, -2.0]));
        let y = tape.dense(x, w, b, Activation::Identity).unwrap();
        tape.backward(y, &Tensor::vector(vec![0.0, 1.0, 0.0]), &mut params).unwrap();
        assert_eq!(params.get(wi).gradient().data(), &[0.0, 0.0, 1.5, -2.0, 0.0, 0.0]);
        assert_eq!(params.get(bi).gradient().data(), &[0.0, 1.0, 0.0]);
    }

    #[test]
    fn disconnected_branch_receives_nothing() {
        let mut tape = Tape::new();
        let mut params = ParamSet::new();
        let a = params.add("a", Tensor::vector(vec![1.0, 2.0]));
        let b = params.add("b", Tensor::vector(vec![3.0, 4.0]));
        let va = tape.param(&params, a);
        let vb = tape.param(&params, b);
        let ya = tape.activation(va, Activation::Tanh);
        let _yb = tape.activation(vb, Activation::Tanh);
        tape.backward(ya, &Tensor::vector(vec![1.0, 1.0]), &mut params).unwrap();
        assert!(params.get(a).gradient().data().iter().all(|g| *g != 0.0));
        assert_eq!(params.get(b).gradient().data(), &[0.0, 0.0]);
    }

    #[test]
    fn backward_on_empty_tape_errors() {
        let tape = Tape::new();
        let mut params = ParamSet::new();
        assert_eq!(
            tape.backward(Var(0), &Tensor::scalar(1.0), &mut params).unwrap_err(),
            NnError::EmptyTape
        );
    }

    #[test]
    fn mse_value_and_gradient() {
        let mut tape = Tape::new();
        let mut params = ParamSet::new();
        let id = params.add("p", Tensor::vector(vec![0.0, 0.0]));
        let p = tape.param(&params, id);
        let target = tape.input(Tensor::vector(vec![1.0, 3.0]));
        let loss = tape.mse(p, target).unwrap();
        assert_eq!(tape.value(loss).item(), 5.0);
        tape.backward(loss, &Tensor::scalar(1.0), &mut params).unwrap();
        // 2 (p - t) / N
        assert_eq!(params.get(id).gradient().data(), &[-1.0, -3.0]);
    }

    #[test]
    fn dropout_masks_and_rescales() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let mut tape = Tape::new();
        let x = tape.input(Tensor::filled(&[1000], 1.0));
        let y = tape.dropout(x, 0.2, &mut rng).unwrap();
        let vals = tape.value(y).data();
        assert!(vals.iter().all(|&v| v == 0.0 || (v - 1.25).abs() < 1e-15));
        let dropped = vals.iter().filter(|&&v| v == 0.0).count();
        assert!((150..250).contains(&dropped), "{dropped}");
    }
}
