use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{persistence_baseline, ArchitectureSpec, Geometry, ModelError, ModelKind, Stage};
use crate::data::{FeatureSchema, Normalizer, WindowSample};
use crate::nn::layers::{Conv1dLayer, DenseLayer, LstmLayer, MaxPool1d, RnnLayer};
use crate::nn::{self, Activation, NnError, ParamSet, Tape, Tensor, Var};

/// Samples per forward pass inside [`SurrogateModel::predict`].
const PREDICT_CHUNK: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Inference,
}

#[derive(Debug, Clone)]
pub(crate) enum Layer {
    Dense(DenseLayer),
    Dropout(f64),
    Rnn(RnnLayer),
    Lstm(LstmLayer),
    Conv(Conv1dLayer),
    Pool(MaxPool1d),
    /// `[B, T, C]` → `[B, C]` at step `T-1`.
    LastStep,
    /// `[B, T, C]` → `[B, T·C]`.
    Flatten,
}

#[derive(Debug, Clone)]
pub struct SurrogateModel {
    spec: ArchitectureSpec,
    seed: u64,
    params: ParamSet,
    layers: Vec<Layer>,
    normalizer: Option<Normalizer>,
    schema: Option<FeatureSchema>,
    mode: Mode,
}

#[derive(Clone, Copy)]
enum Extent {
    Seq { steps: usize, channels: usize },
    Flat(usize),
}

/// Assembles the layers of `spec` with Glorot-uniform weights and zero biases
/// drawn from a generator seeded by `seed`. The model starts in inference mode.
pub fn build_model(spec: ArchitectureSpec, seed: u64) -> Result<SurrogateModel, ModelError> {
    spec.validate()?;
    let g = &spec.geometry;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = ParamSet::new();
    let mut layers = Vec::new();
    if spec.kind == ModelKind::Persistence {
        return Ok(SurrogateModel::assemble(spec, seed, params, layers));
    }
    let mut extent = if spec.kind.uses_sequence() {
        Extent::Seq {
            steps: g.sequence_len(),
            channels: g.sequence_channels(),
        }
    } else {
        Extent::Flat(g.flat_inputs())
    };
    let last_step_readout = matches!(spec.kind, ModelKind::Rnn | ModelKind::Lstm);
    let to_flat = |extent: Extent, layers: &mut Vec<Layer>| match extent {
        Extent::Flat(n) => n,
        Extent::Seq { steps, channels } => {
            if last_step_readout {
                layers.push(Layer::LastStep);
                channels
            } else {
                layers.push(Layer::Flatten);
                steps * channels
            }
        }
    };
    for (i, stage) in spec.stages.iter().enumerate() {
        let name = format!("stage{i}");
        match *stage {
            Stage::Dense { units, activation } => {
                let inputs = to_flat(extent, &mut layers);
                layers.push(Layer::Dense(DenseLayer::new(
                    &mut params,
                    &mut rng,
                    &format!("{name}.dense"),
                    inputs,
                    units,
                    activation,
                )));
                extent = Extent::Flat(units);
            }
            Stage::Dropout { rate } => layers.push(Layer::Dropout(rate)),
            Stage::Rnn { hidden } | Stage::Lstm { hidden } => {
                let Extent::Seq { steps, channels } = extent else {
                    return Err(ModelError::Spec("recurrent stage after flattening".into()));
                };
                layers.push(if matches!(stage, Stage::Rnn { .. }) {
                    Layer::Rnn(RnnLayer::new(&mut params, &mut rng, &format!("{name}.rnn"), channels, hidden))
                } else {
                    Layer::Lstm(LstmLayer::new(&mut params, &mut rng, &format!("{name}.lstm"), channels, hidden))
                });
                extent = Extent::Seq { steps, channels: hidden };
            }
            Stage::Conv {
                filters,
                width,
                stride,
                activation,
            } => {
                let Extent::Seq { steps, channels } = extent else {
                    return Err(ModelError::Spec("convolution after flattening".into()));
                };
                let conv = Conv1dLayer::new(
                    &mut params,
                    &mut rng,
                    &format!("{name}.conv"),
                    channels,
                    filters,
                    width,
                    stride,
                    activation,
                );
                let steps = conv
                    .output_len(steps)
                    .ok_or_else(|| ModelError::Spec(format!("kernel width {width} exceeds {steps} steps")))?;
                layers.push(Layer::Conv(conv));
                extent = Extent::Seq { steps, channels: filters };
            }
            Stage::MaxPool { window, stride } => {
                let Extent::Seq { steps, channels } = extent else {
                    return Err(ModelError::Spec("pooling after flattening".into()));
                };
                let pool = MaxPool1d { window, stride };
                let steps = pool
                    .output_len(steps)
                    .ok_or_else(|| ModelError::Spec(format!("pool window {window} exceeds {steps} steps")))?;
                layers.push(Layer::Pool(pool));
                extent = Extent::Seq { steps, channels };
            }
        }
    }
    let inputs = to_flat(extent, &mut layers);
    layers.push(Layer::Dense(DenseLayer::new(
        &mut params,
        &mut rng,
        "head",
        inputs,
        spec.head_width(),
        Activation::Identity,
    )));
    Ok(SurrogateModel::assemble(spec, seed, params, layers))
}

impl SurrogateModel {
    fn assemble(spec: ArchitectureSpec, seed: u64, params: ParamSet, layers: Vec<Layer>) -> Self {
        Self {
            spec,
            seed,
            params,
            layers,
            normalizer: None,
            schema: None,
            mode: Mode::Inference,
        }
    }

    pub fn spec(&self) -> &ArchitectureSpec {
        &self.spec
    }

    pub fn kind(&self) -> ModelKind {
        self.spec.kind
    }

    pub fn geometry(&self) -> &Geometry {
        &self.spec.geometry
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn set_mode(&mut self, mode: Mode) {
        self.mode = mode;
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    /// Mutable parameters; refused in inference mode.
    pub fn params_mut(&mut self) -> Result<&mut ParamSet, ModelError> {
        match self.mode {
            Mode::Train => Ok(&mut self.params),
            Mode::Inference => Err(ModelError::Frozen),
        }
    }

    pub(crate) fn layers_ref(&self) -> &[Layer] {
        &self.layers
    }

    pub(crate) fn params_internal(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn normalizer(&self) -> Option<&Normalizer> {
        self.normalizer.as_ref()
    }

    pub fn schema(&self) -> Option<&FeatureSchema> {
        self.schema.as_ref()
    }

    /// Attaches the scaling (and the schema it was fitted for) that inputs
    /// must be expressed in.
    pub fn with_normalizer(mut self, normalizer: Normalizer, schema: FeatureSchema) -> Self {
        self.normalizer = Some(normalizer);
        self.schema = Some(schema);
        self
    }

    pub(crate) fn set_normalizer(&mut self, normalizer: Option<Normalizer>, schema: Option<FeatureSchema>) {
        self.normalizer = normalizer;
        self.schema = schema;
    }

    pub fn num_parameters(&self) -> usize {
        self.params.num_elements()
    }

    /// Fails with a dimension error unless `sample` was cut with this model's
    /// geometry.
    pub fn check_sample(&self, sample: &WindowSample) -> Result<(), ModelError> {
        let g = &self.spec.geometry;
        let got = (
            sample.past_steps(),
            sample.horizon(),
            sample.num_measured(),
            sample.num_covariates(),
            sample.num_targets(),
        );
        let want = (g.past_steps, g.horizon, g.measured, g.covariates(), g.targets());
        if got != want {
            return Err(ModelError::Dimension(format!(
                "sample (w, k, P, F, targets) = {got:?}, model expects {want:?}"
            )));
        }
        Ok(())
    }

    /// Model input for `batch`: `[B, w·P + k·F]` for flat models,
    /// `[B, w + k, P + 1]` for sequence models.
    ///
    /// Sequence rows `0..w` carry the measured features with indicator 0;
    /// rows `w..w+k` carry the future covariates in their own columns, zeros
    /// elsewhere, and indicator 1.
    pub fn encode_inputs(&self, batch: &[WindowSample]) -> Result<Tensor, ModelError> {
        for s in batch {
            self.check_sample(s)?;
        }
        let g = &self.spec.geometry;
        if !self.spec.kind.uses_sequence() {
            let width = g.flat_inputs();
            let mut data = Vec::with_capacity(batch.len() * width);
            for s in batch {
                data.extend_from_slice(s.past());
                data.extend_from_slice(s.future());
            }
            return Ok(Tensor::new(vec![batch.len(), width], data)?);
        }
        let (steps, channels) = (g.sequence_len(), g.sequence_channels());
        let mut data = vec![0.0; batch.len() * steps * channels];
        for (b, s) in batch.iter().enumerate() {
            let base = b * steps * channels;
            for t in 0..g.past_steps {
                let row = base + t * channels;
                data[row..row + g.measured].copy_from_slice(s.past_row(t));
            }
            for j in 0..g.horizon {
                let row = base + (g.past_steps + j) * channels;
                for (&col, &v) in g.covariate_columns.iter().zip(s.future_row(j)) {
                    data[row + col] = v;
                }
                data[row + g.measured] = 1.0;
            }
        }
        Ok(Tensor::new(vec![batch.len(), steps, channels], data)?)
    }

    /// Targets of `batch` as `[B, k·targets]`, matching the head layout.
    pub fn encode_targets(&self, batch: &[WindowSample]) -> Result<Tensor, ModelError> {
        for s in batch {
            self.check_sample(s)?;
        }
        let width = self.spec.head_width();
        let mut data = Vec::with_capacity(batch.len() * width);
        for s in batch {
            data.extend_from_slice(s.target());
        }
        Ok(Tensor::new(vec![batch.len(), width], data)?)
    }

    /// Records the network on `tape` and returns the `[B, k·targets]` head
    /// output. Dropout is active only when `dropout_rng` is given.
    pub fn forward(
        &self,
        tape: &mut Tape,
        input: Var,
        dropout_rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Var, ModelError> {
        self.forward_with(&self.params, tape, input, dropout_rng)
    }

    fn forward_with(
        &self,
        params: &ParamSet,
        tape: &mut Tape,
        input: Var,
        mut dropout_rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Var, ModelError> {
        if self.spec.kind == ModelKind::Persistence {
            return Err(ModelError::Argument("persistence has no differentiable network".into()));
        }
        let mut x = input;
        for layer in &self.layers {
            x = match layer {
                Layer::Dense(l) => l.forward(tape, params, x)?,
                Layer::Dropout(rate) => match dropout_rng.as_deref_mut() {
                    Some(rng) if *rate > 0.0 => tape.dropout(x, *rate, rng)?,
                    _ => x,
                },
                Layer::Rnn(l) => l.forward(tape, params, x)?,
                Layer::Lstm(l) => l.forward(tape, params, x)?,
                Layer::Conv(l) => l.forward(tape, params, x)?,
                Layer::Pool(l) => l.forward(tape, x)?,
                Layer::LastStep => {
                    let steps = tape.value(x).shape()[1];
                    tape.select_step(x, steps - 1)?
                }
                Layer::Flatten => {
                    let s = tape.value(x).shape().to_vec();
                    tape.reshape(x, &[s[0], s[1] * s[2]])?
                }
            };
        }
        Ok(x)
    }

    /// Normalized-space forecasts, `[B, k, targets]`. Never touches the
    /// parameters and ignores dropout.
    pub fn predict(&self, batch: &[WindowSample]) -> Result<Tensor, ModelError> {
        let g = &self.spec.geometry;
        for s in batch {
            self.check_sample(s)?;
        }
        if self.spec.kind == ModelKind::Persistence {
            return persistence_baseline(batch, g);
        }
        let width = self.spec.head_width();
        let mut out = Vec::with_capacity(batch.len() * width);
        for chunk in batch.chunks(PREDICT_CHUNK) {
            let mut tape = Tape::new();
            let x = tape.input(self.encode_inputs(chunk)?);
            let y = self.forward(&mut tape, x, None)?;
            out.extend_from_slice(tape.value(y).data());
        }
        Ok(Tensor::new(vec![batch.len(), g.horizon, g.targets()], out)?)
    }

    /// Largest relative error between analytic and central-difference
    /// gradients of the MSE on `batch` (dropout disabled).
    pub fn gradient_check(&self, batch: &[WindowSample], epsilon: f64) -> Result<f64, ModelError> {
        if batch.is_empty() {
            return Err(ModelError::Argument("gradient check needs at least one sample".into()));
        }
        let inputs = self.encode_inputs(batch)?;
        let targets = self.encode_targets(batch)?;
        let mut params = self.params.clone();
        let mut err = None;
        let check = nn::gradient_check(&mut params, epsilon, |tape, p| {
            let x = tape.input(inputs.clone());
            let t = tape.input(targets.clone());
            let y = self.forward_with(p, tape, x, None).map_err(|e| {
                let msg = e.to_string();
                err = Some(e);
                NnError::Argument(msg)
            })?;
            tape.mse(y, t)
        });
        match (check, err) {
            (_, Some(e)) => Err(e),
            (r, None) => Ok(r?),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{build_windows, parse_timestamp, TimeSeriesFrame};

    fn toy_samples(w: usize, k: usize, n: usize) -> (FeatureSchema, Vec<WindowSample>) {
        let schema = FeatureSchema::miami_river();
        let len = n + w + k - 1;
        let cols = (0..schema.len())
            .map(|f| (0..len).map(|i| ((i as f64) * 0.3 + f as f64).sin() * 0.5 + 0.5).collect())
            .collect();
        let names = schema.names().iter().map(|s| s.to_string()).collect();
        let frame = TimeSeriesFrame::new(parse_timestamp("2020-01-01 00:00").unwrap(), names, cols).unwrap();
        let samples = build_windows(&frame, w, k, &schema).unwrap();
        (schema, samples)
    }

    fn small_spec(kind: ModelKind, schema: &FeatureSchema, w: usize, k: usize) -> ArchitectureSpec {
        let g = Geometry::from_schema(schema, w, k);
        let hp = super::super::Hyperparameters {
            mlp_hidden: vec![8],
            dropout: 0.1,
            recurrent_hidden: 5,
            filters: 4,
            kernel_width: 3,
            pool_width: 2,
            conv_blocks: 1,
            rcnn_conv_blocks: 1,
        };
        ArchitectureSpec::with_hyperparameters(kind, g, &hp)
    }

    #[test]
    fn every_kind_predicts_batch_by_k_by_4() {
        let (schema, samples) = toy_samples(6, 3, 5);
        for kind in ModelKind::ALL {
            let model = build_model(small_spec(kind, &schema, 6, 3), 1).unwrap();
            assert_eq!(model.predict(&samples).unwrap().shape(), &[5, 3, 4], "{kind}");
            assert_eq!(model.predict(&samples[..1]).unwrap().shape(), &[1, 3, 4]);
        }
    }

    #[test]
    fn head_width_and_seeded_init() {
        let schema = FeatureSchema::miami_river();
        let spec = ArchitectureSpec::default_for(ModelKind::Rcnn, Geometry::from_schema(&schema, 72, 24));
        let a = build_model(spec.clone(), 42).unwrap();
        let b = build_model(spec.clone(), 42).unwrap();
        let c = build_model(spec, 43).unwrap();
        let Some(Layer::Dense(head)) = a.layers.last() else { panic!() };
        assert_eq!(head.outputs, 96);
        assert_eq!(a.params.checksum(), b.params.checksum());
        assert_ne!(a.params.checksum(), c.params.checksum());
    }

    #[test]
    fn rcnn_passes_full_hidden_sequence_to_conv() {
        let schema = FeatureSchema::miami_river();
        let spec = ArchitectureSpec::default_for(ModelKind::Rcnn, Geometry::from_schema(&schema, 10, 4));
        let model = build_model(spec, 0).unwrap();
        let Layer::Rnn(rnn) = &model.layers[0] else { panic!() };
        let Layer::Conv(conv) = &model.layers[1] else { panic!() };
        assert_eq!(conv.channels, rnn.hidden);
        let (_, samples) = toy_samples(10, 4, 2);
        let mut tape = Tape::new();
        let x = tape.input(model.encode_inputs(&samples).unwrap());
        let h = rnn.forward(&mut tape, &model.params, x).unwrap();
        assert_eq!(tape.value(h).shape(), &[2, 14, 64]);
    }

    #[test]
    fn permutation_equivariant_and_pure() {
        let (schema, samples) = toy_samples(6, 3, 7);
        for kind in ModelKind::NEURAL {
            let model = build_model(small_spec(kind, &schema, 6, 3), 5).unwrap();
            let before = model.params.checksum();
            let y = model.predict(&samples).unwrap();
            let mut rev = samples.clone();
            rev.reverse();
            let yr = model.predict(&rev).unwrap();
            let per = 3 * 4;
            for i in 0..7 {
                assert_eq!(&y.data()[i * per..(i + 1) * per], &yr.data()[(6 - i) * per..(7 - i) * per], "{kind}");
            }
            assert_eq!(model.params.checksum(), before);
        }
    }

    #[test]
    fn zero_head_gives_zero_output() {
        let (schema, samples) = toy_samples(4, 2, 3);
        let mut model = build_model(small_spec(ModelKind::LinearRegression, &schema, 4, 2), 3).unwrap();
        model.set_mode(Mode::Train);
        model.params_mut().unwrap().iter_mut().for_each(|p| p.value_mut().fill(0.0));
        model.set_mode(Mode::Inference);
        assert!(model.predict(&samples).unwrap().data().iter().all(|&v| v == 0.0));
        assert!(matches!(model.params_mut(), Err(ModelError::Frozen)));
    }

    #[test]
    fn sequence_encoding_layout() {
        let (schema, samples) = toy_samples(3, 2, 1);
        let model = build_model(small_spec(ModelKind::Rnn, &schema, 3, 2), 0).unwrap();
        let x = model.encode_inputs(&samples).unwrap();
        assert_eq!(x.shape(), &[1, 5, 12]);
        let s = &samples[0];
        let row = |t: usize| &x.data()[t * 12..(t + 1) * 12];
        assert_eq!(&row(2)[..11], s.past_row(2));
        assert_eq!(row(2)[11], 0.0);
        let tide = schema.index_of("WS_S4").unwrap();
        let target = schema.index_of("WS_S1").unwrap();
        assert_eq!(row(3)[tide], s.future_row(0)[5]);
        assert_eq!(row(3)[target], 0.0);
        assert_eq!(row(4)[11], 1.0);
    }

    #[test]
    fn geometry_mismatch_is_dimension_error() {
        let (schema, samples) = toy_samples(5, 3, 2);
        let model = build_model(small_spec(ModelKind::Mlp, &schema, 6, 3), 0).unwrap();
        assert!(matches!(model.predict(&samples), Err(ModelError::Dimension(_))));
    }

    #[test]
    fn model_gradients_match_finite_differences() {
        let (schema, samples) = toy_samples(5, 2, 3);
        for kind in ModelKind::NEURAL {
            let model = build_model(small_spec(kind, &schema, 5, 2), 11).unwrap();
            let err = model.gradient_check(&samples, 1e-5).unwrap();
            assert!(err < 1e-5, "{kind}: {err}");
        }
    }
}
