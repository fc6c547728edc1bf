use super::{build_model, ArchitectureSpec, Geometry, ModelError, ModelKind};
use crate::data::WindowSample;
use crate::models::model::Layer;
use crate::models::SurrogateModel;
use crate::nn::gemm::{gemm, Mat};
use crate::nn::Tensor;

/// Repeats the last observed value of each target over the whole horizon.
pub fn persistence_baseline(batch: &[WindowSample], geometry: &Geometry) -> Result<Tensor, ModelError> {
    let (k, n_targets) = (geometry.horizon, geometry.targets());
    let mut out = Vec::with_capacity(batch.len() * k * n_targets);
    for s in batch {
        if s.past_steps() == 0 || s.num_measured() != geometry.measured || s.horizon() != k {
            return Err(ModelError::Dimension(format!(
                "sample (w={}, k={}, P={}) incompatible with horizon {k} over {} features",
                s.past_steps(),
                s.horizon(),
                s.num_measured(),
                geometry.measured
            )));
        }
        let last = s.past_row(s.past_steps() - 1);
        for _ in 0..k {
            out.extend(geometry.target_columns.iter().map(|&c| last[c]));
        }
    }
    Ok(Tensor::new(vec![batch.len(), k, n_targets], out)?)
}

/// Least-squares linear map from the flattened past ⊕ future input to the
/// `k × targets` output, via the normal equations `(XᵀX + λI) β = XᵀY`.
/// The intercept is not damped.
pub fn fit_linear_regression(
    train: &[WindowSample],
    geometry: &Geometry,
    lambda: f64,
) -> Result<SurrogateModel, ModelError> {
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(ModelError::Argument(format!("ridge term must be finite and >= 0, got {lambda}")));
    }
    if train.is_empty() {
        return Err(ModelError::Argument("no training samples".into()));
    }
    let spec = ArchitectureSpec::default_for(ModelKind::LinearRegression, geometry.clone());
    let mut model = build_model(spec, 0)?;
    let x = model.encode_inputs(train)?;
    let y = model.encode_targets(train)?;
    let n = train.len();
    let d = geometry.flat_inputs() + 1;
    let o = geometry.output_width();

    // design matrix with a trailing ones column
    let mut xa = vec![1.0; n * d];
    for (row, src) in xa.chunks_mut(d).zip(x.data().chunks(d - 1)) {
        row[..d - 1].copy_from_slice(src);
    }
    let mut gram = vec![0.0; d * d];
    gemm(d, n, d, Mat::transposed(&xa, d), Mat::rows(&xa, d), 0.0, &mut gram, d);
    let mut rhs = vec![0.0; d * o];
    gemm(d, n, o, Mat::transposed(&xa, d), Mat::rows(y.data(), o), 0.0, &mut rhs, o);
    for i in 0..d - 1 {
        gram[i * d + i] += lambda;
    }
    let chol = cholesky(&mut gram, d).ok_or(ModelError::Singular { lambda })?;
    let beta = chol.solve(&rhs, o);

    let Some(Layer::Dense(head)) = model.layers_ref().last().cloned() else {
        return Err(ModelError::Spec("linear model without a head".into()));
    };
    let mut weight = vec![0.0; o * (d - 1)];
    let mut bias = vec![0.0; o];
    for j in 0..o {
        for i in 0..d - 1 {
            weight[j * (d - 1) + i] = beta[i * o + j];
        }
        bias[j] = beta[(d - 1) * o + j];
    }
    let params = model.params_internal();
    params.get_mut(head.weight).set_value(Tensor::new(vec![o, d - 1], weight)?)?;
    params.get_mut(head.bias).set_value(Tensor::new(vec![o], bias)?)?;
    Ok(model)
}

/// Lower Cholesky factor stored in place (row-major, lower triangle).
struct Cholesky<'a> {
    l: &'a [f64],
    n: usize,
}

/// Factorizes the symmetric matrix `a`. Returns `None` when a pivot falls
/// below `1e-12 × max diagonal`, i.e. the matrix is numerically singular.
fn cholesky(a: &mut [f64], n: usize) -> Option<Cholesky<'_>> {
    let scale = (0..n).map(|i| a[i * n + i]).fold(0.0, f64::max);
    if !(scale > 0.0) || !scale.is_finite() {
        return None;
    }
    let tol = 1e-12 * scale;
    for j in 0..n {
        let row_j = a[j * n..j * n + j].to_vec();
        let diag = a[j * n + j] - row_j.iter().map(|v| v * v).sum::<f64>();
        if !(diag > tol) {
            return None;
        }
        let pivot = diag.sqrt();
        a[j * n + j] = pivot;
        for i in j + 1..n {
            let row_i = &mut a[i * n..i * n + j + 1];
            let dot: f64 = row_i[..j].iter().zip(&row_j).map(|(p, q)| p * q).sum();
            row_i[j] = (row_i[j] - dot) / pivot;
        }
    }
    Some(Cholesky { l: a, n })
}

impl Cholesky<'_> {
    /// Solves `L Lᵀ X = B` for `B` of shape `[n, cols]`.
    fn solve(&self, b: &[f64], cols: usize) -> Vec<f64> {
        let (l, n) = (self.l, self.n);
        let mut x = b.to_vec();
        for c in 0..cols {
            for i in 0..n {
                let mut v = x[i * cols + c];
                for k in 0..i {
                    v -= l[i * n + k] * x[k * cols + c];
                }
                x[i * cols + c] = v / l[i * n + i];
            }
            for i in (0..n).rev() {
                let mut v = x[i * cols + c];
                for k in i + 1..n {
                    v -= l[k * n + i] * x[k * cols + c];
                }
                x[i * cols + c] = v / l[i * n + i];
            }
        }
        x
    }
}
