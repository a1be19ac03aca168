//! Dense math for a small softmax classifier.
//!
//! The model is a stack of fully connected layers. Every layer but the last
//! is followed by `tanh`; the last layer produces logits that go through a
//! softmax. With a single layer this is multinomial logistic regression.
//! Gradients are derived by hand; [`finite_diff_grad`] is the numerical
//! oracle they are checked against.

use rand::Rng;

use crate::error::{Error, Result};
use crate::prob::ProbVector;

/// Step used by [`finite_diff_grad`].
pub const FINITE_DIFF_STEP: f64 = 1e-5;

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::ShapeMismatch(format!(
                "{rows}x{cols} matrix needs {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("matrix"));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    /// Builds a matrix from equally sized rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::ShapeMismatch("ragged rows".into()));
        }
        Self::new(rows.len(), cols, rows.concat())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    /// Copies the listed rows into a new matrix.
    pub fn select_rows(&self, indices: &[usize]) -> Self {
        let mut data = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Self {
            rows: indices.len(),
            cols: self.cols,
            data,
        }
    }

    /// `self · otherᵀ`, where `other` is `k × cols`.
    fn mul_transposed(&self, other: &DenseMatrix) -> DenseMatrix {
        debug_assert_eq!(self.cols, other.cols);
        let mut out = DenseMatrix::zeros(self.rows, other.rows);
        for i in 0..self.rows {
            let a = self.row(i);
            for j in 0..other.rows {
                let b = other.row(j);
                out.data[i * other.rows + j] = a.iter().zip(b).map(|(x, y)| x * y).sum();
            }
        }
        out
    }
}

/// One fully connected layer: `out = weight · in + bias`, weight is `out × in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weight: DenseMatrix,
    pub bias: Vec<f64>,
}

impl Layer {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            weight: DenseMatrix::zeros(outputs, inputs),
            bias: vec![0.0; outputs],
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.cols
    }

    pub fn outputs(&self) -> usize {
        self.weight.rows
    }

    fn same_shape(&self, other: &Layer) -> bool {
        self.weight.rows == other.weight.rows
            && self.weight.cols == other.weight.cols
            && self.bias.len() == other.bias.len()
    }

    fn values(&self) -> impl Iterator<Item = &f64> {
        self.weight.data.iter().chain(self.bias.iter())
    }

    fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.weight.data.iter_mut().chain(self.bias.iter_mut())
    }
}

/// Layer sizes of a model: `inputs → [hidden →] classes`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelShape {
    pub inputs: usize,
    pub hidden: Option<usize>,
    pub classes: usize,
}

impl ModelShape {
    pub fn linear(inputs: usize, classes: usize) -> Self {
        Self {
            inputs,
            hidden: None,
            classes,
        }
    }

    fn layer_dims(&self) -> Vec<(usize, usize)> {
        match self.hidden {
            Some(h) => vec![(self.inputs, h), (h, self.classes)],
            None => vec![(self.inputs, self.classes)],
        }
    }
}

/// Parameters of the classifier plus the SGD momentum buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    layers: Vec<Layer>,
    velocity: Vec<Layer>,
}

/// Parameter-shaped gradient values.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Layer>,
}

impl Gradients {
    pub fn values(&self) -> impl Iterator<Item = &f64> {
        self.layers.iter().flat_map(Layer::values)
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers.iter_mut().flat_map(Layer::values_mut)
    }
}

impl ModelParams {
    /// Wraps a layer stack. Consecutive layers must chain (`outputs == next inputs`).
    pub fn from_layers(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Empty("layer list"));
        }
        for pair in layers.windows(2) {
            if pair[0].outputs() != pair[1].inputs() {
                return Err(Error::ShapeMismatch(format!(
                    "layer with {} outputs feeds layer with {} inputs",
                    pair[0].outputs(),
                    pair[1].inputs()
                )));
            }
        }
        for layer in &layers {
            if layer.bias.len() != layer.outputs() {
                return Err(Error::ShapeMismatch(
                    "bias length differs from layer outputs".into(),
                ));
            }
            if layer.values().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("model parameters"));
            }
        }
        let velocity = zeros_like(&layers);
        Ok(Self { layers, velocity })
    }

    pub fn zeros(shape: ModelShape) -> Self {
        let layers: Vec<Layer> = shape
            .layer_dims()
            .into_iter()
            .map(|(i, o)| Layer::zeros(i, o))
            .collect();
        let velocity = zeros_like(&layers);
        Self { layers, velocity }
    }

    /// Uniform init in `±1/sqrt(fan_in)` for every weight and bias.
    pub fn init_uniform<R: Rng + ?Sized>(shape: ModelShape, rng: &mut R) -> Self {
        let mut model = Self::zeros(shape);
        for layer in &mut model.layers {
            let bound = 1.0 / (layer.inputs() as f64).sqrt();
            for v in layer.values_mut() {
                *v = rng.random_range(-bound..bound);
            }
        }
        model
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn velocity(&self) -> &[Layer] {
        &self.velocity
    }

    pub fn shape(&self) -> ModelShape {
        ModelShape {
            inputs: self.input_dim(),
            hidden: if self.layers.len() > 1 {
                Some(self.layers[0].outputs())
            } else {
                None
            },
            classes: self.class_count(),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn class_count(&self) -> usize {
        self.layers[self.layers.len() - 1].outputs()
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.data.len() + l.bias.len())
            .sum()
    }

    /// Bytes needed to ship the parameters as `f64`.
    pub fn size_bytes(&self) -> usize {
        self.param_count() * std::mem::size_of::<f64>()
    }

    pub fn same_shape(&self, other: &ModelParams) -> bool {
        self.layers.len() == other.layers.len()
            && self
                .layers
                .iter()
                .zip(&other.layers)
                .all(|(a, b)| a.same_shape(b))
    }

    fn matches_grads(&self, grads: &Gradients) -> bool {
        self.layers.len() == grads.layers.len()
            && self
                .layers
                .iter()
                .zip(&grads.layers)
                .all(|(a, b)| a.same_shape(b))
    }

    /// All parameters in a fixed order: per layer, weights row-major then bias.
    pub fn params(&self) -> impl Iterator<Item = &f64> {
        self.layers.iter().flat_map(Layer::values)
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers.iter_mut().flat_map(Layer::values_mut)
    }

    pub fn flat_params(&self) -> Vec<f64> {
        self.params().copied().collect()
    }

    /// Overwrites the parameters from a flat vector in [`ModelParams::params`] order.
    pub fn set_flat_params(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.param_count() {
            return Err(Error::ShapeMismatch(format!(
                "expected {} parameters, got {}",
                self.param_count(),
                values.len()
            )));
        }
        for (p, v) in self.params_mut().zip(values) {
            *p = *v;
        }
        Ok(())
    }

    pub fn reset_velocity(&mut self) {
        self.velocity = zeros_like(&self.layers);
    }

    pub fn is_finite(&self) -> bool {
        self.params().all(|v| v.is_finite())
    }

    fn zero_grads(&self) -> Gradients {
        Gradients {
            layers: zeros_like(&self.layers),
        }
    }
}

fn zeros_like(layers: &[Layer]) -> Vec<Layer> {
    layers
        .iter()
        .map(|l| Layer::zeros(l.inputs(), l.outputs()))
        .collect()
}

/// Inputs with integer class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub inputs: DenseMatrix,
    pub labels: Vec<usize>,
}

impl Batch {
    pub fn new(inputs: DenseMatrix, labels: Vec<usize>) -> Result<Self> {
        if inputs.rows() != labels.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} input rows but {} labels",
                inputs.rows(),
                labels.len()
            )));
        }
        Ok(Self { inputs, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn select(&self, indices: &[usize]) -> Batch {
        Batch {
            inputs: self.inputs.select_rows(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        }
    }
}

/// Optional FedProx term `(mu/2)·‖w − anchor‖²` added to the local loss.
#[derive(Debug, Clone, Copy)]
pub struct Proximal<'a> {
    pub mu: f64,
    pub anchor: &'a ModelParams,
}

/// Output of [`forward`].
#[derive(Debug, Clone)]
pub struct ForwardOutput {
    pub logits: DenseMatrix,
    pub probs: DenseMatrix,
}

/// Numerically stable softmax of one logit vector.
pub fn softmax(logits: &[f64]) -> Result<ProbVector> {
    if logits.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "softmax needs at least 2 logits, got {}",
            logits.len()
        )));
    }
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("logits"));
    }
    let mut out = logits.to_vec();
    softmax_in_place(&mut out);
    Ok(ProbVector::from_raw(out))
}

fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

fn log_sum_exp(row: &[f64]) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

fn check_input(model: &ModelParams, batch: &Batch) -> Result<()> {
    if batch.inputs.cols() != model.input_dim() {
        return Err(Error::ShapeMismatch(format!(
            "model expects {} input features, batch has {}",
            model.input_dim(),
            batch.inputs.cols()
        )));
    }
    if let Some(&bad) = batch.labels.iter().find(|&&y| y >= model.class_count()) {
        return Err(Error::InvalidArgument(format!(
            "label {bad} out of range for {} classes",
            model.class_count()
        )));
    }
    Ok(())
}

fn affine(input: &DenseMatrix, layer: &Layer) -> DenseMatrix {
    let mut z = input.mul_transposed(&layer.weight);
    for i in 0..z.rows {
        for (v, b) in z.row_mut(i).iter_mut().zip(&layer.bias) {
            *v += b;
        }
    }
    z
}

/// Runs the layer stack. Returns the hidden activations (post-tanh), then logits.
fn propagate(model: &ModelParams, inputs: &DenseMatrix) -> (Vec<DenseMatrix>, DenseMatrix) {
    let (output, hidden_layers) = model.layers.split_last().expect("model has a layer");
    let mut hidden: Vec<DenseMatrix> = Vec::with_capacity(hidden_layers.len());
    for layer in hidden_layers {
        let mut z = affine(hidden.last().unwrap_or(inputs), layer);
        z.data.iter_mut().for_each(|v| *v = v.tanh());
        hidden.push(z);
    }
    let logits = affine(hidden.last().unwrap_or(inputs), output);
    (hidden, logits)
}

/// Logits and softmax probabilities for every row of the batch.
pub fn forward(model: &ModelParams, batch: &Batch) -> Result<ForwardOutput> {
    if batch.inputs.cols() != model.input_dim() {
        return Err(Error::ShapeMismatch(format!(
            "model expects {} input features, batch has {}",
            model.input_dim(),
            batch.inputs.cols()
        )));
    }
    let (_, logits) = propagate(model, &batch.inputs);
    let mut probs = logits.clone();
    for i in 0..probs.rows {
        softmax_in_place(probs.row_mut(i));
    }
    Ok(ForwardOutput { logits, probs })
}

fn proximal_penalty(model: &ModelParams, prox: &Proximal<'_>) -> Result<f64> {
    if !model.same_shape(prox.anchor) {
        return Err(Error::ShapeMismatch(
            "proximal anchor shape differs from model".into(),
        ));
    }
    let sq: f64 = model
        .params()
        .zip(prox.anchor.params())
        .map(|(w, a)| (w - a) * (w - a))
        .sum();
    Ok(0.5 * prox.mu * sq)
}

/// Mean cross-entropy (plus the proximal penalty, if any) without gradients.
pub fn loss(model: &ModelParams, batch: &Batch, proximal: Option<Proximal<'_>>) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::Empty("batch"));
    }
    check_input(model, batch)?;
    let (_, logits) = propagate(model, &batch.inputs);
    let ce: f64 = (0..logits.rows)
        .map(|i| {
            let row = logits.row(i);
            log_sum_exp(row) - row[batch.labels[i]]
        })
        .sum::<f64>()
        / batch.len() as f64;
    match proximal {
        Some(prox) => Ok(ce + proximal_penalty(model, &prox)?),
        None => Ok(ce),
    }
}

/// Loss and its exact gradient with respect to every parameter.
pub fn loss_and_grad(
    model: &ModelParams,
    batch: &Batch,
    proximal: Option<Proximal<'_>>,
) -> Result<(f64, Gradients)> {
    if batch.is_empty() {
        return Err(Error::Empty("batch"));
    }
    check_input(model, batch)?;
    let n = batch.len();
    let scale = 1.0 / n as f64;
    let (hidden, logits) = propagate(model, &batch.inputs);

    let mut ce = 0.0;
    let mut delta = logits;
    for i in 0..n {
        let row = delta.row_mut(i);
        let y = batch.labels[i];
        ce += log_sum_exp(row) - row[y];
        softmax_in_place(row);
        row[y] -= 1.0;
        row.iter_mut().for_each(|v| *v *= scale);
    }
    ce *= scale;

    let mut grads = model.zero_grads();
    for l in (0..model.layers.len()).rev() {
        let input = if l == 0 { &batch.inputs } else { &hidden[l - 1] };
        let g = &mut grads.layers[l];
        for i in 0..n {
            let d = delta.row(i);
            let x = input.row(i);
            for (o, &dv) in d.iter().enumerate() {
                g.bias[o] += dv;
                for (w, &xv) in g.weight.row_mut(o).iter_mut().zip(x) {
                    *w += dv * xv;
                }
            }
        }
        if l > 0 {
            // back through the weights, then through tanh
            let weight = &model.layers[l].weight;
            let mut next = DenseMatrix::zeros(n, weight.cols);
            for i in 0..n {
                let d = delta.row(i);
                let a = hidden[l - 1].row(i);
                let out = next.row_mut(i);
                for (o, &dv) in d.iter().enumerate() {
                    for (acc, &w) in out.iter_mut().zip(weight.row(o)) {
                        *acc += dv * w;
                    }
                }
                for (acc, &av) in out.iter_mut().zip(a) {
                    *acc *= 1.0 - av * av;
                }
            }
            delta = next;
        }
    }

    let mut total = ce;
    if let Some(prox) = proximal {
        total += proximal_penalty(model, &prox)?;
        for ((g, w), a) in grads.values_mut().zip(model.params()).zip(prox.anchor.params()) {
            *g += prox.mu * (w - a);
        }
    }
    Ok((total, grads))
}

/// Heavy-ball SGD: `v ← momentum·v + g`, `w ← w − lr·v`.
pub fn sgd_step(model: &mut ModelParams, grads: &Gradients, lr: f64, momentum: f64) -> Result<()> {
    if !model.matches_grads(grads) {
        return Err(Error::ShapeMismatch("gradient shape differs from model".into()));
    }
    if !(lr >= 0.0 && lr.is_finite()) {
        return Err(Error::InvalidArgument(format!("learning rate {lr} must be >= 0")));
    }
    if !(0.0..1.0).contains(&momentum) {
        return Err(Error::InvalidArgument(format!(
            "momentum {momentum} outside [0, 1)"
        )));
    }
    for ((layer, vel), grad) in model
        .layers
        .iter_mut()
        .zip(model.velocity.iter_mut())
        .zip(&grads.layers)
    {
        for ((w, v), g) in layer.values_mut().zip(vel.values_mut()).zip(grad.values()) {
            *v = momentum * *v + g;
            *w -= lr * *v;
        }
    }
    Ok(())
}

/// Central finite-difference gradient of [`loss`], step [`FINITE_DIFF_STEP`].
///
/// Test oracle for [`loss_and_grad`]; it shares only the loss definition.
pub fn finite_diff_grad(
    model: &ModelParams,
    batch: &Batch,
    proximal: Option<Proximal<'_>>,
) -> Result<Gradients> {
    let h = FINITE_DIFF_STEP;
    let base = model.flat_params();
    let mut probe = model.clone();
    let mut out = Vec::with_capacity(base.len());
    let mut shifted = base.clone();
    for i in 0..base.len() {
        shifted[i] = base[i] + h;
        probe.set_flat_params(&shifted)?;
        let up = loss(&probe, batch, proximal)?;
        shifted[i] = base[i] - h;
        probe.set_flat_params(&shifted)?;
        let down = loss(&probe, batch, proximal)?;
        shifted[i] = base[i];
        out.push((up - down) / (2.0 * h));
    }
    let mut grads = model.zero_grads();
    for (g, v) in grads.values_mut().zip(out) {
        *g = v;
    }
    Ok(grads)
}

/// Largest elementwise `|a − b| / max(|a|, |b|, floor)`.
///
/// The floor keeps entries that are both near zero from dominating.
pub fn max_relative_error(a: &Gradients, b: &Gradients, floor: f64) -> f64 {
    a.values()
        .zip(b.values())
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(floor))
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_batch(rng: &mut ChaCha8Rng, n: usize, d: usize, c: usize) -> Batch {
        let data = (0..n * d).map(|_| rng.random_range(-2.0..2.0)).collect();
        let labels = (0..n).map(|_| rng.random_range(0..c)).collect();
        Batch::new(DenseMatrix::new(n, d, data).unwrap(), labels).unwrap()
    }

    #[test]
    fn softmax_examples() {
        let p = softmax(&[0.0, 0.0]).unwrap();
        assert_eq!(p.as_slice(), &[0.5, 0.5]);
        let p = softmax(&[7.5, 7.5, 7.5]).unwrap();
        for v in p.as_slice() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        let p = softmax(&[1f64.ln(), 3f64.ln()]).unwrap();
        assert!((p[0] - 0.25).abs() < 1e-15);
        assert!((p[1] - 0.75).abs() < 1e-15);
    }

    #[test]
    fn softmax_rejects_bad_input() {
        assert!(softmax(&[1.0]).is_err());
        assert!(softmax(&[1.0, f64::INFINITY]).is_err());
        assert!(softmax(&[f64::NAN, 0.0]).is_err());
    }

    #[test]
    fn softmax_large_logits_stay_finite() {
        let p = softmax(&[1000.0, 0.0, -1000.0]).unwrap();
        assert!(p.as_slice().iter().all(|v| v.is_finite()));
        assert!((p.as_slice().iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_model_gives_uniform_rows() {
        let model = ModelParams::zeros(ModelShape::linear(3, 4));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let batch = random_batch(&mut rng, 5, 3, 4);
        let out = forward(&model, &batch).unwrap();
        assert_eq!(out.probs.rows(), 5);
        for v in out.probs.data() {
            assert!((v - 0.25).abs() < 1e-15);
        }
        let (l, _) = loss_and_grad(&model, &batch, None).unwrap();
        assert!((l - 4f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn scaled_identity_concentrates_on_matching_class() {
        let c = 3;
        let mut layer = Layer::zeros(c, c);
        for i in 0..c {
            layer.weight.set(i, i, 50.0);
        }
        let model = ModelParams::from_layers(vec![layer]).unwrap();
        let batch = Batch::new(DenseMatrix::from_rows(&[vec![0.0, 1.0, 0.0]]).unwrap(), vec![1]).unwrap();
        let out = forward(&model, &batch).unwrap();
        // softmax([0, 50, 0])[1] = 1 / (1 + 2e^-50)
        let expected = 1.0 / (1.0 + 2.0 * (-50f64).exp());
        assert!((out.probs.get(0, 1) - expected).abs() < 1e-15);
    }

    #[test]
    fn forward_rejects_wrong_width() {
        let model = ModelParams::zeros(ModelShape::linear(3, 2));
        let batch = Batch::new(DenseMatrix::zeros(2, 4), vec![0, 1]).unwrap();
        assert!(matches!(forward(&model, &batch), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn empty_batch_is_an_error() {
        let model = ModelParams::zeros(ModelShape::linear(3, 2));
        let batch = Batch::new(DenseMatrix::zeros(0, 3), vec![]).unwrap();
        assert!(matches!(
            loss_and_grad(&model, &batch, None),
            Err(Error::Empty(_))
        ));
    }

    #[test]
    fn zero_mu_matches_plain_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let shape = ModelShape {
            inputs: 4,
            hidden: Some(5),
            classes: 3,
        };
        let model = ModelParams::init_uniform(shape, &mut rng);
        let anchor = ModelParams::init_uniform(shape, &mut rng);
        let batch = random_batch(&mut rng, 7, 4, 3);
        let plain = loss_and_grad(&model, &batch, None).unwrap();
        let prox = loss_and_grad(
            &model,
            &batch,
            Some(Proximal {
                mu: 0.0,
                anchor: &anchor,
            }),
        )
        .unwrap();
        assert_eq!(plain.0, prox.0);
        assert_eq!(plain.1, prox.1);
    }

    #[test]
    fn gradients_match_finite_differences() {
        for seed in 0..3 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for hidden in [None, Some(4)] {
                let shape = ModelShape {
                    inputs: 3,
                    hidden,
                    classes: 4,
                };
                let model = ModelParams::init_uniform(shape, &mut rng);
                let anchor = ModelParams::init_uniform(shape, &mut rng);
                let batch = random_batch(&mut rng, 6, 3, 4);
                for prox in [
                    None,
                    Some(Proximal {
                        mu: 0.3,
                        anchor: &anchor,
                    }),
                ] {
                    let (_, g) = loss_and_grad(&model, &batch, prox).unwrap();
                    let fd = finite_diff_grad(&model, &batch, prox).unwrap();
                    let err = max_relative_error(&g, &fd, 1e-6);
                    assert!(err < 1e-4, "seed {seed} hidden {hidden:?}: {err}");
                }
            }
        }
    }

    #[test]
    fn saturated_model_has_near_zero_gradient() {
        let mut layer = Layer::zeros(2, 2);
        layer.weight.set(0, 0, 40.0);
        layer.weight.set(1, 1, 40.0);
        let model = ModelParams::from_layers(vec![layer]).unwrap();
        let batch = Batch::new(
            DenseMatrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap(),
            vec![0, 1],
        )
        .unwrap();
        let fd = finite_diff_grad(&model, &batch, None).unwrap();
        assert!(fd.values().all(|v| v.abs() < 1e-9));
    }

    #[test]
    fn proximal_vanishes_at_anchor() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let shape = ModelShape::linear(3, 3);
        let model = ModelParams::init_uniform(shape, &mut rng);
        let batch = random_batch(&mut rng, 5, 3, 3);
        let plain = finite_diff_grad(&model, &batch, None).unwrap();
        let prox = finite_diff_grad(
            &model,
            &batch,
            Some(Proximal {
                mu: 1e3,
                anchor: &model,
            }),
        )
        .unwrap();
        assert!(max_relative_error(&plain, &prox, 1e-6) < 1e-6);
    }

    #[test]
    fn sgd_without_momentum_is_plain_descent() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let shape = ModelShape::linear(2, 3);
        let mut model = ModelParams::init_uniform(shape, &mut rng);
        let before = model.flat_params();
        let mut grads = model.zero_grads();
        grads
            .values_mut()
            .enumerate()
            .for_each(|(i, g)| *g = i as f64 * 0.1);
        sgd_step(&mut model, &grads, 0.5, 0.0).unwrap();
        for ((b, a), g) in before.iter().zip(model.params()).zip(grads.values()) {
            assert_eq!(*a, b - 0.5 * g);
        }
    }

    #[test]
    fn zero_grads_leave_params_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut model = ModelParams::init_uniform(ModelShape::linear(2, 2), &mut rng);
        let before = model.clone();
        let grads = model.zero_grads();
        sgd_step(&mut model, &grads, 0.1, 0.5).unwrap();
        assert_eq!(model, before);
    }

    #[test]
    fn momentum_two_steps_unrolled() {
        let mut model = ModelParams::zeros(ModelShape::linear(1, 2));
        let mut grads = model.zero_grads();
        grads.values_mut().for_each(|g| *g = 2.0);
        sgd_step(&mut model, &grads, 0.1, 0.5).unwrap();
        sgd_step(&mut model, &grads, 0.1, 0.5).unwrap();
        // lr·(g + 1.5g) = 0.1 · 5
        for v in model.params() {
            assert!((v + 0.5).abs() < 1e-15);
        }
    }

    #[test]
    fn sgd_rejects_bad_arguments() {
        let mut model = ModelParams::zeros(ModelShape::linear(2, 2));
        let grads = model.zero_grads();
        assert!(sgd_step(&mut model, &grads, -0.1, 0.0).is_err());
        assert!(sgd_step(&mut model, &grads, 0.1, 1.0).is_err());
        let other = ModelParams::zeros(ModelShape::linear(3, 2)).zero_grads();
        assert!(matches!(
            sgd_step(&mut model, &other, 0.1, 0.0),
            Err(Error::ShapeMismatch(_))
        ));
    }

    #[test]
    fn flat_params_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let shape = ModelShape {
            inputs: 3,
            hidden: Some(2),
            classes: 2,
        };
        let model = ModelParams::init_uniform(shape, &mut rng);
        assert_eq!(model.param_count(), 3 * 2 + 2 + 2 * 2 + 2);
        let mut other = ModelParams::zeros(shape);
        other.set_flat_params(&model.flat_params()).unwrap();
        assert_eq!(other, model);
        assert_eq!(model.shape(), shape);
    }
}
