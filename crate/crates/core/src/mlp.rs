//! Rectified multilayer perceptron over crop labels.
//!
//! Inputs are z-scored with training statistics. Hidden layers are dense +
//! ReLU, each followed by inverted dropout during training; the output is a
//! linear layer of width 5 under softmax cross-entropy. Training is plain
//! mini-batch SGD with momentum, single-threaded and fully determined by the
//! seed.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{CropLabel, Dataset};
use crate::error::{Error, Result};
use crate::gaussian::log_sum_exp;
use crate::linalg::Matrix;
use crate::scalar::Scalar;

pub const DEFAULT_SEED: u64 = 2024;
const STD_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MlpConfig {
    pub hidden_layers: Vec<usize>,
    pub dropout_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub seed: u64,
}

impl Default for MlpConfig {
    fn default() -> Self {
        Self::one_hidden()
    }
}

impl MlpConfig {
    pub fn one_hidden() -> Self {
        Self {
            hidden_layers: vec![256],
            dropout_rate: 0.05,
            epochs: 100,
            batch_size: 32,
            learning_rate: 0.01,
            momentum: 0.9,
            seed: DEFAULT_SEED,
        }
    }

    pub fn two_hidden() -> Self {
        Self {
            hidden_layers: vec![256, 256],
            ..Self::one_hidden()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(format!("MLP config: {m}")));
        if !(1..=2).contains(&self.hidden_layers.len()) {
            return bad("one or two hidden layers");
        }
        if self.hidden_layers.contains(&0) {
            return bad("hidden widths must be at least 1");
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return bad("dropout_rate must be in [0, 1)");
        }
        if self.epochs == 0 {
            return bad("epochs must be at least 1");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must be in [0, 1)");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct DenseLayer<T> {
    /// out × in.
    pub weights: Matrix<T>,
    pub bias: Vec<T>,
}

impl<T: Scalar> DenseLayer<T> {
    fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            weights: Matrix::zeros(outputs, inputs),
            bias: vec![T::zero(); outputs],
        }
    }

    /// Weights and biases uniform in ±1/√fan_in.
    fn random(inputs: usize, outputs: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = 1.0 / (inputs as f64).sqrt();
        let weights = Matrix::from_fn(outputs, inputs, |_, _| T::lit(rng.gen_range(-bound..=bound)));
        let bias = (0..outputs).map(|_| T::lit(rng.gen_range(-bound..=bound))).collect();
        Self { weights, bias }
    }

    fn forward(&self, x: &[T]) -> Vec<T> {
        (0..self.weights.rows())
            .map(|o| crate::linalg::dot(self.weights.row(o), x) + self.bias[o])
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct MlpModel<T> {
    layers: Vec<DenseLayer<T>>,
    input_mean: Vec<T>,
    input_std: Vec<T>,
    /// Crops seen in training; the others are never predicted.
    present: [bool; CropLabel::COUNT],
}

/// Parameter gradients, shaped like the layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    pub layers: Vec<DenseLayer<T>>,
}

impl<T: Scalar> Gradients<T> {
    fn zeros_like(layers: &[DenseLayer<T>]) -> Self {
        Self {
            layers: layers
                .iter()
                .map(|l| DenseLayer::zeros(l.weights.cols(), l.weights.rows()))
                .collect(),
        }
    }

    pub fn max_abs(&self) -> T {
        self.layers
            .iter()
            .flat_map(|l| l.weights.as_slice().iter().chain(&l.bias))
            .fold(T::zero(), |m, v| m.max(v.abs()))
    }
}

struct Dropout<'a, T> {
    rng: &'a mut ChaCha8Rng,
    rate: f64,
    keep_scale: T,
}

fn standardization<T: Scalar>(inputs: &[&[T]]) -> (Vec<T>, Vec<T>) {
    let b = inputs[0].len();
    let n = T::from_count(inputs.len());
    let mut mean = vec![T::zero(); b];
    for x in inputs {
        for (m, &v) in mean.iter_mut().zip(*x) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![T::zero(); b];
    for x in inputs {
        for ((s, &v), &m) in var.iter_mut().zip(*x).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    let floor = T::lit(STD_FLOOR);
    let std = var.into_iter().map(|s| (s / n).sqrt().max(floor)).collect();
    (mean, std)
}

impl<T: Scalar> MlpModel<T> {
    /// A network with every weight and bias zero and identity standardization.
    pub fn zeros(band_count: usize, hidden_layers: &[usize]) -> Self {
        let mut widths = vec![band_count];
        widths.extend_from_slice(hidden_layers);
        widths.push(CropLabel::COUNT);
        Self {
            layers: widths.windows(2).map(|w| DenseLayer::zeros(w[0], w[1])).collect(),
            input_mean: vec![T::zero(); band_count],
            input_std: vec![T::one(); band_count],
            present: [true; CropLabel::COUNT],
        }
    }

    fn random(
        band_count: usize,
        hidden_layers: &[usize],
        rng: &mut ChaCha8Rng,
        input_mean: Vec<T>,
        input_std: Vec<T>,
    ) -> Self {
        let mut widths = vec![band_count];
        widths.extend_from_slice(hidden_layers);
        widths.push(CropLabel::COUNT);
        Self {
            layers: widths.windows(2).map(|w| DenseLayer::random(w[0], w[1], rng)).collect(),
            input_mean,
            input_std,
            present: [true; CropLabel::COUNT],
        }
    }

    pub fn layers(&self) -> &[DenseLayer<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [DenseLayer<T>] {
        &mut self.layers
    }

    pub fn band_count(&self) -> usize {
        self.input_mean.len()
    }

    pub fn validate(&self) -> Result<()> {
        let b = self.band_count();
        if self.input_std.len() != b || self.input_std.iter().any(|s| !(*s > T::zero())) {
            return Err(Error::Data("standardization statistics invalid".into()));
        }
        let mut width = b;
        for l in &self.layers {
            if l.weights.cols() != width || l.bias.len() != l.weights.rows() {
                return Err(Error::Data("layer shapes do not chain".into()));
            }
            width = l.weights.rows();
        }
        if width != CropLabel::COUNT || self.layers.len() < 2 {
            return Err(Error::Data("network must end in a 5-way output layer".into()));
        }
        if !self.present.iter().any(|&p| p) {
            return Err(Error::Data("model has no trained crops".into()));
        }
        Ok(())
    }

    pub fn standardize(&self, x: &[T]) -> Result<Vec<T>> {
        if x.len() != self.band_count() {
            return Err(Error::Dimension {
                expected: self.band_count(),
                got: x.len(),
            });
        }
        Ok(x.iter()
            .zip(&self.input_mean)
            .zip(&self.input_std)
            .map(|((&v, &m), &s)| (v - m) / s)
            .collect())
    }

    /// Output logits for an already standardized input, dropout off.
    fn logits(&self, z: &[T]) -> Vec<T> {
        let mut a = z.to_vec();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            a = layer.forward(&a);
            if i < last {
                a.iter_mut().for_each(|v| *v = v.max(T::zero()));
            }
        }
        a
    }

    /// Mean cross-entropy and its gradient over a standardized batch.
    fn loss_and_gradients(
        &self,
        batch: &[&[T]],
        labels: &[usize],
        mut dropout: Option<Dropout<'_, T>>,
    ) -> (T, Gradients<T>) {
        let mut grads = Gradients::zeros_like(&self.layers);
        let mut total = T::zero();
        let last = self.layers.len() - 1;
        for (x, &y) in batch.iter().zip(labels) {
            // activations[l] is the input to layer l
            let mut activations: Vec<Vec<T>> = vec![x.to_vec()];
            let mut pre: Vec<Vec<T>> = Vec::with_capacity(last);
            let mut masks: Vec<Vec<T>> = Vec::with_capacity(last);
            for layer in &self.layers[..last] {
                let z = layer.forward(activations.last().unwrap());
                let mask: Vec<T> = match dropout.as_mut() {
                    Some(d) => (0..z.len())
                        .map(|_| {
                            if d.rng.gen::<f64>() < d.rate {
                                T::zero()
                            } else {
                                d.keep_scale
                            }
                        })
                        .collect(),
                    None => vec![T::one(); z.len()],
                };
                let a = z
                    .iter()
                    .zip(&mask)
                    .map(|(&v, &m)| v.max(T::zero()) * m)
                    .collect();
                pre.push(z);
                masks.push(mask);
                activations.push(a);
            }
            let logits = self.layers[last].forward(activations.last().unwrap());
            let lse = log_sum_exp(&logits).expect("nonempty logits");
            total += lse - logits[y];
            let mut delta: Vec<T> = logits.iter().map(|&l| (l - lse).exp()).collect();
            delta[y] -= T::one();

            for l in (0..=last).rev() {
                let input = &activations[l];
                let g = &mut grads.layers[l];
                for (o, &d) in delta.iter().enumerate() {
                    if d == T::zero() {
                        continue;
                    }
                    g.bias[o] += d;
                    for (w, &a) in g.weights.row_mut(o).iter_mut().zip(input) {
                        *w += d * a;
                    }
                }
                if l == 0 {
                    break;
                }
                let w = &self.layers[l].weights;
                let mut back = vec![T::zero(); w.cols()];
                for (o, &d) in delta.iter().enumerate() {
                    if d == T::zero() {
                        continue;
                    }
                    for (b, &wv) in back.iter_mut().zip(w.row(o)) {
                        *b += d * wv;
                    }
                }
                // through dropout and the rectifier of hidden layer l-1; subgradient 0 at 0
                for ((b, &z), &m) in back.iter_mut().zip(&pre[l - 1]).zip(&masks[l - 1]) {
                    *b = if z > T::zero() { *b * m } else { T::zero() };
                }
                delta = back;
            }
        }
        let n = T::from_count(batch.len());
        for g in &mut grads.layers {
            g.weights.as_mut_slice().iter_mut().for_each(|v| *v /= n);
            g.bias.iter_mut().for_each(|v| *v /= n);
        }
        (total / n, grads)
    }

    /// Softmax probabilities over crops (absent crops get 0) and the argmax crop.
    pub fn predict(&self, x: &[T]) -> Result<(CropLabel, [T; CropLabel::COUNT])> {
        let z = self.standardize(x)?;
        let mut logits = self.logits(&z);
        for (l, &p) in logits.iter_mut().zip(&self.present) {
            if !p {
                *l = T::neg_infinity();
            }
        }
        let lse = log_sum_exp(&logits)?;
        let mut probs = [T::zero(); CropLabel::COUNT];
        let mut best = 0;
        for (i, &l) in logits.iter().enumerate() {
            probs[i] = (l - lse).exp();
            if logits[i] > logits[best] {
                best = i;
            }
        }
        Ok((CropLabel::from_index(best).expect("crop index"), probs))
    }

    /// Analytic gradients of the mean cross-entropy on a raw (unstandardized) batch, dropout off.
    pub fn gradients(&self, inputs: &[Vec<T>], labels: &[CropLabel]) -> Result<(T, Gradients<T>)> {
        let std: Vec<Vec<T>> = inputs.iter().map(|x| self.standardize(x)).collect::<Result<_>>()?;
        let refs: Vec<&[T]> = std.iter().map(Vec::as_slice).collect();
        let y: Vec<usize> = labels.iter().map(|c| c.index()).collect();
        Ok(self.loss_and_gradients(&refs, &y, None))
    }

    /// Flat parameter `p` of layer `l`: weights row-major, then biases.
    fn param_mut(&mut self, l: usize, p: usize) -> &mut T {
        let layer = &mut self.layers[l];
        let n_weights = layer.weights.as_slice().len();
        if p < n_weights {
            &mut layer.weights.as_mut_slice()[p]
        } else {
            &mut layer.bias[p - n_weights]
        }
    }

    pub fn loss(&self, inputs: &[Vec<T>], labels: &[CropLabel]) -> Result<T> {
        Ok(self.gradients(inputs, labels)?.0)
    }
}

/// Trains and also returns the mean training loss of each epoch.
pub fn train_with_history<T: Scalar>(ds: &Dataset<T>, cfg: &MlpConfig) -> Result<(MlpModel<T>, Vec<T>)> {
    cfg.validate()?;
    let raw: Vec<&[T]> = ds.records().iter().map(|r| &*r.spectrum).collect();
    let (mean, std) = standardization(&raw);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = MlpModel::random(ds.band_count(), &cfg.hidden_layers, &mut rng, mean, std);
    let mut present = [false; CropLabel::COUNT];
    for r in ds.records() {
        present[r.crop.index()] = true;
    }
    model.present = present;

    let inputs: Vec<Vec<T>> = raw.iter().map(|x| model.standardize(x)).collect::<Result<_>>()?;
    let labels: Vec<usize> = ds.records().iter().map(|r| r.crop.index()).collect();
    let mut velocity = Gradients::zeros_like(&model.layers);
    let lr = T::lit(cfg.learning_rate);
    let mu = T::lit(cfg.momentum);
    let keep_scale = T::lit(1.0 / (1.0 - cfg.dropout_rate));
    let mut order: Vec<usize> = (0..inputs.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = T::zero();
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&[T]> = chunk.iter().map(|&i| inputs[i].as_slice()).collect();
            let y: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
            let dropout = (cfg.dropout_rate > 0.0).then(|| Dropout {
                rng: &mut rng,
                rate: cfg.dropout_rate,
                keep_scale,
            });
            let (loss, grads) = model.loss_and_gradients(&batch, &y, dropout);
            epoch_loss += loss * T::from_count(chunk.len());
            for ((layer, v), g) in model.layers.iter_mut().zip(&mut velocity.layers).zip(&grads.layers) {
                let params = layer.weights.as_mut_slice().iter_mut().chain(layer.bias.iter_mut());
                let vel = v.weights.as_mut_slice().iter_mut().chain(v.bias.iter_mut());
                let grad = g.weights.as_slice().iter().chain(&g.bias);
                for ((p, v), &g) in params.zip(vel).zip(grad) {
                    *v = mu * *v - lr * g;
                    *p += *v;
                }
            }
        }
        let epoch_loss = epoch_loss / T::from_count(inputs.len());
        if !epoch_loss.is_finite() {
            return Err(Error::Numerical("MLP training diverged (non-finite loss)".into()));
        }
        history.push(epoch_loss);
    }
    Ok((model, history))
}

pub fn train<T: Scalar>(ds: &Dataset<T>, cfg: &MlpConfig) -> Result<MlpModel<T>> {
    train_with_history(ds, cfg).map(|(m, _)| m)
}

pub fn predict<T: Scalar>(m: &MlpModel<T>, x: &[T]) -> Result<(CropLabel, [T; CropLabel::COUNT])> {
    m.predict(x)
}

/// Worst per-parameter discrepancy `|a − n| / max(|a|, |n|, 1e-3)` between
/// analytic gradients and central finite differences (step 1e-5).
pub fn gradient_discrepancy<T: Scalar>(model: &MlpModel<T>, inputs: &[Vec<T>], labels: &[CropLabel]) -> Result<T> {
    let (_, analytic) = model.gradients(inputs, labels)?;
    let h = T::lit(1e-5);
    let two_h = h + h;
    let floor = T::lit(1e-3);
    let mut probe = model.clone();
    let mut worst = T::zero();
    for l in 0..model.layers.len() {
        let n_weights = model.layers[l].weights.as_slice().len();
        let n_bias = model.layers[l].bias.len();
        for p in 0..(n_weights + n_bias) {
            let orig = *probe.param_mut(l, p);
            *probe.param_mut(l, p) = orig + h;
            let up = probe.loss(inputs, labels)?;
            *probe.param_mut(l, p) = orig - h;
            let down = probe.loss(inputs, labels)?;
            *probe.param_mut(l, p) = orig;
            let numeric = (up - down) / two_h;
            let g = &analytic.layers[l];
            let a = if p < n_weights {
                g.weights.as_slice()[p]
            } else {
                g.bias[p - n_weights]
            };
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(floor);
            worst = worst.max(rel);
        }
    }
    Ok(worst)
}

/// Builds a seeded network from `cfg` standardized on `inputs` and checks
/// its backpropagation against finite differences. Dropout is ignored.
pub fn gradient_check<T: Scalar>(cfg: &MlpConfig, inputs: &[Vec<T>], labels: &[CropLabel]) -> Result<T> {
    if inputs.is_empty() || inputs.len() != labels.len() {
        return Err(Error::InvalidArgument("gradient check needs a nonempty labeled batch".into()));
    }
    let refs: Vec<&[T]> = inputs.iter().map(Vec::as_slice).collect();
    let (mean, std) = standardization(&refs);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let model = MlpModel::random(inputs[0].len(), &cfg.hidden_layers, &mut rng, mean, std);
    gradient_discrepancy(&model, inputs, labels)
}
