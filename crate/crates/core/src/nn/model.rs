use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::linalg::{random_unit_vector, DenseMatrix};
use crate::measures::{Differentiable, VectorFn};
use crate::rng::seeded;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Identity => "identity",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "relu" => Some(Activation::Relu),
            "identity" => Some(Activation::Identity),
            _ => None,
        }
    }

    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Identity => z,
        }
    }

    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Relu if z > 0.0 => 1.0,
            Activation::Relu => 0.0,
            Activation::Identity => 1.0,
        }
    }
}

/// Affine map `z = W a + b` followed by an activation. `u_state` is the
/// persistent left vector for training-time power iteration.
#[derive(Debug, Clone)]
pub struct Layer {
    pub weight: DenseMatrix,
    pub bias: Vec<f64>,
    pub activation: Activation,
    pub u_state: Vec<f64>,
}

impl Layer {
    pub fn new(weight: DenseMatrix, bias: Vec<f64>, activation: Activation) -> Result<Self> {
        if bias.len() != weight.rows() {
            return Err(Error::mismatch(
                format!("bias of length {}", weight.rows()),
                bias.len(),
            ));
        }
        let u_state = random_unit_vector(weight.rows(), weight.rows() as u64 ^ 0x5eed);
        Ok(Self {
            weight,
            bias,
            activation,
            u_state,
        })
    }
}

/// Per-example forward state.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// `inputs[i]` is the input to layer `i`; `inputs[0]` is `x`.
    pub inputs: Vec<Vec<f64>>,
    /// Pre-activations of every layer.
    pub pre_activations: Vec<Vec<f64>>,
    pub logits: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct Gradients {
    pub weights: Vec<DenseMatrix>,
    pub biases: Vec<Vec<f64>>,
}

impl Gradients {
    fn zeros_like(weights: &[&DenseMatrix]) -> Self {
        Self {
            weights: weights
                .iter()
                .map(|w| DenseMatrix::zeros(w.rows(), w.cols()))
                .collect(),
            biases: weights.iter().map(|w| vec![0.0; w.rows()]).collect(),
        }
    }

    fn scale(&mut self, alpha: f64) {
        for w in &mut self.weights {
            w.data_mut().iter_mut().for_each(|x| *x *= alpha);
        }
        for b in &mut self.biases {
            b.iter_mut().for_each(|x| *x *= alpha);
        }
    }
}

/// Dense feed-forward network. Hidden layers may use ReLU; the last layer
/// is always linear and produces logits.
#[derive(Debug, Clone)]
pub struct MlpModel {
    layers: Vec<Layer>,
}

impl MlpModel {
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        let Some(last) = layers.last() else {
            return Err(Error::InvalidArgument(
                "a model needs at least one layer".into(),
            ));
        };
        if last.activation != Activation::Identity {
            return Err(Error::InvalidArgument(
                "the final layer must be linear".into(),
            ));
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[1].weight.cols() != pair[0].weight.rows() {
                return Err(Error::mismatch(
                    format!("layer {} input of {}", i + 1, pair[0].weight.rows()),
                    pair[1].weight.cols(),
                ));
            }
        }
        Ok(Self { layers })
    }

    /// He-normal weights, zero biases, ReLU on all hidden layers.
    /// `dims = [input, hidden..., output]`.
    pub fn random(dims: &[usize], seed: u64) -> Result<Self> {
        let mut rng = seeded(seed);
        Self::build(dims, seed, |fan_out, fan_in| {
            let std = (2.0 / fan_in as f64).sqrt();
            let data = (0..fan_in * fan_out)
                .map(|_| std * rng.sample::<f64, _>(StandardNormal))
                .collect();
            DenseMatrix::new(fan_out, fan_in, data)
        })
    }

    /// Like [`Self::random`] but every weight is `sqrt(2)` times a matrix
    /// with orthonormal rows or columns, so all its singular values are
    /// equal and its stable rank is `min(m, n)`.
    pub fn random_orthogonal(dims: &[usize], seed: u64) -> Result<Self> {
        let mut i = 0u64;
        Self::build(dims, seed, |fan_out, fan_in| {
            i += 1;
            let s = seed.wrapping_mul(0x2545_F491_4F6C_DD1D).wrapping_add(i);
            let q = if fan_out >= fan_in {
                DenseMatrix::random_orthonormal(fan_out, fan_in, s)?
            } else {
                DenseMatrix::random_orthonormal(fan_in, fan_out, s)?.transpose()
            };
            Ok(q.scale(2f64.sqrt()))
        })
    }

    fn build(
        dims: &[usize],
        seed: u64,
        mut weight: impl FnMut(usize, usize) -> Result<DenseMatrix>,
    ) -> Result<Self> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(Error::InvalidArgument(format!(
                "invalid layer sizes {dims:?}"
            )));
        }
        let n = dims.len() - 1;
        let layers = (0..n)
            .map(|i| {
                let (fan_in, fan_out) = (dims[i], dims[i + 1]);
                let weight = weight(fan_out, fan_in)?;
                let act = if i + 1 == n {
                    Activation::Identity
                } else {
                    Activation::Relu
                };
                let mut layer = Layer::new(weight, vec![0.0; fan_out], act)?;
                layer.u_state = random_unit_vector(fan_out, seed.wrapping_add(1 + i as u64));
                Ok(layer)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(layers)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weight.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.weight.rows())
    }

    pub fn weights(&self) -> Vec<&DenseMatrix> {
        self.layers.iter().map(|l| &l.weight).collect()
    }

    /// Same architecture and biases with the weights replaced.
    pub fn with_weights(&self, weights: Vec<DenseMatrix>) -> Result<Self> {
        if weights.len() != self.layers.len() {
            return Err(Error::mismatch(
                format!("{} weights", self.layers.len()),
                weights.len(),
            ));
        }
        let layers = self
            .layers
            .iter()
            .zip(weights)
            .map(|(l, w)| {
                if w.shape() != l.weight.shape() {
                    return Err(Error::mismatch(
                        format!("{:?}", l.weight.shape()),
                        format!("{:?}", w.shape()),
                    ));
                }
                Ok(Layer {
                    weight: w,
                    bias: l.bias.clone(),
                    activation: l.activation,
                    u_state: l.u_state.clone(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(layers)
    }

    pub fn forward(&self, x: &[f64]) -> Result<ForwardCache> {
        self.forward_with(&self.weights(), x)
    }

    pub fn predict(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward(x)?.logits)
    }

    pub(crate) fn forward_with(&self, weights: &[&DenseMatrix], x: &[f64]) -> Result<ForwardCache> {
        if x.len() != self.input_dim() {
            return Err(Error::mismatch(
                format!("input of length {}", self.input_dim()),
                x.len(),
            ));
        }
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut a = x.to_vec();
        for (layer, w) in self.layers.iter().zip(weights) {
            let mut z = w.matvec(&a);
            z.iter_mut().zip(&layer.bias).for_each(|(z, b)| *z += b);
            let next = z.iter().map(|&v| layer.activation.apply(v)).collect();
            inputs.push(std::mem::replace(&mut a, next));
            pre.push(z);
        }
        Ok(ForwardCache {
            inputs,
            pre_activations: pre,
            logits: a,
        })
    }

    /// Cross-entropy gradients for one example, given its forward cache.
    pub fn backward(&self, cache: &ForwardCache, label: usize) -> Result<Gradients> {
        self.backward_with(&self.weights(), cache, label)
    }

    pub(crate) fn backward_with(
        &self,
        weights: &[&DenseMatrix],
        cache: &ForwardCache,
        label: usize,
    ) -> Result<Gradients> {
        if label >= self.output_dim() {
            return Err(Error::mismatch(
                format!("label < {}", self.output_dim()),
                label,
            ));
        }
        let mut delta = softmax(&cache.logits);
        delta[label] -= 1.0;
        let mut grads = Gradients::zeros_like(weights);
        self.backprop_delta(weights, cache, delta, |i, delta, input| {
            grads.weights[i].rank_one_update(1.0, delta, input);
            grads.biases[i].copy_from_slice(delta);
        });
        Ok(grads)
    }

    /// Walks `delta = dL/dz_last` back through the layers, calling
    /// `visit(i, dL/dz_i, input_i)` from the last layer down, and returns
    /// `dL/dx`.
    fn backprop_delta(
        &self,
        weights: &[&DenseMatrix],
        cache: &ForwardCache,
        mut delta: Vec<f64>,
        mut visit: impl FnMut(usize, &[f64], &[f64]),
    ) -> Vec<f64> {
        for i in (0..self.layers.len()).rev() {
            visit(i, &delta, &cache.inputs[i]);
            let mut g = weights[i].matvec_t(&delta);
            if i > 0 {
                let prev = &self.layers[i - 1];
                g.iter_mut()
                    .zip(&cache.pre_activations[i - 1])
                    .for_each(|(g, &z)| *g *= prev.activation.derivative(z));
            }
            delta = g;
        }
        delta
    }

    /// Mean cross-entropy and its gradients over `indices` of a batch.
    pub(crate) fn batch_loss_and_gradients(
        &self,
        weights: &[&DenseMatrix],
        inputs: &DenseMatrix,
        labels: &[usize],
        indices: &[usize],
    ) -> Result<(f64, Gradients)> {
        let mut total = Gradients::zeros_like(weights);
        let mut loss = 0.0;
        for &n in indices {
            let cache = self.forward_with(weights, inputs.row(n))?;
            let y = labels[n];
            loss += cross_entropy(&cache.logits, y);
            let mut delta = softmax(&cache.logits);
            delta[y] -= 1.0;
            self.backprop_delta(weights, &cache, delta, |i, delta, input| {
                total.weights[i].rank_one_update(1.0, delta, input);
                total.biases[i]
                    .iter_mut()
                    .zip(delta)
                    .for_each(|(b, d)| *b += d);
            });
        }
        let scale = 1.0 / indices.len() as f64;
        total.scale(scale);
        Ok((loss * scale, total))
    }

    /// Mean cross-entropy of the model on the given rows.
    pub fn loss(&self, inputs: &DenseMatrix, labels: &[usize]) -> Result<f64> {
        let idx: Vec<usize> = (0..labels.len()).collect();
        Ok(self
            .batch_loss_and_gradients(&self.weights(), inputs, labels, &idx)?
            .0)
    }

    /// Mean cross-entropy gradients over all rows.
    pub fn gradients(&self, inputs: &DenseMatrix, labels: &[usize]) -> Result<Gradients> {
        let idx: Vec<usize> = (0..labels.len()).collect();
        Ok(self
            .batch_loss_and_gradients(&self.weights(), inputs, labels, &idx)?
            .1)
    }

    /// Jacobian of the logits with respect to the input.
    pub fn input_jacobian(&self, x: &[f64]) -> Result<DenseMatrix> {
        let cache = self.forward(x)?;
        let mut acc: Option<DenseMatrix> = None;
        for (i, layer) in self.layers.iter().enumerate() {
            let mut m = match acc {
                None => layer.weight.clone(),
                Some(prev) => layer.weight.matmul(&prev)?,
            };
            for (r, &z) in cache.pre_activations[i].iter().enumerate() {
                let d = layer.activation.derivative(z);
                if d != 1.0 {
                    for c in 0..m.cols() {
                        m.set(r, c, m.get(r, c) * d);
                    }
                }
            }
            acc = Some(m);
        }
        Ok(acc.expect("at least one layer"))
    }

    /// Classification margin at `x` together with, for each layer input
    /// `h_i` (the data point and every hidden activation), the gradient of
    /// the margin with respect to `h_i`.
    pub fn margin_gradients(&self, x: &[f64], label: usize) -> Result<MarginGradients> {
        let cache = self.forward(x)?;
        let margin = crate::measures::margin(&cache.logits, label)?;
        let rival = runner_up(&cache.logits, label);
        let mut delta = vec![0.0; cache.logits.len()];
        delta[label] = 1.0;
        delta[rival] = -1.0;

        let weights = self.weights();
        let mut grads = vec![Vec::new(); self.layers.len()];
        for i in (0..self.layers.len()).rev() {
            let g = weights[i].matvec_t(&delta);
            if i > 0 {
                let prev = &self.layers[i - 1];
                delta = g
                    .iter()
                    .zip(&cache.pre_activations[i - 1])
                    .map(|(g, &z)| g * prev.activation.derivative(z))
                    .collect();
            }
            grads[i] = g;
        }
        Ok(MarginGradients {
            margin,
            activations: cache.inputs,
            gradients: grads,
        })
    }

    pub fn accuracy(&self, inputs: &DenseMatrix, labels: &[usize]) -> Result<f64> {
        accuracy_with(self, &self.weights(), inputs, labels)
    }
}

pub(crate) fn accuracy_with(
    model: &MlpModel,
    weights: &[&DenseMatrix],
    inputs: &DenseMatrix,
    labels: &[usize],
) -> Result<f64> {
    let mut correct = 0usize;
    for (n, &y) in labels.iter().enumerate() {
        let logits = model.forward_with(weights, inputs.row(n))?.logits;
        if argmax(&logits) == y {
            correct += 1;
        }
    }
    Ok(correct as f64 / labels.len().max(1) as f64)
}

#[derive(Debug, Clone)]
pub struct MarginGradients {
    pub margin: f64,
    /// `h_i`: the input to layer `i`.
    pub activations: Vec<Vec<f64>>,
    /// `d margin / d h_i`.
    pub gradients: Vec<Vec<f64>>,
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|z| (z - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|x| x / s).collect()
}

pub fn cross_entropy(logits: &[f64], label: usize) -> f64 {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logits.iter().map(|z| (z - m).exp()).sum::<f64>().ln();
    lse - logits[label]
}

pub fn argmax(x: &[f64]) -> usize {
    x.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &v)| {
            if v > best.1 {
                (i, v)
            } else {
                best
            }
        })
        .0
}

/// Index of the largest logit other than `label`.
fn runner_up(logits: &[f64], label: usize) -> usize {
    logits
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != label)
        .fold((usize::MAX, f64::NEG_INFINITY), |best, (i, &v)| {
            if v > best.1 {
                (i, v)
            } else {
                best
            }
        })
        .0
}

impl VectorFn for MlpModel {
    fn eval(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.predict(x)
    }
}

impl Differentiable for MlpModel {
    fn jacobian(&self, x: &[f64]) -> Result<DenseMatrix> {
        self.input_jacobian(x)
    }
}
