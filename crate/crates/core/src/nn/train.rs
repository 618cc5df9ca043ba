use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::fmt::sig;
use crate::linalg::{spectral_norm, stable_rank_with, DenseMatrix, PowerOptions};
use crate::normalize::{rank_from_ratio, sn_layer_step, srn_layer_step, LayerStep, SrnConfig};
use crate::rng::seeded;

use super::data::Dataset;
use super::model::{accuracy_with, MlpModel};

/// How each layer's weight is transformed before it enters the loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NormMode {
    Vanilla,
    /// `W / sigma_1` with a one-sweep power estimate.
    Spectral,
    /// Spectral normalization followed by stable rank normalization to
    /// `r = max(1, c * min(m, n))`.
    StableRank {
        c: f64,
    },
}

impl NormMode {
    pub fn stable_rank(c: f64) -> Result<Self> {
        SrnConfig::with_ratio(c, 1)?;
        Ok(NormMode::StableRank { c })
    }

    pub fn name(&self) -> &'static str {
        match self {
            NormMode::Vanilla => "vanilla",
            NormMode::Spectral => "sn",
            NormMode::StableRank { .. } => "srn",
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub mode: NormMode,
    pub lr: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Replace the training labels with uniform random ones first.
    pub label_randomization: bool,
    /// Stop once training accuracy reaches this value.
    pub stop_at_train_acc: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            mode: NormMode::Vanilla,
            lr: 0.05,
            weight_decay: 0.0,
            epochs: 100,
            batch_size: 32,
            seed: 0,
            label_randomization: false,
            stop_at_train_acc: None,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "learning rate must be positive, got {}",
                self.lr
            )));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::InvalidArgument(
                "weight decay must be nonnegative".into(),
            ));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch size must be positive".into()));
        }
        if let NormMode::StableRank { c } = self.mode {
            SrnConfig::with_ratio(c, 1)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LayerStats {
    pub srank: f64,
    pub sigma1: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_acc: f64,
    pub test_acc: Option<f64>,
    /// Statistics of the weights the network actually computes with.
    pub layers: Vec<LayerStats>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainTrace {
    pub records: Vec<EpochRecord>,
    /// Number of layer normalizations performed (0 in vanilla mode).
    pub normalization_calls: usize,
}

impl TrainTrace {
    pub fn last(&self) -> Option<&EpochRecord> {
        self.records.last()
    }

    /// `epoch,train_acc,test_acc,layer_idx,srank,sigma1`, one row per layer
    /// per epoch. A missing test accuracy is written as `nan`.
    pub fn to_csv_string(&self) -> String {
        let mut s = String::from("epoch,train_acc,test_acc,layer_idx,srank,sigma1\n");
        for rec in &self.records {
            for (i, l) in rec.layers.iter().enumerate() {
                let _ = writeln!(
                    s,
                    "{},{},{},{},{},{}",
                    rec.epoch,
                    sig(rec.train_acc, 12),
                    rec.test_acc
                        .map_or_else(|| "nan".to_string(), |a| sig(a, 12)),
                    i,
                    sig(l.srank, 12),
                    sig(l.sigma1, 12)
                );
            }
        }
        s
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv_string()).map_err(|e| Error::io(path, e))
    }
}

/// Normalized weight for one layer, leaving `u_state` untouched.
fn peek_step(w: &DenseMatrix, u_state: &[f64], mode: NormMode) -> Result<Option<LayerStep>> {
    let mut u = u_state.to_vec();
    step(w, &mut u, mode)
}

fn step(w: &DenseMatrix, u_state: &mut [f64], mode: NormMode) -> Result<Option<LayerStep>> {
    match mode {
        NormMode::Vanilla => Ok(None),
        NormMode::Spectral => sn_layer_step(w, u_state).map(Some),
        NormMode::StableRank { c } => {
            srn_layer_step(w, rank_from_ratio(c, w.rows(), w.cols()), u_state).map(Some)
        }
    }
}

impl MlpModel {
    /// The weights the network computes with under `mode`, using one power
    /// sweep from a copy of each layer's persistent vector.
    pub fn effective_weights(&self, mode: NormMode) -> Result<Vec<DenseMatrix>> {
        self.layers()
            .iter()
            .map(|l| {
                Ok(match peek_step(&l.weight, &l.u_state, mode)? {
                    Some(s) => s.weight,
                    None => l.weight.clone(),
                })
            })
            .collect()
    }

    /// Copy of the model with its weights replaced by [`Self::effective_weights`].
    pub fn effective_model(&self, mode: NormMode) -> Result<MlpModel> {
        self.with_weights(self.effective_weights(mode)?)
    }
}

/// Minibatch SGD on mean cross-entropy.
///
/// In the normalized modes every step first advances each layer's power
/// iteration by one sweep, forms the normalized weight, computes the loss
/// with it, and updates the raw weight through the normalization's
/// gradient. Weight decay acts on the raw weight; biases are never
/// normalized.
pub fn train(
    model: &mut MlpModel,
    train_set: &Dataset,
    test_set: Option<&Dataset>,
    cfg: &TrainConfig,
) -> Result<TrainTrace> {
    cfg.validate()?;
    if train_set.dim() != model.input_dim() {
        return Err(Error::mismatch(
            format!("inputs of dimension {}", model.input_dim()),
            train_set.dim(),
        ));
    }
    if train_set.n_classes() > model.output_dim() {
        return Err(Error::mismatch(
            format!("at most {} classes", model.output_dim()),
            train_set.n_classes(),
        ));
    }
    let relabelled;
    let data = if cfg.label_randomization {
        relabelled = train_set.randomize_labels(cfg.seed ^ 0x1abe_15);
        &relabelled
    } else {
        train_set
    };

    let mut rng = seeded(cfg.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut trace = TrainTrace::default();
    let stats_opts = PowerOptions::default().with_max_iter(20_000);

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            let mut steps = Vec::with_capacity(model.layers().len());
            for layer in model.layers_mut() {
                let s = step(&layer.weight, &mut layer.u_state, cfg.mode)?;
                if s.is_some() {
                    trace.normalization_calls += 1;
                }
                steps.push(s);
            }
            let weights: Vec<&DenseMatrix> = model
                .layers()
                .iter()
                .zip(&steps)
                .map(|(l, s)| s.as_ref().map_or(&l.weight, |s| &s.weight))
                .collect();
            let (_, grads) =
                model.batch_loss_and_gradients(&weights, data.inputs(), data.labels(), batch)?;

            for ((layer, s), (gw, gb)) in model
                .layers_mut()
                .iter_mut()
                .zip(&steps)
                .zip(grads.weights.iter().zip(&grads.biases))
            {
                let mut grad = match s {
                    Some(s) => s.backprop(&layer.weight, gw),
                    None => gw.clone(),
                };
                if cfg.weight_decay > 0.0 {
                    grad = grad.lin_comb(1.0, &layer.weight, cfg.weight_decay);
                }
                layer.weight = layer.weight.lin_comb(1.0, &grad, -cfg.lr);
                layer
                    .bias
                    .iter_mut()
                    .zip(gb)
                    .for_each(|(b, g)| *b -= cfg.lr * g);
            }
        }

        let eff = model.effective_weights(cfg.mode)?;
        let eff_refs: Vec<&DenseMatrix> = eff.iter().collect();
        let train_acc = accuracy_with(model, &eff_refs, data.inputs(), data.labels())?;
        let test_acc = test_set
            .map(|t| accuracy_with(model, &eff_refs, t.inputs(), t.labels()))
            .transpose()?;
        let layers = eff
            .iter()
            .map(|w| {
                Ok(LayerStats {
                    srank: stable_rank_with(w, &stats_opts)?,
                    sigma1: spectral_norm(w, &stats_opts)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        trace.records.push(EpochRecord {
            epoch,
            train_acc,
            test_acc,
            layers,
        });
        if cfg.stop_at_train_acc.is_some_and(|t| train_acc >= t) {
            break;
        }
    }
    Ok(trace)
}
