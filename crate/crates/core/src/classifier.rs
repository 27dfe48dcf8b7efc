//! One classifier per transformation: training with early stopping and
//! prediction in the transformed domain.

use log::info;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::LabelledSet;
use crate::layers::{cross_entropy, softmax};
use crate::network::{loss_input_gradient, ClassifierWeights, Differentiable, ForwardTape};
use crate::network::Architecture;
use crate::optim::{adam_step, AdamConfig, AdamState};
use crate::rng::{derive_seed, seeded};
use crate::tensor::{argmax, Tensor, TensorError};
use crate::transforms::{apply, TransformError, TransformSpec};

#[derive(Debug, Error)]
pub enum ClassifierError {
    #[error("{0} set is empty")]
    EmptySet(&'static str),
    #[error("training diverged: non-finite loss at epoch {epoch}, batch {batch}")]
    Diverged { epoch: usize, batch: usize },
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Transform(#[from] TransformError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub architecture: Architecture,
    pub adam: AdamConfig,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            architecture: Architecture::default(),
            adam: AdamConfig::default(),
            batch_size: 64,
            max_epochs: 30,
            patience: 5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub history: Vec<EpochStats>,
}

/// A classifier bound to the transformation it was trained on.
#[derive(Debug, Clone, PartialEq)]
pub struct SubModel {
    pub spec: TransformSpec,
    pub weights: ClassifierWeights,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub label: usize,
    pub probabilities: Vec<f32>,
    pub logits: Vec<f32>,
}

impl Prediction {
    pub fn from_logits(logits: Vec<f32>) -> Self {
        Self {
            label: argmax(&logits),
            probabilities: softmax(&logits),
            logits,
        }
    }
}

impl SubModel {
    pub fn new(spec: TransformSpec, weights: ClassifierWeights) -> Self {
        Self { spec, weights }
    }

    pub fn id(&self) -> &str {
        &self.spec.id
    }

    /// Classifies `x` after applying the sub-model's transformation.
    pub fn predict(&self, x: &Tensor) -> Result<Prediction, ClassifierError> {
        let xt = apply(&self.spec, x)?;
        self.predict_transformed(&xt)
    }

    /// Classifies an input that is already in the transformed domain.
    pub fn predict_transformed(&self, xt: &Tensor) -> Result<Prediction, ClassifierError> {
        Ok(Prediction::from_logits(self.weights.logits(xt)?))
    }

    /// `∇ₓ` of the cross-entropy loss at a transformed-domain input.
    pub fn input_gradient(&self, x_transformed: &Tensor, label: usize) -> Result<Tensor, ClassifierError> {
        Ok(loss_input_gradient(&self.weights, x_transformed, label)?.2)
    }

    pub fn accuracy(&self, set: &LabelledSet) -> Result<f64, ClassifierError> {
        if set.is_empty() {
            return Err(ClassifierError::EmptySet("evaluation"));
        }
        let mut correct = 0usize;
        for (x, y) in set.iter() {
            if self.predict(x)?.label == y {
                correct += 1;
            }
        }
        Ok(correct as f64 / set.len() as f64)
    }
}

/// Sub-models are differentiated in their own transformed domain.
impl Differentiable for SubModel {
    type Tape = ForwardTape;

    fn num_classes(&self) -> usize {
        self.weights.num_classes()
    }

    fn forward(&self, x: &Tensor) -> Result<(Vec<f32>, ForwardTape), TensorError> {
        self.weights.forward(x)
    }

    fn input_vjp(&self, tape: &ForwardTape, dlogits: &[f32]) -> Tensor {
        self.weights.input_vjp(tape, dlogits)
    }
}

fn mean_loss_and_accuracy(weights: &ClassifierWeights, xs: &[Tensor], ys: &[u8]) -> Result<(f64, f64), TensorError> {
    let mut loss = 0.0;
    let mut correct = 0usize;
    for (x, &y) in xs.iter().zip(ys) {
        let logits = weights.logits(x)?;
        loss += cross_entropy(&logits, usize::from(y)).0;
        if argmax(&logits) == usize::from(y) {
            correct += 1;
        }
    }
    let n = xs.len() as f64;
    Ok((loss / n, correct as f64 / n))
}

pub fn train_submodel(
    spec: &TransformSpec,
    train: &LabelledSet,
    val: &LabelledSet,
    config: &TrainConfig,
    seed: u64,
) -> Result<SubModel, ClassifierError> {
    Ok(train_submodel_with_report(spec, train, val, config, seed)?.0)
}

/// Mini-batch Adam on `apply(spec, ·)` of every example, keeping the
/// weights from the epoch with the lowest validation cross-entropy.
pub fn train_submodel_with_report(
    spec: &TransformSpec,
    train: &LabelledSet,
    val: &LabelledSet,
    config: &TrainConfig,
    seed: u64,
) -> Result<(SubModel, TrainReport), ClassifierError> {
    if train.is_empty() {
        return Err(ClassifierError::EmptySet("training"));
    }
    if val.is_empty() {
        return Err(ClassifierError::EmptySet("validation"));
    }
    let train_x: Vec<Tensor> = train.images().iter().map(|x| apply(spec, x)).collect::<Result<_, _>>()?;
    let val_x: Vec<Tensor> = val.images().iter().map(|x| apply(spec, x)).collect::<Result<_, _>>()?;
    let train_y = train.labels();

    let mut init_rng = seeded(derive_seed(seed, 0));
    let mut weights = ClassifierWeights::init_he(config.architecture, &mut init_rng)?;
    let mut state = AdamState::new(weights.params());
    let mut grads = weights.zero_grads();
    let batch_size = config.batch_size.max(1);

    let mut best = weights.clone();
    let mut report = TrainReport {
        best_epoch: 0,
        best_val_loss: f64::INFINITY,
        history: Vec::new(),
    };
    let mut order: Vec<usize> = (0..train_x.len()).collect();

    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut seeded(derive_seed(seed, epoch as u64)));
        let mut epoch_loss = 0.0;
        for (batch_idx, batch) in order.chunks(batch_size).enumerate() {
            for g in grads.iter_mut() {
                g.data_mut().fill(0.0);
            }
            let mut batch_loss = 0.0;
            for &i in batch {
                let tape = weights.forward_tape(&train_x[i])?;
                let (loss, dlogits) = cross_entropy(tape.logits(), usize::from(train_y[i]));
                batch_loss += loss;
                weights.backward(&tape, &dlogits, Some(&mut grads), false);
            }
            if !batch_loss.is_finite() {
                return Err(ClassifierError::Diverged { epoch, batch: batch_idx });
            }
            epoch_loss += batch_loss;
            let inv = 1.0 / batch.len() as f32;
            for g in grads.iter_mut() {
                for v in g.data_mut() {
                    *v *= inv;
                }
            }
            adam_step(weights.params_mut(), &grads, &mut state, &config.adam)?;
        }
        if !weights.all_finite() {
            return Err(ClassifierError::Diverged {
                epoch,
                batch: order.len().div_ceil(batch_size),
            });
        }
        let (val_loss, val_accuracy) = mean_loss_and_accuracy(&weights, &val_x, val.labels())?;
        if !val_loss.is_finite() {
            return Err(ClassifierError::Diverged { epoch, batch: 0 });
        }
        let stats = EpochStats {
            epoch,
            train_loss: epoch_loss / train_x.len() as f64,
            val_loss,
            val_accuracy,
        };
        info!(
            "{}: epoch {epoch} train loss {:.4} val loss {:.4} val acc {:.4}",
            spec.id, stats.train_loss, val_loss, val_accuracy
        );
        report.history.push(stats);
        if val_loss < report.best_val_loss {
            report.best_val_loss = val_loss;
            report.best_epoch = epoch;
            best = weights.clone();
        } else if epoch - report.best_epoch >= config.patience {
            break;
        }
    }
    Ok((SubModel::new(spec.clone(), best), report))
}
