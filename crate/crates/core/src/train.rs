//! Training with Adam and validation-loss early stopping.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::ClipSet;
use crate::error::{Error, Result};
use crate::metrics::{accuracy_at_threshold, evaluate_auc};
use crate::model::{Model, ModelConfig, TrainWorkspace};
use crate::nn::{bce_with_logits, AdamState, Mode};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub min_epochs: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub learning_rate: f32,
    pub batch_size: usize,
    pub seed: u64,
    /// Random horizontal flips of training clips.
    pub flip: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            min_epochs: 50,
            max_epochs: 100,
            patience: 5,
            learning_rate: 1e-3,
            batch_size: 16,
            seed: 0,
            flip: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.min_epochs > self.max_epochs {
            return Err(Error::Config(format!(
                "min_epochs {} exceeds max_epochs {}",
                self.min_epochs, self.max_epochs
            )));
        }
        if self.patience == 0 || self.batch_size == 0 || self.max_epochs == 0 {
            return Err(Error::Config(
                "patience, batch_size and max_epochs must be positive".into(),
            ));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config(format!(
                "learning rate {}",
                self.learning_rate
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_auc: f64,
    /// Percent correct at threshold 0.5.
    pub val_accuracy: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Control {
    Continue,
    Stop,
}

/// Patience bookkeeping, separate from the loop so it can be exercised on
/// recorded loss curves.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    min_epochs: usize,
    max_epochs: usize,
    patience: usize,
    epoch: usize,
    best: f64,
    best_epoch: usize,
}

impl EarlyStopping {
    pub fn new(tc: &TrainConfig) -> Self {
        Self {
            min_epochs: tc.min_epochs,
            max_epochs: tc.max_epochs,
            patience: tc.patience,
            epoch: 0,
            best: f64::INFINITY,
            best_epoch: 0,
        }
    }

    /// Records one epoch's validation loss. Returns whether it is a new
    /// best and whether training should stop after this epoch.
    pub fn observe(&mut self, val_loss: f64) -> (bool, Control) {
        self.epoch += 1;
        let improved = val_loss < self.best;
        if improved {
            self.best = val_loss;
            self.best_epoch = self.epoch;
        }
        let stale = self.epoch - self.best_epoch;
        let stop = self.epoch >= self.max_epochs
            || (self.epoch >= self.min_epochs && stale >= self.patience);
        (
            improved,
            if stop {
                Control::Stop
            } else {
                Control::Continue
            },
        )
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Weights from the epoch with the lowest validation loss, eval mode.
    pub model: Model,
    pub history: Vec<EpochStats>,
    pub best_epoch: usize,
}

fn class_counts(labels: &[u8]) -> (usize, usize) {
    let pos = labels.iter().filter(|&&l| l == 1).count();
    (pos, labels.len() - pos)
}

fn check_set(name: &str, set: &dyn ClipSet, model: &Model) -> Result<()> {
    let (pos, neg) = class_counts(&set.labels());
    if pos == 0 || neg == 0 {
        return Err(Error::Data(format!(
            "{name} set needs both classes, has {pos} positive and {neg} negative"
        )));
    }
    let want = model.input_shape(1);
    if set.clip_shape()[..] != want[1..] {
        return Err(Error::shape(
            format!("{name} clip shape"),
            format!("{:?}", &want[1..]),
            format!("{:?}", set.clip_shape()),
        ));
    }
    Ok(())
}

fn flip_width(clip: &mut [f32], w: usize) {
    for row in clip.chunks_exact_mut(w) {
        row.reverse();
    }
}

/// Fills `batch` with clips `idx` from `set`.
pub fn fill_batch(set: &dyn ClipSet, idx: &[usize], batch: &mut Tensor) {
    let s = set.clip_shape();
    let per: usize = s.iter().product();
    batch.resize_to(&[idx.len(), s[0], s[1], s[2], s[3]]);
    for (k, &i) in idx.iter().enumerate() {
        set.write_clip(i, &mut batch.data_mut()[k * per..(k + 1) * per]);
    }
}

/// Mean loss and AUC over `set` in eval mode.
pub fn evaluate(
    model: &Model,
    set: &dyn ClipSet,
    batch_size: usize,
) -> Result<(f64, f64, Vec<f32>)> {
    let mut batch = Tensor::zeros(&[1]);
    let mut probs = Vec::with_capacity(set.len());
    let mut loss = 0.0;
    let labels = set.labels();
    let all: Vec<usize> = (0..set.len()).collect();
    for chunk in all.chunks(batch_size) {
        fill_batch(set, chunk, &mut batch);
        for (z, &i) in model.logits(&batch)?.into_iter().zip(chunk) {
            loss += bce_with_logits(z, labels[i]).0;
            probs.push(crate::nn::sigmoid(z));
        }
    }
    let auc = evaluate_auc(&probs, &labels)?;
    Ok((loss / set.len() as f64, auc, probs))
}

pub fn train_model(
    config: ModelConfig,
    train: &dyn ClipSet,
    val: &dyn ClipSet,
    tc: &TrainConfig,
) -> Result<TrainOutcome> {
    train_model_with(config, train, val, tc, |_| Control::Continue)
}

/// Trains with a per-epoch observer that may end the run early.
pub fn train_model_with(
    config: ModelConfig,
    train: &dyn ClipSet,
    val: &dyn ClipSet,
    tc: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochStats) -> Control,
) -> Result<TrainOutcome> {
    tc.validate()?;
    let side = train.clip_shape()[2];
    let mut model = Model::build_with_side(config, side, tc.seed)?;
    check_set("training", train, &model)?;
    check_set("validation", val, &model)?;

    let mut rng = ChaCha8Rng::seed_from_u64(tc.seed ^ 0x005e_ed0f_7a1e);
    let mut adam = AdamState::new(model.count_params(), tc.learning_rate);
    let mut stopper = EarlyStopping::new(tc);
    let mut ws = TrainWorkspace::default();
    let mut grads = Vec::new();
    let mut params = model.params_flat();
    let mut batch = Tensor::zeros(&[1]);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let labels = train.labels();
    let per: usize = train.clip_shape().iter().product();
    let w = train.clip_shape()[3];
    let mut history = Vec::new();
    let mut best = model.clone();

    loop {
        model.set_mode(Mode::Train);
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(tc.batch_size) {
            fill_batch(train, chunk, &mut batch);
            if tc.flip {
                for k in 0..chunk.len() {
                    if rng.gen_bool(0.5) {
                        flip_width(&mut batch.data_mut()[k * per..(k + 1) * per], w);
                    }
                }
            }
            let y: Vec<u8> = chunk.iter().map(|&i| labels[i]).collect();
            let loss = model.loss_and_grad(&batch, &y, &mut ws, &mut grads)?;
            total += loss * chunk.len() as f64;
            adam.step(&mut params, &grads)?;
            model.set_params_flat(&params)?;
        }
        model.set_mode(Mode::Eval);
        let (val_loss, val_auc, probs) = evaluate(&model, val, tc.batch_size)?;
        let stats = EpochStats {
            epoch: history.len() + 1,
            train_loss: total / train.len() as f64,
            val_loss,
            val_auc,
            val_accuracy: accuracy_at_threshold(&probs, &val.labels(), 0.5)?,
        };
        let (improved, control) = stopper.observe(val_loss);
        if improved {
            best.clone_from(&model);
        }
        let user = on_epoch(&stats);
        history.push(stats);
        if control == Control::Stop || user == Control::Stop {
            break;
        }
    }
    best.set_mode(Mode::Eval);
    Ok(TrainOutcome {
        model: best,
        history,
        best_epoch: stopper.best_epoch(),
    })
}
