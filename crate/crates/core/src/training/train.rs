use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::{loss_total, total_on_tape};
use crate::error::{Error, Result};
use crate::graph::Instance;
use crate::models::{GraphIndex, Model, ModelKind, ModelSpec};
use crate::neural::{early_stop, Adam, AdamConfig, Plateau, PlateauConfig, Tape};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub adam: AdamConfig,
    pub plateau: PlateauConfig,
    /// Epochs without a new best validation loss before training stops.
    pub patience: usize,
    /// Weight of the monotonicity penalty.
    pub lambda: f64,
    pub max_epochs: usize,
    pub model: ModelSpec,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 0.01,
            adam: AdamConfig::default(),
            plateau: PlateauConfig::default(),
            patience: 15,
            lambda: 5.0,
            max_epochs: 100,
            model: ModelSpec::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) {
            return Err(Error::invalid("lr", "must be positive"));
        }
        if !(self.lambda >= 0.0) {
            return Err(Error::invalid("lambda", "must be non-negative"));
        }
        if self.max_epochs == 0 || self.patience == 0 {
            return Err(Error::invalid("max_epochs", "epochs and patience must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    /// Learning rate used during this epoch.
    pub lr: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Weights from the epoch with the lowest validation loss.
    pub model: Model,
    pub best_epoch: usize,
    pub log: Vec<EpochLog>,
}

pub fn log_to_csv(log: &[EpochLog], comment: Option<&str>) -> String {
    let mut out = String::new();
    if let Some(c) = comment {
        for line in c.lines() {
            let _ = writeln!(out, "# {line}");
        }
    }
    out.push_str("epoch,train_loss,val_loss,lr\n");
    for e in log {
        let _ = writeln!(out, "{},{:.8},{:.8},{:.8e}", e.epoch, e.train_loss, e.val_loss, e.lr);
    }
    out
}

struct Prepared<'a> {
    inst: &'a Instance,
    index: GraphIndex,
}

fn prepare<'a>(split: &'static str, insts: &[&'a Instance]) -> Result<Vec<Prepared<'a>>> {
    if insts.is_empty() {
        return Err(Error::EmptySplit(split));
    }
    insts
        .iter()
        .map(|&inst| {
            let labels = inst
                .labels
                .as_ref()
                .ok_or_else(|| Error::invalid("labels", format!("{split} instance without labels")))?;
            labels.check_shape("labels", inst.horizon(), inst.n())?;
            Ok(Prepared {
                inst,
                index: GraphIndex::new(&inst.graph),
            })
        })
        .collect()
}

/// Mean total loss over `insts` without recording gradients.
pub fn mean_loss(model: &Model, insts: &[&Instance], lambda: f64) -> Result<f64> {
    let mut total = 0.0;
    for inst in insts {
        let labels = inst
            .labels
            .as_ref()
            .ok_or_else(|| Error::invalid("labels", "missing"))?;
        total += loss_total(&model.predict(inst)?, labels, lambda)?;
    }
    Ok(total / insts.len() as f64)
}

/// Adam on one instance at a time, shuffled every epoch, with the
/// learning rate halved on validation plateaus and early stopping.
/// `seed` fixes both the initial weights and the shuffling.
pub fn train(
    kind: ModelKind,
    train: &[&Instance],
    val: &[&Instance],
    config: &TrainConfig,
    seed: u64,
) -> Result<TrainOutcome> {
    train_with(kind, train, val, config, seed, |_| {})
}

/// [`train`] with a callback after every epoch.
pub fn train_with(
    kind: ModelKind,
    train: &[&Instance],
    val: &[&Instance],
    config: &TrainConfig,
    seed: u64,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainOutcome> {
    config.validate()?;
    let train = prepare("train", train)?;
    let val = prepare("val", val)?;
    let mut model = Model::new(kind, config.model, seed)?;
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(seed);
    shuffle_rng.set_stream(1);
    let mut adam = Adam::new(config.adam);
    let mut plateau = Plateau::new(config.lr, config.plateau);
    let mut best: Option<(f64, usize, Model)> = None;
    let mut history = Vec::new();
    let mut log = Vec::new();
    let mut order: Vec<usize> = (0..train.len()).collect();

    for epoch in 1..=config.max_epochs {
        let lr = plateau.lr();
        order.shuffle(&mut shuffle_rng);
        let mut train_loss = 0.0;
        for &k in &order {
            let p = &train[k];
            let labels = p.inst.labels.as_ref().expect("checked in prepare");
            let mut tape = Tape::new();
            let trace = model.forward(&mut tape, p.inst, &p.index)?;
            let loss = total_on_tape(&mut tape, &trace, labels, config.lambda)?;
            let value = tape.scalar(loss);
            if !value.is_finite() {
                return Err(Error::NonFinite(format!("training loss at epoch {epoch}")));
            }
            train_loss += value;
            model.store_mut().zero_grads();
            tape.backward(loss, model.store_mut())?;
            adam.step(model.store_mut(), lr);
        }
        if !model.store().all_finite() {
            return Err(Error::NonFinite(format!("weights after epoch {epoch}")));
        }
        let val_insts: Vec<&Instance> = val.iter().map(|p| p.inst).collect();
        let val_loss = mean_loss(&model, &val_insts, config.lambda)?;
        let entry = EpochLog {
            epoch,
            train_loss: train_loss / train.len() as f64,
            val_loss,
            lr,
        };
        on_epoch(&entry);
        log.push(entry);
        if best.as_ref().is_none_or(|(b, _, _)| val_loss < *b) {
            best = Some((val_loss, epoch, model.clone()));
        }
        plateau.observe(val_loss);
        history.push(val_loss);
        if early_stop(&history, config.patience) {
            break;
        }
    }
    let (_, best_epoch, model) = best.expect("at least one epoch");
    Ok(TrainOutcome { model, best_epoch, log })
}
