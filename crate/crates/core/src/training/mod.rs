//! Datasets, losses, evaluation and the training loop.

mod dataset;
mod gradcheck;
mod loss;
mod train;

pub use dataset::{make_dataset, split_sizes, Dataset, DatasetConfig, GraphSource, Manifest, SampleRecord, Split};
pub use gradcheck::{check_gradients, GradientSample};
pub use loss::{ce_on_tape, l1_metric, loss_ce, loss_monotone, loss_total, monotone_on_tape, total_on_tape, LOG_FLOOR};
pub use train::{log_to_csv, mean_loss, train, train_with, EpochLog, TrainConfig, TrainOutcome};

use crate::dmp::dmp_run;
use crate::error::{Error, Result};
use crate::graph::Instance;
use crate::models::Model;
use crate::trajectory::MarginalTrajectory;

/// Something that maps an instance to marginals.
#[derive(Clone, Copy, Debug)]
pub enum Predictor<'a> {
    Dmp,
    Learned(&'a Model),
}

impl Predictor<'_> {
    pub fn name(&self) -> &'static str {
        match self {
            Predictor::Dmp => "dmp",
            Predictor::Learned(m) => m.kind().as_str(),
        }
    }

    pub fn predict(&self, inst: &Instance) -> Result<MarginalTrajectory> {
        match self {
            Predictor::Dmp => Ok(dmp_run(inst)),
            Predictor::Learned(m) => m.predict(inst),
        }
    }

    /// L1 error against the stored labels, one value per instance.
    pub fn l1_errors(&self, insts: &[&Instance]) -> Result<Vec<f64>> {
        insts
            .iter()
            .map(|inst| {
                let labels = inst
                    .labels
                    .as_ref()
                    .ok_or_else(|| Error::invalid("labels", "missing"))?;
                l1_metric(&self.predict(inst)?, labels)
            })
            .collect()
    }

    pub fn mean_l1(&self, insts: &[&Instance]) -> Result<f64> {
        if insts.is_empty() {
            return Err(Error::EmptySplit("evaluation"));
        }
        let errors = self.l1_errors(insts)?;
        Ok(errors.iter().sum::<f64>() / errors.len() as f64)
    }
}
