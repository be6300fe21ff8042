use ndarray::Axis;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{loss_and_gradient, ArchSpec, MlpParams, Optimizer, OptimizerKind};
use crate::dataset::LabeledDataset;
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub seed: u64,
    pub init_scale: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 20,
            batch_size: 32,
            learning_rate: 0.01,
            optimizer: OptimizerKind::Adam,
            seed: 0,
            init_scale: 1.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if !(self.init_scale > 0.0 && self.init_scale.is_finite()) {
            return Err(Error::Config("init_scale must be positive".into()));
        }
        Ok(())
    }
}

/// Trains a classifier with minibatch descent on the mean cross-entropy.
///
/// Initialisation and batch order are both derived from `config.seed`, so
/// the result is a pure function of `(dataset, arch, config)`.
pub fn train_classifier(dataset: &LabeledDataset, arch: &ArchSpec, config: &TrainConfig) -> Result<MlpParams> {
    config.validate()?;
    arch.validate()?;
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if dataset.dim() != arch.input_dim {
        return Err(Error::DimensionMismatch {
            expected: arch.input_dim,
            actual: dataset.dim(),
        });
    }
    if dataset.num_classes() != arch.num_classes() {
        return Err(Error::DimensionMismatch {
            expected: arch.num_classes(),
            actual: dataset.num_classes(),
        });
    }

    let mut params = MlpParams::init(arch, rng::derive_seed(config.seed, &[0]), config.init_scale);
    if config.epochs == 0 {
        return Ok(params);
    }
    let mut order_rng = rng::seeded(rng::derive_seed(config.seed, &[1]));
    let mut flat = params.flatten();
    let mut opt = Optimizer::new(config.optimizer, config.learning_rate, flat.len());
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let labels = dataset.labels();

    for _ in 0..config.epochs {
        order.shuffle(&mut order_rng);
        for batch in order.chunks(config.batch_size) {
            let x = dataset.features().select(Axis(0), batch);
            let y: Vec<usize> = batch.iter().map(|&i| labels[i]).collect();
            let (_, grad) = loss_and_gradient(&params, arch, x.view(), &y)?;
            opt.step(&mut flat, &grad.flatten());
            params = MlpParams::unflatten(&flat, arch)?;
        }
    }
    if !params.is_finite() {
        return Err(Error::Numeric("training diverged".into()));
    }
    Ok(params)
}
