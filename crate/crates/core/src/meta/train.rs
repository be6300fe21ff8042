use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{MetaParams, MetaShape, MetaVariant};
use crate::dataset::AuxDataset;
use crate::error::{Error, Result};
use crate::nn::{ArchSpec, MlpParams, Optimizer, OptimizerKind};
use crate::par::{self, Parallelism};
use crate::rng;
use crate::shadow::{compute_accuracy_vector, ShadowRecord};
use crate::simplex::LabelDistribution;

pub const META_FORMAT: &str = "labelinfer-meta";
pub const META_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MetaTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub seed: u64,
    /// Fraction of the training records held out to pick the best epoch.
    pub validation_fraction: f64,
    pub init_scale: f64,
    /// Standardise every parameter coordinate with statistics of the training records.
    pub standardize: bool,
}

impl Default for MetaTrainConfig {
    fn default() -> Self {
        MetaTrainConfig {
            epochs: 200,
            batch_size: 16,
            learning_rate: 0.01,
            optimizer: OptimizerKind::Adam,
            seed: 0,
            validation_fraction: 0.1,
            init_scale: 1.0,
            standardize: false,
        }
    }
}

impl MetaTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("meta batch_size must be positive".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("meta learning_rate must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(Error::Config("validation_fraction must lie in [0, 1)".into()));
        }
        if !(self.init_scale > 0.0 && self.init_scale.is_finite()) {
            return Err(Error::Config("meta init_scale must be positive".into()));
        }
        Ok(())
    }
}

/// Per-coordinate affine map applied to flattened parameters before the meta-classifier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThetaScaler {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl ThetaScaler {
    pub fn fit<'a>(thetas: impl IntoIterator<Item = &'a [f64]>) -> Self {
        let mut iter = thetas.into_iter().peekable();
        let len = iter.peek().map(|t| t.len()).unwrap_or(0);
        let mut sum = vec![0.0; len];
        let mut sum_sq = vec![0.0; len];
        let mut n = 0.0;
        for t in iter {
            for ((s, q), &v) in sum.iter_mut().zip(&mut sum_sq).zip(t) {
                *s += v;
                *q += v * v;
            }
            n += 1.0;
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
        let scale = sum_sq
            .iter()
            .zip(&mean)
            .map(|(q, m)| {
                let sd = (q / n - m * m).max(0.0).sqrt();
                if sd > 1e-12 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        ThetaScaler { mean, scale }
    }

    pub fn apply(&self, theta: &[f64]) -> Vec<f64> {
        theta
            .iter()
            .zip(self.mean.iter().zip(&self.scale))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }
}

/// A trained meta-classifier together with everything needed to apply it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetaModel {
    pub format: String,
    pub version: u32,
    /// Architecture of the classifiers this model attacks.
    pub arch: ArchSpec,
    /// Accuracy threshold the training records were computed with.
    pub epsilon: f64,
    pub params: MetaParams,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scaler: Option<ThetaScaler>,
    /// Validation loss of the returned checkpoint, if a validation split was used.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub validation_loss: Option<f64>,
}

impl MetaModel {
    pub fn variant(&self) -> MetaVariant {
        self.params.variant
    }

    /// Structured (and, if configured, standardised) network for a flat parameter vector.
    pub fn prepare(&self, theta: &[f64]) -> Result<MlpParams> {
        match &self.scaler {
            Some(s) => {
                if theta.len() != s.mean.len() {
                    return Err(Error::DimensionMismatch {
                        expected: s.mean.len(),
                        actual: theta.len(),
                    });
                }
                MlpParams::unflatten(&s.apply(theta), &self.arch)
            }
            None => MlpParams::unflatten(theta, &self.arch),
        }
    }

    pub fn predict(&self, theta: &[f64], accuracy: &[f64]) -> Result<LabelDistribution> {
        self.params.forward(&self.prepare(theta)?, accuracy)
    }

    pub fn predict_record(&self, record: &ShadowRecord) -> Result<LabelDistribution> {
        self.check_arch(&record.arch)?;
        self.predict(&record.theta, &record.a)
    }

    fn check_arch(&self, arch: &ArchSpec) -> Result<()> {
        if arch != &self.arch {
            return Err(Error::ArchMismatch {
                expected: self.arch.fingerprint(),
                found: arch.fingerprint(),
            });
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let json = serde_json::to_string(self).expect("meta model serializes");
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let model: MetaModel = serde_json::from_str(&text).map_err(|e| Error::Format {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        if model.format != META_FORMAT || model.version != META_VERSION {
            return Err(Error::Format {
                path: path.to_path_buf(),
                message: format!("unsupported format {} v{}", model.format, model.version),
            });
        }
        let shape = MetaShape::from_arch(&model.arch).map_err(|e| Error::Format {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        if model.params.shape != shape || model.params.num_params() != shape.num_params(model.params.variant) {
            return Err(Error::Format {
                path: path.to_path_buf(),
                message: "meta parameters do not match the embedded architecture".into(),
            });
        }
        Ok(model)
    }
}

struct Example {
    net: MlpParams,
    accuracy: Vec<f64>,
    p: LabelDistribution,
}

fn mean_loss(params: &MetaParams, examples: &[Example], idx: &[usize], mode: Parallelism) -> Result<f64> {
    let losses = par::map(idx, mode, |&i| {
        let e = &examples[i];
        let t = params.trace(&e.net, &e.accuracy)?;
        Ok(super::model::soft_cross_entropy(e.p.as_slice(), &t.probs))
    });
    let mut total = 0.0;
    for l in losses {
        total += l?;
    }
    Ok(total / idx.len() as f64)
}

pub fn train_meta(
    records: &[ShadowRecord],
    variant: MetaVariant,
    epsilon: f64,
    config: &MetaTrainConfig,
) -> Result<MetaModel> {
    train_meta_with(records, variant, epsilon, config, Parallelism::default())
}

/// Fits a meta-classifier by minibatch descent on the soft-label cross-entropy.
///
/// A `validation_fraction` of the records is held out and the parameters
/// of the epoch with the lowest validation loss are returned. Per-example
/// gradients may be computed in parallel; they are always summed in record
/// order, so the result depends only on the inputs and `config.seed`.
pub fn train_meta_with(
    records: &[ShadowRecord],
    variant: MetaVariant,
    epsilon: f64,
    config: &MetaTrainConfig,
    mode: Parallelism,
) -> Result<MetaModel> {
    config.validate()?;
    let first = records.first().ok_or(Error::EmptyDataset)?;
    let arch = first.arch.clone();
    if let Some(r) = records.iter().find(|r| r.arch != arch) {
        return Err(Error::ArchMismatch {
            expected: arch.fingerprint(),
            found: r.arch.fingerprint(),
        });
    }
    let shape = MetaShape::from_arch(&arch)?;
    let scaler = config
        .standardize
        .then(|| ThetaScaler::fit(records.iter().map(|r| r.theta.as_slice())));

    let mut model = MetaModel {
        format: META_FORMAT.into(),
        version: META_VERSION,
        arch,
        epsilon,
        params: MetaParams::init(&shape, variant, rng::derive_seed(config.seed, &[0]), config.init_scale),
        scaler,
        validation_loss: None,
    };
    let examples = records
        .iter()
        .map(|r| {
            r.validate()?;
            Ok(Example {
                net: model.prepare(&r.theta)?,
                accuracy: r.a.clone(),
                p: r.p.clone(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    if config.epochs == 0 {
        return Ok(model);
    }

    let mut rng = rng::seeded(rng::derive_seed(config.seed, &[1]));
    let mut order: Vec<usize> = (0..examples.len()).collect();
    order.shuffle(&mut rng);
    let n_val = if examples.len() >= 2 {
        ((examples.len() as f64 * config.validation_fraction).round() as usize).min(examples.len() - 1)
    } else {
        0
    };
    let (val_idx, train_idx) = order.split_at(n_val);
    let mut val_idx = val_idx.to_vec();
    val_idx.sort_unstable();
    let mut train_idx = train_idx.to_vec();

    let mut params = model.params.clone();
    let mut flat = params.flatten();
    let mut opt = Optimizer::new(config.optimizer, config.learning_rate, flat.len());
    let mut best: Option<(f64, MetaParams)> = None;

    for _ in 0..config.epochs {
        train_idx.shuffle(&mut rng);
        for batch in train_idx.chunks(config.batch_size) {
            let weight = 1.0 / batch.len() as f64;
            let grads = par::map(batch, mode, |&i| {
                let e = &examples[i];
                let mut g = MetaParams::zeros(&shape, variant);
                params
                    .accumulate_gradient(&e.net, &e.accuracy, &e.p, weight, &mut g)
                    .map(|_| g.flatten())
            });
            let mut total = vec![0.0; flat.len()];
            for g in grads {
                total.iter_mut().zip(g?).for_each(|(t, v)| *t += v);
            }
            if total.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numeric("non-finite meta gradient".into()));
            }
            opt.step(&mut flat, &total);
            params.assign(&flat);
        }
        if !val_idx.is_empty() {
            let loss = mean_loss(&params, &examples, &val_idx, mode)?;
            if best.as_ref().is_none_or(|(b, _)| loss < *b) {
                best = Some((loss, params.clone()));
            }
        }
    }

    match best {
        Some((loss, p)) => {
            model.params = p;
            model.validation_loss = Some(loss);
        }
        None => model.params = params,
    }
    Ok(model)
}

/// Infers the label distribution a target classifier was trained on.
pub fn attack(
    model: &MetaModel,
    target: &MlpParams,
    arch: &ArchSpec,
    aux: &AuxDataset,
    epsilon: f64,
) -> Result<LabelDistribution> {
    model.check_arch(arch)?;
    if !target.conforms_to(arch) {
        return Err(Error::InvalidArch(format!(
            "target parameters do not conform to {}",
            arch.fingerprint()
        )));
    }
    let accuracy = compute_accuracy_vector(target, arch, aux, epsilon)?;
    model.predict(&target.flatten(), &accuracy)
}
