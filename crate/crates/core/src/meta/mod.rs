//! Permutation-aware meta-classifiers that read a network's parameters and
//! output an estimate of its training label distribution.
//!
//! For every layer `l` a single-layer set network maps each neuron's
//! incoming weights and bias (plus the previous layer's representation) to
//! one ELU activation; the activations of a layer are summed, so the
//! representation does not depend on neuron order. A softmax head combines
//! the per-layer sums, and for the proposed variant also the accuracy
//! vector, into a point on the simplex.

mod model;
mod train;

pub use model::{meta_forward_baseline, meta_forward_proposed, MetaParams, MetaShape, MetaTrace, MetaVariant};
pub use train::{
    attack, train_meta, train_meta_with, MetaModel, MetaTrainConfig, ThetaScaler, META_FORMAT, META_VERSION,
};

use crate::error::Result;
use crate::shadow::ShadowRecord;
use crate::simplex::entropy;

/// Mean soft-label cross-entropy of a model over a set of records.
pub fn meta_loss(model: &MetaModel, records: &[ShadowRecord]) -> Result<f64> {
    let nets = records
        .iter()
        .map(|r| model.prepare(&r.theta))
        .collect::<Result<Vec<_>>>()?;
    let batch: Vec<_> = records
        .iter()
        .zip(&nets)
        .map(|(r, n)| (n, r.a.as_slice(), &r.p))
        .collect();
    model.params.loss(&batch)
}

/// Mean entropy of the records' label distributions: the lower bound of [`meta_loss`].
pub fn entropy_floor(records: &[ShadowRecord]) -> f64 {
    records.iter().map(|r| entropy(&r.p)).sum::<f64>() / records.len() as f64
}
