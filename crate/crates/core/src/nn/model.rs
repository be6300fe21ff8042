use ndarray::{Array1, Array2, ArrayView2, Axis};

use super::{ArchSpec, MlpParams, OutputActivation};
use crate::dataset::LabeledDataset;
use crate::error::{Error, Result};

/// Probabilities are clamped to this floor before taking logarithms.
pub const LOG_FLOOR: f64 = 1e-12;

struct Trace {
    /// Input to every layer; `inputs[0]` is the batch itself.
    inputs: Vec<Array2<f64>>,
    /// Pre-activations of every layer.
    pre: Vec<Array2<f64>>,
}

fn check_input(arch: &ArchSpec, params: &MlpParams, width: usize) -> Result<()> {
    if !params.conforms_to(arch) {
        return Err(Error::InvalidArch(format!(
            "parameters do not conform to {}",
            arch.fingerprint()
        )));
    }
    if width != arch.input_dim {
        return Err(Error::DimensionMismatch {
            expected: arch.input_dim,
            actual: width,
        });
    }
    Ok(())
}

fn trace(params: &MlpParams, arch: &ArchSpec, x: ArrayView2<'_, f64>) -> Trace {
    let last = params.num_layers() - 1;
    let hidden = arch.activations.hidden;
    let mut inputs = Vec::with_capacity(params.num_layers());
    let mut pre = Vec::with_capacity(params.num_layers());
    let mut current = x.to_owned();
    for (l, (w, b)) in params.weights.iter().zip(&params.biases).enumerate() {
        let z = current.dot(w) + b;
        inputs.push(current);
        current = if l < last {
            z.mapv(|v| hidden.apply(v))
        } else {
            Array2::zeros((0, 0))
        };
        pre.push(z);
    }
    Trace { inputs, pre }
}

fn head(logits: &Array2<f64>, output: OutputActivation) -> Array2<f64> {
    match output {
        OutputActivation::Softmax => {
            let mut probs = logits.clone();
            for mut row in probs.rows_mut() {
                softmax_inplace(row.as_slice_mut().expect("standard layout"));
            }
            probs
        }
        OutputActivation::Sigmoid => {
            let mut probs = Array2::zeros((logits.nrows(), 2));
            for (mut row, z) in probs.rows_mut().into_iter().zip(logits.column(0)) {
                let s = sigmoid(*z);
                row[0] = s;
                row[1] = 1.0 - s;
            }
            probs
        }
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

pub fn softmax_inplace(v: &mut [f64]) {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in v.iter_mut() {
        *x /= sum;
    }
}

/// Class probabilities for a single feature vector.
pub fn forward(params: &MlpParams, arch: &ArchSpec, x: &[f64]) -> Result<Vec<f64>> {
    let batch = ArrayView2::from_shape((1, x.len()), x).expect("row vector");
    Ok(predict_batch(params, arch, batch)?.row(0).to_vec())
}

/// Class probabilities for every row of `x`, shape `(rows, C)`.
pub fn predict_batch(params: &MlpParams, arch: &ArchSpec, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    check_input(arch, params, x.ncols())?;
    let t = trace(params, arch, x);
    Ok(head(t.pre.last().unwrap(), arch.activations.output))
}

fn mean_cross_entropy(probs: &Array2<f64>, labels: &[usize]) -> f64 {
    let total: f64 = labels
        .iter()
        .zip(probs.rows())
        .map(|(&c, row)| -row[c].clamp(LOG_FLOOR, 1.0).ln())
        .sum();
    total / labels.len() as f64
}

/// Mean cross-entropy of the network over a dataset.
pub fn cross_entropy_loss(params: &MlpParams, arch: &ArchSpec, dataset: &LabeledDataset) -> Result<f64> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    check_classes(arch, dataset.num_classes())?;
    let probs = predict_batch(params, arch, dataset.features().view())?;
    Ok(mean_cross_entropy(&probs, dataset.labels()))
}

fn check_classes(arch: &ArchSpec, classes: usize) -> Result<()> {
    if arch.num_classes() != classes {
        return Err(Error::DimensionMismatch {
            expected: arch.num_classes(),
            actual: classes,
        });
    }
    Ok(())
}

/// Mean cross-entropy over a batch together with its exact gradient.
pub fn loss_and_gradient(
    params: &MlpParams,
    arch: &ArchSpec,
    x: ArrayView2<'_, f64>,
    labels: &[usize],
) -> Result<(f64, MlpParams)> {
    if labels.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if x.nrows() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: x.nrows(),
            actual: labels.len(),
        });
    }
    check_input(arch, params, x.ncols())?;
    let n = labels.len() as f64;
    let t = trace(params, arch, x);
    let probs = head(t.pre.last().unwrap(), arch.activations.output);
    let loss = mean_cross_entropy(&probs, labels);

    // d(loss)/d(logits) of the output layer
    let mut delta = match arch.activations.output {
        OutputActivation::Softmax => {
            let mut d = probs;
            for (mut row, &c) in d.rows_mut().into_iter().zip(labels) {
                row[c] -= 1.0;
            }
            d
        }
        OutputActivation::Sigmoid => {
            let mut d = Array2::zeros((labels.len(), 1));
            for (i, &c) in labels.iter().enumerate() {
                let target = if c == 0 { 1.0 } else { 0.0 };
                d[[i, 0]] = probs[[i, 0]] - target;
            }
            d
        }
    };
    delta /= n;

    let layers = params.num_layers();
    let mut grad_w = vec![Array2::zeros((0, 0)); layers];
    let mut grad_b = vec![Array1::zeros(0); layers];
    let hidden = arch.activations.hidden;
    for l in (0..layers).rev() {
        grad_w[l] = t.inputs[l].t().dot(&delta);
        grad_b[l] = delta.sum_axis(Axis(0));
        if l > 0 {
            let mut upstream = delta.dot(&params.weights[l].t());
            upstream.zip_mut_with(&t.pre[l - 1], |d, &z| *d *= hidden.derivative(z));
            delta = upstream;
        }
    }
    let grad = MlpParams {
        weights: grad_w,
        biases: grad_b,
    };
    if !loss.is_finite() || !grad.is_finite() {
        return Err(Error::Numeric("non-finite loss or gradient".into()));
    }
    Ok((loss, grad))
}

/// Exact gradient of the mean cross-entropy over a batch.
pub fn backward(params: &MlpParams, arch: &ArchSpec, x: ArrayView2<'_, f64>, labels: &[usize]) -> Result<MlpParams> {
    loss_and_gradient(params, arch, x, labels).map(|(_, g)| g)
}
