use ndarray::{Array1, Array2};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{elu, elu_derivative, softmax_inplace, ArchSpec, MlpParams, LOG_FLOOR};
use crate::rng;
use crate::simplex::LabelDistribution;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetaVariant {
    /// Previous-layer representation added onto every weight column, with
    /// the accuracy vector fed to the head.
    Proposed,
    /// Previous-layer representation concatenated to every neuron's
    /// weights; the head sees only the layer sums.
    Baseline,
}

impl MetaVariant {
    pub fn name(self) -> &'static str {
        match self {
            MetaVariant::Proposed => "proposed",
            MetaVariant::Baseline => "baseline",
        }
    }
}

/// Layer widths of the networks a meta-classifier reads.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetaShape {
    pub input_dim: usize,
    /// Width of every consumed layer, in order. One set network per entry.
    pub widths: Vec<usize>,
    pub classes: usize,
}

impl MetaShape {
    pub fn new(input_dim: usize, widths: Vec<usize>, classes: usize) -> Self {
        MetaShape {
            input_dim,
            widths,
            classes,
        }
    }

    /// Shape reading the hidden layers of `arch`. The output layer is not
    /// consumed; its class-specific information reaches the proposed variant
    /// through the accuracy vector.
    pub fn from_arch(arch: &ArchSpec) -> Result<Self> {
        let hidden = &arch.layers[..arch.layers.len() - 1];
        if hidden.is_empty() {
            return Err(Error::InvalidArch(
                "a meta-classifier needs at least one hidden layer".into(),
            ));
        }
        Ok(MetaShape::new(arch.input_dim, hidden.to_vec(), arch.num_classes()))
    }

    pub fn num_layers(&self) -> usize {
        self.widths.len()
    }

    fn fan_in(&self, layer: usize) -> usize {
        if layer == 0 {
            self.input_dim
        } else {
            self.widths[layer - 1]
        }
    }

    /// Length of the per-layer weight vector.
    pub fn omega_len(&self, variant: MetaVariant, layer: usize) -> usize {
        let m = self.fan_in(layer);
        match variant {
            _ if layer == 0 => m + 1,
            MetaVariant::Proposed => m + 1,
            MetaVariant::Baseline => 2 * m + 1,
        }
    }

    /// Rows of the head matrix: one per layer sum, plus the accuracy vector
    /// for the proposed variant.
    pub fn head_rows(&self, variant: MetaVariant) -> usize {
        match variant {
            MetaVariant::Proposed => self.num_layers() + self.classes,
            MetaVariant::Baseline => self.num_layers(),
        }
    }

    pub fn num_params(&self, variant: MetaVariant) -> usize {
        (0..self.num_layers())
            .map(|l| self.omega_len(variant, l))
            .sum::<usize>()
            + self.head_rows(variant) * self.classes
    }
}

/// Weights of a meta-classifier: one vector per consumed layer and the head matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetaParams {
    pub variant: MetaVariant,
    pub shape: MetaShape,
    pub omegas: Vec<Array1<f64>>,
    /// Shape `(head_rows, classes)`.
    pub head: Array2<f64>,
}

/// Intermediate values of one meta forward pass.
pub struct MetaTrace {
    pre: Vec<Array1<f64>>,
    q: Vec<Array1<f64>>,
    features: Array1<f64>,
    pub probs: Vec<f64>,
}

impl MetaParams {
    pub fn zeros(shape: &MetaShape, variant: MetaVariant) -> Self {
        let omegas = (0..shape.num_layers())
            .map(|l| Array1::zeros(shape.omega_len(variant, l)))
            .collect();
        MetaParams {
            variant,
            shape: shape.clone(),
            omegas,
            head: Array2::zeros((shape.head_rows(variant), shape.classes)),
        }
    }

    /// Uniform in `[-s, s]` with `s = init_scale / sqrt(fan_in)` for every block.
    pub fn init(shape: &MetaShape, variant: MetaVariant, seed: u64, init_scale: f64) -> Self {
        let mut rng = rng::seeded(seed);
        let mut params = Self::zeros(shape, variant);
        for omega in &mut params.omegas {
            let s = init_scale / (omega.len() as f64).sqrt();
            omega.mapv_inplace(|_| rng.random_range(-s..=s));
        }
        let s = init_scale / (params.head.nrows() as f64).sqrt();
        params.head.mapv_inplace(|_| rng.random_range(-s..=s));
        params
    }

    pub fn num_params(&self) -> usize {
        self.omegas.iter().map(|o| o.len()).sum::<usize>() + self.head.len()
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for o in &self.omegas {
            out.extend(o.iter().copied());
        }
        out.extend(self.head.iter().copied());
        out
    }

    pub fn assign(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.num_params());
        let mut it = flat.iter().copied();
        for o in &mut self.omegas {
            o.iter_mut().for_each(|v| *v = it.next().unwrap());
        }
        self.head.iter_mut().for_each(|v| *v = it.next().unwrap());
    }

    fn check(&self, net: &MlpParams, accuracy: &[f64]) -> Result<()> {
        let conforms = net.num_layers() == self.shape.num_layers() + 1
            && net.weights.first().map(|w| w.nrows()) == Some(self.shape.input_dim)
            && net.weights.iter().zip(&self.shape.widths).all(|(w, &m)| w.ncols() == m);
        if !conforms {
            return Err(Error::InvalidArch(
                "network shape does not match the meta-classifier".into(),
            ));
        }
        if self.variant == MetaVariant::Proposed && accuracy.len() != self.shape.classes {
            return Err(Error::DimensionMismatch {
                expected: self.shape.classes,
                actual: accuracy.len(),
            });
        }
        Ok(())
    }

    /// Offset of the previous-layer coefficients and the bias coefficient in layer `l`'s omega.
    fn layout(&self, l: usize) -> (usize, usize) {
        let m = self.shape.fan_in(l);
        match self.variant {
            _ if l == 0 => (0, m),
            MetaVariant::Proposed => (0, m),
            MetaVariant::Baseline => (m, 2 * m),
        }
    }

    pub fn trace(&self, net: &MlpParams, accuracy: &[f64]) -> Result<MetaTrace> {
        self.check(net, accuracy)?;
        let layers = self.shape.num_layers();
        let mut pre = Vec::with_capacity(layers);
        let mut q: Vec<Array1<f64>> = Vec::with_capacity(layers);
        for l in 0..layers {
            let omega = &self.omegas[l];
            let w = &net.weights[l];
            let m = w.nrows();
            let (q_off, bias_idx) = self.layout(l);
            let mut z = w.t().dot(&omega.slice(ndarray::s![..m]));
            z.scaled_add(omega[bias_idx], &net.biases[l]);
            if l > 0 {
                // the previous representation enters every neuron identically
                let shared = q[l - 1].dot(&omega.slice(ndarray::s![q_off..q_off + m]));
                z += shared;
            }
            q.push(z.mapv(elu));
            pre.push(z);
        }
        let mut features: Vec<f64> = q.iter().map(|ql| ql.sum()).collect();
        if self.variant == MetaVariant::Proposed {
            features.extend_from_slice(accuracy);
        }
        let features = Array1::from(features);
        let mut probs = features.dot(&self.head).to_vec();
        softmax_inplace(&mut probs);
        Ok(MetaTrace {
            pre,
            q,
            features,
            probs,
        })
    }

    /// Estimated label distribution for a network and its accuracy vector.
    ///
    /// The baseline variant ignores `accuracy`.
    pub fn forward(&self, net: &MlpParams, accuracy: &[f64]) -> Result<LabelDistribution> {
        let t = self.trace(net, accuracy)?;
        if t.probs.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("meta-classifier produced non-finite output".into()));
        }
        LabelDistribution::new(t.probs)
    }

    /// Per-layer sums `sum_i q_l[i]` of the set representation.
    pub fn layer_sums(&self, net: &MlpParams, accuracy: &[f64]) -> Result<Vec<f64>> {
        let t = self.trace(net, accuracy)?;
        Ok(t.q.iter().map(|q| q.sum()).collect())
    }

    /// Soft-label cross-entropy `-sum_c p_c ln p̂_c` for one example, and
    /// its gradient scaled by `weight` accumulated into `grad`.
    pub fn accumulate_gradient(
        &self,
        net: &MlpParams,
        accuracy: &[f64],
        target: &LabelDistribution,
        weight: f64,
        grad: &mut MetaParams,
    ) -> Result<f64> {
        let t = self.trace(net, accuracy)?;
        let loss = soft_cross_entropy(target.as_slice(), &t.probs);

        let dlogits: Array1<f64> = t
            .probs
            .iter()
            .zip(target.as_slice())
            .map(|(p_hat, p)| weight * (p_hat - p))
            .collect();
        for (r, &f) in t.features.iter().enumerate() {
            grad.head.row_mut(r).scaled_add(f, &dlogits);
        }
        let dfeatures = self.head.dot(&dlogits);

        let layers = self.shape.num_layers();
        // gradient reaching q_l from layer l + 1
        let mut upstream = Array1::zeros(self.shape.widths[layers - 1]);
        for l in (0..layers).rev() {
            let mut dz = upstream.mapv(|u: f64| u + dfeatures[l]);
            dz.zip_mut_with(&t.pre[l], |d, &z| *d *= elu_derivative(z));
            let w = &net.weights[l];
            let m = w.nrows();
            let (q_off, bias_idx) = self.layout(l);
            let g = &mut grad.omegas[l];
            let dw = w.dot(&dz);
            g.slice_mut(ndarray::s![..m]).zip_mut_with(&dw, |a, &b| *a += b);
            g[bias_idx] += net.biases[l].dot(&dz);
            if l > 0 {
                let total = dz.sum();
                g.slice_mut(ndarray::s![q_off..q_off + m])
                    .scaled_add(total, &t.q[l - 1]);
                upstream = self.omegas[l].slice(ndarray::s![q_off..q_off + m]).mapv(|o| o * total);
            }
        }
        Ok(loss)
    }

    /// Mean soft-label cross-entropy over a batch.
    pub fn loss(&self, batch: &[(&MlpParams, &[f64], &LabelDistribution)]) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let mut total = 0.0;
        for (net, a, p) in batch {
            let t = self.trace(net, a)?;
            total += soft_cross_entropy(p.as_slice(), &t.probs);
        }
        Ok(total / batch.len() as f64)
    }
}

pub(crate) fn soft_cross_entropy(p: &[f64], p_hat: &[f64]) -> f64 {
    -p.iter()
        .zip(p_hat)
        .filter(|(&pc, _)| pc > 0.0)
        .map(|(pc, qc)| pc * qc.clamp(LOG_FLOOR, 1.0).ln())
        .sum::<f64>()
}

/// Forward pass of the proposed variant.
pub fn meta_forward_proposed(meta: &MetaParams, net: &MlpParams, accuracy: &[f64]) -> Result<LabelDistribution> {
    if meta.variant != MetaVariant::Proposed {
        return Err(Error::Config("expected a proposed-variant meta-classifier".into()));
    }
    meta.forward(net, accuracy)
}

/// Forward pass of the concatenation baseline.
pub fn meta_forward_baseline(meta: &MetaParams, net: &MlpParams) -> Result<LabelDistribution> {
    if meta.variant != MetaVariant::Baseline {
        return Err(Error::Config("expected a baseline meta-classifier".into()));
    }
    meta.forward(net, &[])
}
