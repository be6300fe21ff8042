use ndarray::{Array1, Array2};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::ArchSpec;
use crate::error::{Error, Result};
use crate::rng;

/// Weights and biases of a fully connected network.
///
/// `weights[l]` has shape `(fan_in, fan_out)` so that column `j` holds the
/// incoming connections of neuron `j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
}

impl MlpParams {
    pub fn zeros(arch: &ArchSpec) -> Self {
        let (weights, biases) = arch
            .layer_shapes()
            .map(|(i, o)| (Array2::zeros((i, o)), Array1::zeros(o)))
            .unzip();
        MlpParams { weights, biases }
    }

    /// Uniform weights in `[-s, s]` with `s = init_scale / sqrt(fan_in)`, zero biases.
    pub fn init(arch: &ArchSpec, seed: u64, init_scale: f64) -> Self {
        let mut rng = rng::seeded(seed);
        let mut params = Self::zeros(arch);
        for w in &mut params.weights {
            let s = init_scale / (w.nrows() as f64).sqrt();
            w.mapv_inplace(|_| rng.random_range(-s..=s));
        }
        params
    }

    pub fn num_layers(&self) -> usize {
        self.weights.len()
    }

    pub fn num_params(&self) -> usize {
        self.weights.iter().map(|w| w.len()).sum::<usize>() + self.biases.iter().map(|b| b.len()).sum::<usize>()
    }

    pub fn conforms_to(&self, arch: &ArchSpec) -> bool {
        self.weights.len() == arch.num_layers()
            && self.biases.len() == arch.num_layers()
            && arch
                .layer_shapes()
                .zip(self.weights.iter().zip(&self.biases))
                .all(|((i, o), (w, b))| w.dim() == (i, o) && b.len() == o)
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().all(|w| w.iter().all(|v| v.is_finite()))
            && self.biases.iter().all(|b| b.iter().all(|v| v.is_finite()))
    }

    /// Flattens as all weight matrices (each row by row) followed by all bias vectors.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for w in &self.weights {
            out.extend(w.iter().copied());
        }
        for b in &self.biases {
            out.extend(b.iter().copied());
        }
        out
    }

    pub fn unflatten(theta: &[f64], arch: &ArchSpec) -> Result<Self> {
        let expected = arch.num_params();
        if theta.len() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                actual: theta.len(),
            });
        }
        let mut params = Self::zeros(arch);
        let mut rest = theta;
        for w in &mut params.weights {
            let (head, tail) = rest.split_at(w.len());
            w.iter_mut().zip(head).for_each(|(dst, &src)| *dst = src);
            rest = tail;
        }
        for b in &mut params.biases {
            let (head, tail) = rest.split_at(b.len());
            b.iter_mut().zip(head).for_each(|(dst, &src)| *dst = src);
            rest = tail;
        }
        Ok(params)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Activation, OutputActivation};
    use ndarray::array;
    use proptest::prelude::*;

    fn arch(d: usize, layers: Vec<usize>) -> ArchSpec {
        ArchSpec::new(d, layers, Activation::Elu, OutputActivation::Softmax).unwrap()
    }

    #[test]
    fn init_has_zero_biases_and_is_deterministic() {
        let a = arch(4, vec![3, 2]);
        let p = MlpParams::init(&a, 11, 1.0);
        assert!(p.biases.iter().all(|b| b.iter().all(|&v| v == 0.0)));
        assert_eq!(p, MlpParams::init(&a, 11, 1.0));
        assert_ne!(p, MlpParams::init(&a, 12, 1.0));
        let bound = 1.0 / 2.0;
        assert!(p.weights[0].iter().all(|v| v.abs() <= bound));
    }

    #[test]
    fn flatten_order_is_weights_row_major_then_biases() {
        let params = MlpParams {
            weights: vec![array![[1.0, 2.0], [3.0, 4.0]]],
            biases: vec![array![5.0, 6.0]],
        };
        assert_eq!(params.flatten(), vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let a = arch(2, vec![2]);
        assert_eq!(MlpParams::unflatten(&params.flatten(), &a).unwrap(), params);
    }

    #[test]
    fn flatten_length_matches_count() {
        let a = arch(784, vec![128, 32, 16, 2]);
        assert_eq!(MlpParams::zeros(&a).flatten().len(), 105_170);
    }

    #[test]
    fn unflatten_rejects_wrong_length() {
        let a = arch(2, vec![2]);
        assert!(matches!(
            MlpParams::unflatten(&[0.0; 5], &a),
            Err(Error::DimensionMismatch { expected: 6, actual: 5 })
        ));
    }

    proptest! {
        #[test]
        fn flatten_round_trip_is_bit_exact(seed in any::<u64>(), scale in 0.01f64..10.0) {
            let a = arch(5, vec![4, 3, 2]);
            let p = MlpParams::init(&a, seed, scale);
            let back = MlpParams::unflatten(&p.flatten(), &a).unwrap();
            prop_assert!(back.flatten().iter().zip(p.flatten()).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
    }
}
