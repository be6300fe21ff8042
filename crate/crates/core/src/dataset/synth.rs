use nalgebra::{DMatrix, DVector};
use ndarray::Array2;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::LabeledDataset;
use crate::error::{Error, Result};
use crate::rng;

/// Class-conditional Gaussian. A missing covariance means the identity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianClass {
    pub mean: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub covariance: Option<Vec<Vec<f64>>>,
}

impl GaussianClass {
    pub fn isotropic(mean: Vec<f64>) -> Self {
        GaussianClass { mean, covariance: None }
    }
}

/// Draws `counts[c]` points from class `c`'s Gaussian, grouped by class.
pub fn synth_gaussians(classes: &[GaussianClass], counts: &[usize], seed: u64) -> Result<LabeledDataset> {
    if classes.len() != counts.len() {
        return Err(Error::DimensionMismatch {
            expected: classes.len(),
            actual: counts.len(),
        });
    }
    let dim = classes.first().map(|c| c.mean.len()).unwrap_or(0);
    if dim == 0 {
        return Err(Error::Config("gaussian classes need a nonempty mean".into()));
    }
    let factors = classes
        .iter()
        .enumerate()
        .map(|(c, g)| {
            if g.mean.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    actual: g.mean.len(),
                });
            }
            let cov = match &g.covariance {
                None => DMatrix::identity(dim, dim),
                Some(rows) => {
                    if rows.len() != dim || rows.iter().any(|r| r.len() != dim) {
                        return Err(Error::DimensionMismatch {
                            expected: dim,
                            actual: rows.len(),
                        });
                    }
                    DMatrix::from_fn(dim, dim, |i, j| rows[i][j])
                }
            };
            if (&cov - cov.transpose()).amax() > 1e-12 {
                return Err(Error::NotPositiveDefinite(c));
            }
            cov.cholesky().map(|ch| ch.l()).ok_or(Error::NotPositiveDefinite(c))
        })
        .collect::<Result<Vec<_>>>()?;

    let total: usize = counts.iter().sum();
    let mut rng = rng::seeded(seed);
    let mut features = Array2::zeros((total, dim));
    let mut labels = Vec::with_capacity(total);
    let mut row = 0;
    for (c, (&count, l)) in counts.iter().zip(&factors).enumerate() {
        let mean = DVector::from_column_slice(&classes[c].mean);
        for _ in 0..count {
            let z = DVector::from_fn(dim, |_, _| StandardNormal.sample(&mut rng));
            let x = &mean + l * z;
            features
                .row_mut(row)
                .iter_mut()
                .zip(x.iter())
                .for_each(|(d, s)| *d = *s);
            labels.push(c);
            row += 1;
        }
    }
    LabeledDataset::new(features, labels, classes.len())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::compute_label_distribution;
    use crate::simplex::LabelDistribution;

    fn two_gaussians() -> Vec<GaussianClass> {
        vec![
            GaussianClass::isotropic(vec![2.0, 2.0]),
            GaussianClass::isotropic(vec![-2.0, -2.0]),
        ]
    }

    #[test]
    fn distribution_follows_counts() {
        let ds = synth_gaussians(&two_gaussians(), &[100, 100], 1).unwrap();
        assert_eq!(compute_label_distribution(&ds).unwrap().as_slice(), &[0.5, 0.5]);
        let ds = synth_gaussians(&two_gaussians(), &[70, 30], 1).unwrap();
        assert_eq!(
            compute_label_distribution(&ds).unwrap(),
            LabelDistribution::new(vec![0.7, 0.3]).unwrap()
        );
    }

    #[test]
    fn deterministic_in_seed() {
        let a = synth_gaussians(&two_gaussians(), &[50, 50], 42).unwrap();
        let b = synth_gaussians(&two_gaussians(), &[50, 50], 42).unwrap();
        assert_eq!(a.features(), b.features());
        let c = synth_gaussians(&two_gaussians(), &[50, 50], 43).unwrap();
        assert_ne!(a.features(), c.features());
    }

    #[test]
    fn sample_moments_are_close() {
        let classes = vec![GaussianClass {
            mean: vec![1.0, -1.0],
            covariance: Some(vec![vec![2.0, 0.5], vec![0.5, 1.0]]),
        }];
        let ds = synth_gaussians(&classes, &[20_000], 7).unwrap();
        let x = ds.features();
        let n = x.nrows() as f64;
        let m0 = x.column(0).sum() / n;
        let m1 = x.column(1).sum() / n;
        let cov01 = x.rows().into_iter().map(|r| (r[0] - m0) * (r[1] - m1)).sum::<f64>() / n;
        assert!((m0 - 1.0).abs() < 0.05 && (m1 + 1.0).abs() < 0.05);
        assert!((cov01 - 0.5).abs() < 0.05);
    }

    #[test]
    fn rejects_indefinite_covariance() {
        let classes = vec![GaussianClass {
            mean: vec![0.0, 0.0],
            covariance: Some(vec![vec![1.0, 2.0], vec![2.0, 1.0]]),
        }];
        assert!(matches!(
            synth_gaussians(&classes, &[10], 0),
            Err(Error::NotPositiveDefinite(0))
        ));
    }
}
