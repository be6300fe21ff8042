//! Labelled datasets: construction, label distributions, resampling and loaders.

mod idx;
mod synth;
mod tabular;

use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::{index, SliceRandom};
use rand::Rng as _;

use crate::error::{Error, Result};
use crate::rng;
use crate::simplex::{largest_remainder, LabelDistribution};

pub use idx::load_idx;
pub use synth::{synth_gaussians, GaussianClass};
pub use tabular::{load_tabular, CategoricalColumn, LabelRule, TabularSchema};

/// Feature matrix with one class label per row.
///
/// Labels are stored as class indices, which is the one-hot encoding with
/// the single nonzero position made explicit. `ids` tracks which row of the
/// originally loaded data each row came from, so that disjointness between
/// derived sets can be checked.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    features: Array2<f64>,
    labels: Vec<usize>,
    num_classes: usize,
    ids: Vec<usize>,
}

impl LabeledDataset {
    pub fn new(features: Array2<f64>, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        let ids = (0..labels.len()).collect();
        Self::with_ids(features, labels, num_classes, ids)
    }

    pub fn with_ids(features: Array2<f64>, labels: Vec<usize>, num_classes: usize, ids: Vec<usize>) -> Result<Self> {
        if features.nrows() != labels.len() || ids.len() != labels.len() {
            return Err(Error::DimensionMismatch {
                expected: features.nrows(),
                actual: labels.len(),
            });
        }
        if num_classes == 0 {
            return Err(Error::Config("a dataset needs at least one class".into()));
        }
        if let Some(&c) = labels.iter().find(|&&c| c >= num_classes) {
            return Err(Error::DimensionMismatch {
                expected: num_classes,
                actual: c + 1,
            });
        }
        Ok(LabeledDataset {
            features,
            labels,
            num_classes,
            ids,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn ids(&self) -> &[usize] {
        &self.ids
    }

    pub fn one_hot(&self) -> Array2<f64> {
        let mut out = Array2::zeros((self.len(), self.num_classes));
        for (i, &c) in self.labels.iter().enumerate() {
            out[[i, c]] = 1.0;
        }
        out
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &c in &self.labels {
            counts[c] += 1;
        }
        counts
    }

    /// Row positions holding class `c`, in dataset order.
    pub fn rows_of_class(&self, c: usize) -> Vec<usize> {
        self.labels
            .iter()
            .enumerate()
            .filter_map(|(i, &l)| (l == c).then_some(i))
            .collect()
    }

    /// New dataset made of the given rows; rows may repeat.
    pub fn select(&self, rows: &[usize]) -> LabeledDataset {
        LabeledDataset {
            features: self.features.select(Axis(0), rows),
            labels: rows.iter().map(|&i| self.labels[i]).collect(),
            num_classes: self.num_classes,
            ids: rows.iter().map(|&i| self.ids[i]).collect(),
        }
    }
}

/// Per-class proportions `N_c / N`.
pub fn compute_label_distribution(dataset: &LabeledDataset) -> Result<LabelDistribution> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    LabelDistribution::from_counts(&dataset.class_counts())
}

/// Draws `n` rows from `pool` without replacement so that the class counts
/// are the largest-remainder rounding of `n * p`.
pub fn resample_to_distribution(
    pool: &LabeledDataset,
    p: &LabelDistribution,
    n: usize,
    seed: u64,
) -> Result<LabeledDataset> {
    if p.num_classes() != pool.num_classes() {
        return Err(Error::DimensionMismatch {
            expected: pool.num_classes(),
            actual: p.num_classes(),
        });
    }
    let counts = largest_remainder(p, n);
    let mut rng = rng::seeded(seed);
    let mut rows = Vec::with_capacity(n);
    for (c, &needed) in counts.iter().enumerate() {
        let available = pool.rows_of_class(c);
        if needed > available.len() {
            return Err(Error::InsufficientSamples {
                class: c,
                needed,
                available: available.len(),
            });
        }
        rows.extend(
            index::sample(&mut rng, available.len(), needed)
                .into_iter()
                .map(|i| available[i]),
        );
    }
    rows.shuffle(&mut rng);
    Ok(pool.select(&rows))
}

/// Duplicates uniformly chosen minority rows until every class matches the majority count.
pub fn random_oversample(dataset: &LabeledDataset, seed: u64) -> Result<LabeledDataset> {
    let counts = dataset.class_counts();
    if let Some(c) = counts.iter().position(|&n| n == 0) {
        return Err(Error::EmptyClass(c));
    }
    let target = *counts.iter().max().unwrap();
    let mut rng = rng::seeded(seed);
    let mut rows: Vec<usize> = (0..dataset.len()).collect();
    for (c, &count) in counts.iter().enumerate() {
        let members = dataset.rows_of_class(c);
        rows.extend((count..target).map(|_| members[rng.random_range(0..members.len())]));
    }
    Ok(dataset.select(&rows))
}

/// Auxiliary data held by the attacker: exactly `per_class` rows of every class.
#[derive(Debug, Clone, PartialEq)]
pub struct AuxDataset {
    data: LabeledDataset,
    per_class: usize,
}

impl AuxDataset {
    /// Groups `data` by class; every class must have exactly `per_class` rows.
    pub fn from_dataset(data: &LabeledDataset) -> Result<Self> {
        let counts = data.class_counts();
        let per_class = counts[0];
        if counts.iter().any(|&n| n != per_class) {
            return Err(Error::Config(format!(
                "auxiliary data must be balanced, got class counts {counts:?}"
            )));
        }
        let rows: Vec<usize> = (0..data.num_classes()).flat_map(|c| data.rows_of_class(c)).collect();
        Ok(AuxDataset {
            data: data.select(&rows),
            per_class,
        })
    }

    pub fn per_class(&self) -> usize {
        self.per_class
    }

    pub fn num_classes(&self) -> usize {
        self.data.num_classes()
    }

    pub fn dim(&self) -> usize {
        self.data.dim()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Feature rows of class `c`.
    pub fn block(&self, c: usize) -> ArrayView2<'_, f64> {
        let start = c * self.per_class;
        self.data.features.slice(ndarray::s![start..start + self.per_class, ..])
    }

    pub fn ids(&self) -> &[usize] {
        self.data.ids()
    }

    pub fn as_dataset(&self) -> &LabeledDataset {
        &self.data
    }
}

/// Withdraws `per_class` random rows of every class from `pool`.
pub fn split_aux(pool: &LabeledDataset, per_class: usize, seed: u64) -> Result<(AuxDataset, LabeledDataset)> {
    let mut rng = rng::seeded(seed);
    let mut taken = vec![false; pool.len()];
    let mut aux_rows = Vec::with_capacity(per_class * pool.num_classes());
    for c in 0..pool.num_classes() {
        let members = pool.rows_of_class(c);
        if members.len() < per_class {
            return Err(Error::InsufficientSamples {
                class: c,
                needed: per_class,
                available: members.len(),
            });
        }
        let mut chosen: Vec<usize> = index::sample(&mut rng, members.len(), per_class)
            .into_iter()
            .map(|i| members[i])
            .collect();
        chosen.sort_unstable();
        for &r in &chosen {
            taken[r] = true;
        }
        aux_rows.extend(chosen);
    }
    let rest: Vec<usize> = (0..pool.len()).filter(|&i| !taken[i]).collect();
    let aux = AuxDataset {
        data: pool.select(&aux_rows),
        per_class,
    };
    Ok((aux, pool.select(&rest)))
}
