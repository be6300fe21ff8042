//! Label distributions on the probability simplex, grid sampling schemes and
//! the attack's error metrics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const SUM_TOLERANCE: f64 = 1e-9;
const GRID_TOLERANCE: f64 = 1e-9;

/// A point on the probability simplex: per-class proportions summing to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct LabelDistribution(Vec<f64>);

impl LabelDistribution {
    pub fn new(p: Vec<f64>) -> Result<Self> {
        if p.is_empty() {
            return Err(Error::InvalidDistribution("no classes".into()));
        }
        if let Some(v) = p.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::InvalidDistribution(format!("entry {v} is not a probability")));
        }
        let sum: f64 = p.iter().sum();
        if (sum - 1.0).abs() > SUM_TOLERANCE {
            return Err(Error::InvalidDistribution(format!("entries sum to {sum}")));
        }
        Ok(LabelDistribution(p))
    }

    /// Proportions `counts[c] / total`, each computed with a single division.
    pub fn from_counts(counts: &[usize]) -> Result<Self> {
        let total: usize = counts.iter().sum();
        if total == 0 {
            return Err(Error::EmptyDataset);
        }
        Ok(LabelDistribution(
            counts.iter().map(|&c| c as f64 / total as f64).collect(),
        ))
    }

    pub fn uniform(classes: usize) -> Self {
        LabelDistribution(vec![1.0 / classes as f64; classes])
    }

    pub fn num_classes(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn min(&self) -> f64 {
        self.0.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Integer coordinates on the grid with `resolution` steps, if the point lies on it.
    pub fn grid_counts(&self, resolution: usize) -> Option<Vec<usize>> {
        let counts: Vec<usize> = self
            .0
            .iter()
            .map(|&v| {
                let k = v * resolution as f64;
                ((k - k.round()).abs() < 1e-6).then(|| k.round() as usize)
            })
            .collect::<Option<_>>()?;
        (counts.iter().sum::<usize>() == resolution).then_some(counts)
    }
}

impl TryFrom<Vec<f64>> for LabelDistribution {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        LabelDistribution::new(v)
    }
}

impl From<LabelDistribution> for Vec<f64> {
    fn from(p: LabelDistribution) -> Self {
        p.0
    }
}

impl std::ops::Index<usize> for LabelDistribution {
    type Output = f64;

    fn index(&self, c: usize) -> &f64 {
        &self.0[c]
    }
}

/// Number of grid steps per unit, `1 / step`, which must be an integer.
pub fn grid_resolution(step: f64) -> Result<usize> {
    if !(step > 0.0 && step <= 1.0) {
        return Err(Error::InvalidStep(step));
    }
    let n = (1.0 / step).round();
    if (n * step - 1.0).abs() > GRID_TOLERANCE {
        return Err(Error::InvalidStep(step));
    }
    Ok(n as usize)
}

/// All compositions of `total` into `parts` nonnegative integers, in lexicographic order.
pub fn compositions(parts: usize, total: usize) -> Vec<Vec<usize>> {
    fn fill(prefix: &mut Vec<usize>, parts: usize, left: usize, out: &mut Vec<Vec<usize>>) {
        if prefix.len() + 1 == parts {
            prefix.push(left);
            out.push(prefix.clone());
            prefix.pop();
            return;
        }
        for k in 0..=left {
            prefix.push(k);
            fill(prefix, parts, left - k, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    if parts > 0 {
        fill(&mut Vec::with_capacity(parts), parts, total, &mut out);
    }
    out
}

fn check_classes(classes: usize) -> Result<()> {
    if classes < 2 {
        return Err(Error::Config(format!("need at least two classes, got {classes}")));
    }
    Ok(())
}

fn grid_with_counts(classes: usize, step: f64) -> Result<Vec<(Vec<usize>, LabelDistribution)>> {
    check_classes(classes)?;
    let n = grid_resolution(step)?;
    Ok(compositions(classes, n)
        .into_iter()
        .map(|k| {
            let p = k.iter().map(|&ki| ki as f64 / n as f64).collect();
            (k, LabelDistribution(p))
        })
        .collect())
}

/// Every grid point `(k_1, ..., k_C) * step` with nonnegative integers summing to `1 / step`.
pub fn sample_uniform_grid(classes: usize, step: f64) -> Result<Vec<LabelDistribution>> {
    Ok(grid_with_counts(classes, step)?.into_iter().map(|(_, p)| p).collect())
}

/// Grid points on the one-dimensional faces of the simplex (at least `C - 2` zero entries).
pub fn sample_edges(classes: usize, step: f64) -> Result<Vec<LabelDistribution>> {
    Ok(grid_with_counts(classes, step)?
        .into_iter()
        .filter(|(k, _)| k.iter().filter(|&&v| v == 0).count() + 2 >= classes)
        .map(|(_, p)| p)
        .collect())
}

/// Grid points whose every coordinate is at least `tau`.
pub fn sample_region(classes: usize, step: f64, tau: f64) -> Result<Vec<LabelDistribution>> {
    check_classes(classes)?;
    if !(tau >= 0.0 && tau < 1.0 / classes as f64) {
        return Err(Error::Config(format!(
            "region bound {tau} must lie in [0, 1/{classes})"
        )));
    }
    let points: Vec<_> = grid_with_counts(classes, step)?
        .into_iter()
        .filter(|(_, p)| p.min() >= tau - GRID_TOLERANCE)
        .map(|(_, p)| p)
        .collect();
    if points.is_empty() {
        return Err(Error::Config(format!(
            "no grid points with step {step} have every coordinate >= {tau}"
        )));
    }
    Ok(points)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SchemeKind {
    UniformGrid,
    Edges,
    /// Interior points with every coordinate `>= tau`.
    Region {
        tau: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplingScheme {
    #[serde(flatten)]
    pub kind: SchemeKind,
    pub step: f64,
}

impl SamplingScheme {
    pub fn uniform(step: f64) -> Self {
        SamplingScheme {
            kind: SchemeKind::UniformGrid,
            step,
        }
    }

    pub fn points(&self, classes: usize) -> Result<Vec<LabelDistribution>> {
        match self.kind {
            SchemeKind::UniformGrid => sample_uniform_grid(classes, self.step),
            SchemeKind::Edges => sample_edges(classes, self.step),
            SchemeKind::Region { tau } => sample_region(classes, self.step, tau),
        }
    }

    /// Whether a point of the full grid belongs to this scheme.
    pub fn contains(&self, p: &LabelDistribution) -> bool {
        let classes = p.num_classes();
        let Ok(n) = grid_resolution(self.step) else {
            return false;
        };
        let Some(k) = p.grid_counts(n) else {
            return false;
        };
        match self.kind {
            SchemeKind::UniformGrid => true,
            SchemeKind::Edges => k.iter().filter(|&&v| v == 0).count() + 2 >= classes,
            SchemeKind::Region { tau } => p.min() >= tau - GRID_TOLERANCE,
        }
    }
}

fn check_lengths(p: &LabelDistribution, q: &LabelDistribution) -> Result<()> {
    if p.num_classes() != q.num_classes() {
        return Err(Error::DimensionMismatch {
            expected: p.num_classes(),
            actual: q.num_classes(),
        });
    }
    Ok(())
}

/// `KL(p || q)` in nats, with `0 * ln(0 / x) = 0`.
///
/// Returns `f64::INFINITY` when `q` has an exact zero where `p` does not.
pub fn kl_divergence(p: &LabelDistribution, q: &LabelDistribution) -> Result<f64> {
    check_lengths(p, q)?;
    let mut total = 0.0;
    for (&pc, &qc) in p.as_slice().iter().zip(q.as_slice()) {
        if pc == 0.0 {
            continue;
        }
        if qc == 0.0 {
            return Ok(f64::INFINITY);
        }
        total += pc * (pc / qc).ln();
    }
    // rounding can leave tiny negative values near p == q
    Ok(total.max(0.0))
}

/// Squared Euclidean distance between two distributions.
pub fn mse(p: &LabelDistribution, q: &LabelDistribution) -> Result<f64> {
    check_lengths(p, q)?;
    Ok(p.as_slice()
        .iter()
        .zip(q.as_slice())
        .map(|(a, b)| (a - b) * (a - b))
        .sum())
}

/// Shannon entropy in nats.
pub fn entropy(p: &LabelDistribution) -> f64 {
    -p.as_slice()
        .iter()
        .filter(|&&v| v > 0.0)
        .map(|&v| v * v.ln())
        .sum::<f64>()
}

/// Integer counts for `total * p` by largest remainder, ties to the lowest class index.
pub fn largest_remainder(p: &LabelDistribution, total: usize) -> Vec<usize> {
    let quotas: Vec<f64> = p
        .as_slice()
        .iter()
        .map(|&v| {
            let q = v * total as f64;
            // snap products like 0.29 * 100 = 28.999999999999996
            if (q - q.round()).abs() < 1e-9 {
                q.round()
            } else {
                q
            }
        })
        .collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..counts.len()).collect();
    // stable sort keeps lower indices first among equal remainders
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - quotas[a].floor();
        let rb = quotas[b] - quotas[b].floor();
        rb.partial_cmp(&ra).unwrap()
    });
    for &c in order.iter().take(total.saturating_sub(assigned)) {
        counts[c] += 1;
    }
    counts
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn dist(v: &[f64]) -> LabelDistribution {
        LabelDistribution::new(v.to_vec()).unwrap()
    }

    fn binomial(n: u64, k: u64) -> u64 {
        (1..=k).fold(1, |acc, i| acc * (n - k + i) / i)
    }

    /// Brute force: scan every integer tuple in [0, n]^C and keep those summing to n.
    fn brute_force_grid(classes: usize, n: usize) -> Vec<Vec<usize>> {
        let mut out = Vec::new();
        let mut k = vec![0usize; classes];
        loop {
            if k.iter().sum::<usize>() == n {
                out.push(k.clone());
            }
            let mut i = classes;
            loop {
                if i == 0 {
                    return out;
                }
                i -= 1;
                if k[i] < n {
                    k[i] += 1;
                    break;
                }
                k[i] = 0;
            }
        }
    }

    #[test]
    fn grid_counts_match_brute_force_and_binomial() {
        for (classes, step) in [(2, 0.01), (2, 0.5), (3, 0.05), (3, 0.25), (4, 0.2), (4, 0.1)] {
            let n = grid_resolution(step).unwrap();
            let grid = sample_uniform_grid(classes, step).unwrap();
            let brute = brute_force_grid(classes, n);
            assert_eq!(grid.len(), brute.len());
            assert_eq!(
                grid.len() as u64,
                binomial((n + classes - 1) as u64, (classes - 1) as u64)
            );
            // brute force enumerates in lexicographic order too
            for (p, k) in grid.iter().zip(&brute) {
                assert_eq!(p.grid_counts(n).unwrap(), *k);
            }
        }
        assert_eq!(sample_uniform_grid(2, 0.01).unwrap().len(), 101);
        assert_eq!(sample_uniform_grid(3, 0.05).unwrap().len(), 231);
    }

    #[test]
    fn binary_half_step_grid() {
        let grid = sample_uniform_grid(2, 0.5).unwrap();
        let raw: Vec<Vec<f64>> = grid.into_iter().map(Into::into).collect();
        assert_eq!(raw, vec![vec![0.0, 1.0], vec![0.5, 0.5], vec![1.0, 0.0]]);
    }

    #[test]
    fn grid_points_sum_to_one() {
        for p in sample_uniform_grid(4, 0.1).unwrap() {
            assert!((p.as_slice().iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn rejects_non_integral_steps() {
        assert!(matches!(grid_resolution(0.3), Err(Error::InvalidStep(_))));
        assert!(grid_resolution(0.0).is_err());
        assert!(grid_resolution(1.5).is_err());
        assert_eq!(grid_resolution(0.05).unwrap(), 20);
        assert_eq!(grid_resolution(1.0).unwrap(), 1);
    }

    #[test]
    fn edges_of_the_triangle() {
        let edges = sample_edges(3, 0.5).unwrap();
        assert_eq!(edges.len(), 6);
        assert_eq!(sample_edges(3, 1.0).unwrap().len(), 3);
        assert!(sample_edges(3, 0.05).unwrap().iter().all(|p| p.min() == 0.0));
        let full = sample_uniform_grid(4, 0.2).unwrap();
        for p in sample_edges(4, 0.2).unwrap() {
            assert!(full.contains(&p));
            assert!(p.as_slice().iter().filter(|&&v| v == 0.0).count() >= 2);
        }
    }

    #[test]
    fn region_filters() {
        assert_eq!(
            sample_region(3, 0.05, 0.0).unwrap(),
            sample_uniform_grid(3, 0.05).unwrap()
        );
        let r = sample_region(3, 0.25, 0.25).unwrap();
        assert_eq!(r.len(), 3);
        assert!(r.contains(&dist(&[0.25, 0.25, 0.5])));
        assert!(r.contains(&dist(&[0.5, 0.25, 0.25])));
        let r = sample_region(2, 0.1, 0.3).unwrap();
        assert_eq!(r.len(), 5);
        assert!(sample_region(3, 0.5, 0.3).is_err());
        assert!(sample_region(3, 0.05, 0.34).is_err());
    }

    #[test]
    fn scheme_membership_agrees_with_enumeration() {
        let full = sample_uniform_grid(3, 0.05).unwrap();
        for scheme in [
            SamplingScheme::uniform(0.05),
            SamplingScheme {
                kind: SchemeKind::Edges,
                step: 0.05,
            },
            SamplingScheme {
                kind: SchemeKind::Region { tau: 0.2 },
                step: 0.05,
            },
            SamplingScheme::uniform(0.1),
        ] {
            let chosen = scheme.points(3).unwrap();
            let filtered: Vec<_> = full.iter().filter(|p| scheme.contains(p)).cloned().collect();
            assert_eq!(chosen, filtered, "{scheme:?}");
        }
    }

    #[test]
    fn kl_values() {
        assert_eq!(kl_divergence(&dist(&[0.3, 0.7]), &dist(&[0.3, 0.7])).unwrap(), 0.0);
        let v = kl_divergence(&dist(&[0.75, 0.25]), &dist(&[0.5, 0.5])).unwrap();
        assert_abs_diff_eq!(v, 0.75 * 1.5f64.ln() + 0.25 * 0.5f64.ln(), epsilon = 1e-15);
        assert_abs_diff_eq!(v, 0.130812, epsilon = 1e-6);
        let v = kl_divergence(&dist(&[1.0, 0.0]), &dist(&[0.9, 0.1])).unwrap();
        assert_abs_diff_eq!(v, (1.0f64 / 0.9).ln(), epsilon = 1e-15);
        let inf = kl_divergence(&dist(&[0.5, 0.5]), &dist(&[1.0, 0.0])).unwrap();
        assert!(inf.is_infinite());
        assert!(kl_divergence(&dist(&[1.0, 0.0]), &dist(&[1.0, 0.0, 0.0])).is_err());
    }

    #[test]
    fn mse_values() {
        assert_eq!(mse(&dist(&[0.2, 0.8]), &dist(&[0.2, 0.8])).unwrap(), 0.0);
        assert_abs_diff_eq!(
            mse(&dist(&[0.6, 0.4]), &dist(&[0.5, 0.5])).unwrap(),
            0.02,
            epsilon = 1e-12
        );
        assert_eq!(mse(&dist(&[1.0, 0.0, 0.0]), &dist(&[0.0, 1.0, 0.0])).unwrap(), 2.0);
    }

    #[test]
    fn kl_is_nonnegative_on_random_pairs() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let mut draw = |c: usize| {
            let raw: Vec<f64> = (0..c).map(|_| rng.random::<f64>() + 1e-3).collect();
            let s: f64 = raw.iter().sum();
            LabelDistribution(raw.into_iter().map(|v| v / s).collect())
        };
        for i in 0..1000 {
            let c = 2 + i % 3;
            let p = draw(c);
            let q = draw(c);
            let d = kl_divergence(&p, &q).unwrap();
            assert!(d >= 0.0);
            if p != q {
                assert!(d > 1e-12);
            }
            assert!(kl_divergence(&p, &p).unwrap() <= 1e-12);
        }
    }

    #[test]
    fn largest_remainder_examples() {
        assert_eq!(largest_remainder(&dist(&[0.7, 0.3]), 10), vec![7, 3]);
        assert_eq!(largest_remainder(&dist(&[0.01, 0.99]), 4000), vec![40, 3960]);
        let third = 1.0 / 3.0;
        let p = LabelDistribution(vec![third, third, third]);
        assert_eq!(largest_remainder(&p, 10), vec![4, 3, 3]);
        assert_eq!(largest_remainder(&dist(&[0.29, 0.71]), 100), vec![29, 71]);
    }

    #[test]
    fn from_counts_and_validation() {
        assert_eq!(
            LabelDistribution::from_counts(&[5, 3, 2]).unwrap(),
            dist(&[0.5, 0.3, 0.2])
        );
        assert!(LabelDistribution::from_counts(&[0, 0]).is_err());
        assert!(LabelDistribution::new(vec![0.5, 0.6]).is_err());
        assert!(LabelDistribution::new(vec![-0.1, 1.1]).is_err());
        let json = serde_json::to_string(&dist(&[0.25, 0.75])).unwrap();
        assert_eq!(json, "[0.25,0.75]");
        assert!(serde_json::from_str::<LabelDistribution>("[0.2,0.2]").is_err());
    }

    proptest! {
        #[test]
        fn largest_remainder_sums_to_total(k in proptest::collection::vec(0usize..50, 2..5), total in 1usize..5000) {
            prop_assume!(k.iter().sum::<usize>() > 0);
            let p = LabelDistribution::from_counts(&k).unwrap();
            let counts = largest_remainder(&p, total);
            prop_assert_eq!(counts.iter().sum::<usize>(), total);
            for (c, &v) in counts.iter().enumerate() {
                prop_assert!((v as f64 - p[c] * total as f64).abs() < 1.0 + 1e-9);
            }
        }
    }
}
