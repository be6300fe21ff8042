//! Shadow classifiers: one trained network per (grid point, replica), with
//! its flattened parameters, auxiliary accuracy vector and true label
//! distribution, persisted as line-delimited JSON.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::{random_oversample, resample_to_distribution, AuxDataset, LabeledDataset};
use crate::error::{Error, Result};
use crate::nn::{predict_batch, train_classifier, ArchSpec, MlpParams, TrainConfig};
use crate::par::{self, Parallelism};
use crate::rng::derive_seed;
use crate::simplex::{largest_remainder, LabelDistribution, SamplingScheme};

pub const RECORD_FORMAT: &str = "labelinfer-shadow-records";
pub const RECORD_VERSION: u32 = 1;

/// One training example for the meta-classifier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShadowRecord {
    /// Label distribution of the shadow training set (before any oversampling).
    pub p: LabelDistribution,
    /// Per-class accuracy on the auxiliary data.
    pub a: Vec<f64>,
    pub theta: Vec<f64>,
    pub seed: u64,
    pub point: usize,
    pub replica: usize,
    pub arch: ArchSpec,
}

impl ShadowRecord {
    pub fn validate(&self) -> Result<()> {
        let expected = self.arch.num_params();
        if self.theta.len() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                actual: self.theta.len(),
            });
        }
        if self.a.len() != self.arch.num_classes() || self.p.num_classes() != self.arch.num_classes() {
            return Err(Error::DimensionMismatch {
                expected: self.arch.num_classes(),
                actual: self.a.len(),
            });
        }
        if self.a.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::InvalidDistribution("accuracy entries must lie in [0, 1]".into()));
        }
        Ok(())
    }

    pub fn params(&self) -> Result<MlpParams> {
        MlpParams::unflatten(&self.theta, &self.arch)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShadowPlan {
    pub scheme: SamplingScheme,
    pub replicas: usize,
    /// Replicas `0..train_replicas` of every point form the training split.
    pub train_replicas: usize,
    /// Rows per shadow training set.
    pub samples_per_set: usize,
    pub base_seed: u64,
    /// Train shadows on randomly oversampled sets while keeping the original `p` as label.
    #[serde(default)]
    pub oversample: bool,
}

impl ShadowPlan {
    pub fn validate(&self) -> Result<()> {
        if self.replicas == 0 {
            return Err(Error::Config("replicas must be positive".into()));
        }
        if self.train_replicas > self.replicas {
            return Err(Error::Config(format!(
                "train_replicas {} exceeds replicas {}",
                self.train_replicas, self.replicas
            )));
        }
        if self.samples_per_set == 0 {
            return Err(Error::Config("samples_per_set must be positive".into()));
        }
        Ok(())
    }

    /// Grid points the plan trains shadows for. Oversampling needs every
    /// class present, so vertices and faces are dropped in that mode.
    pub fn points(&self, classes: usize) -> Result<Vec<LabelDistribution>> {
        let mut points = self.scheme.points(classes)?;
        if self.oversample {
            points.retain(|p| largest_remainder(p, self.samples_per_set).iter().all(|&n| n > 0));
        }
        Ok(points)
    }

    pub fn is_train(&self, record: &ShadowRecord) -> bool {
        record.replica < self.train_replicas
    }

    /// Seed from which everything about record `(point, replica)` is derived.
    pub fn record_seed(&self, point: usize, replica: usize) -> u64 {
        derive_seed(self.base_seed, &[point as u64, replica as u64])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedTraining {
    pub point: usize,
    pub replica: usize,
    pub p: LabelDistribution,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShadowRun {
    pub records: Vec<ShadowRecord>,
    pub skipped: Vec<SkippedTraining>,
}

/// Fraction of auxiliary samples of each class `c` whose predicted
/// probability for `c` is within `epsilon` of one.
pub fn compute_accuracy_vector(
    params: &MlpParams,
    arch: &ArchSpec,
    aux: &AuxDataset,
    epsilon: f64,
) -> Result<Vec<f64>> {
    if !(epsilon > 0.0 && epsilon <= 1.0) {
        return Err(Error::Config(format!("epsilon {epsilon} must lie in (0, 1]")));
    }
    if aux.num_classes() != arch.num_classes() {
        return Err(Error::DimensionMismatch {
            expected: arch.num_classes(),
            actual: aux.num_classes(),
        });
    }
    if aux.per_class() == 0 {
        return Err(Error::EmptyClass(0));
    }
    (0..aux.num_classes())
        .map(|c| {
            let probs = predict_batch(params, arch, aux.block(c))?;
            let hits = probs.column(c).iter().filter(|&&s| (1.0 - s).abs() < epsilon).count();
            Ok(hits as f64 / aux.per_class() as f64)
        })
        .collect()
}

enum Outcome {
    Record(ShadowRecord),
    Skipped(SkippedTraining),
}

/// Builds and trains one shadow set.
pub fn train_shadow(
    pool: &LabeledDataset,
    arch: &ArchSpec,
    train_config: &TrainConfig,
    plan: &ShadowPlan,
    point: usize,
    replica: usize,
    p: &LabelDistribution,
) -> Result<(LabeledDataset, Result<MlpParams>)> {
    let seed = plan.record_seed(point, replica);
    let data = resample_to_distribution(pool, p, plan.samples_per_set, derive_seed(seed, &[0])).map_err(|e| {
        Error::PoolExhausted {
            point: p.as_slice().to_vec(),
            source: Box::new(e),
        }
    })?;
    let data = if plan.oversample {
        random_oversample(&data, derive_seed(seed, &[2]))?
    } else {
        data
    };
    let config = TrainConfig {
        seed: derive_seed(seed, &[1]),
        ..train_config.clone()
    };
    let trained = train_classifier(&data, arch, &config);
    Ok((data, trained))
}

pub fn generate_shadow_records(
    pool: &LabeledDataset,
    aux: &AuxDataset,
    arch: &ArchSpec,
    train_config: &TrainConfig,
    plan: &ShadowPlan,
    epsilon: f64,
) -> Result<ShadowRun> {
    generate_shadow_records_with(pool, aux, arch, train_config, plan, epsilon, Parallelism::default())
}

/// Trains a shadow classifier for every scheme point and replica.
///
/// Each `(point, replica)` pair draws from its own derived seed, so results
/// do not depend on scheduling and come back ordered by `(point, replica)`.
/// Trainings that fail numerically are skipped and reported, not retried.
pub fn generate_shadow_records_with(
    pool: &LabeledDataset,
    aux: &AuxDataset,
    arch: &ArchSpec,
    train_config: &TrainConfig,
    plan: &ShadowPlan,
    epsilon: f64,
    mode: Parallelism,
) -> Result<ShadowRun> {
    plan.validate()?;
    arch.validate()?;
    train_config.validate()?;
    if pool.num_classes() != arch.num_classes() {
        return Err(Error::DimensionMismatch {
            expected: arch.num_classes(),
            actual: pool.num_classes(),
        });
    }
    let points = plan.points(arch.num_classes())?;
    let jobs: Vec<(usize, usize)> = (0..points.len())
        .flat_map(|k| (0..plan.replicas).map(move |r| (k, r)))
        .collect();

    let outcomes = par::map(&jobs, mode, |&(k, r)| -> Result<Outcome> {
        let p = &points[k];
        let (data, trained) = train_shadow(pool, arch, train_config, plan, k, r, p)?;
        let params = match trained {
            Ok(params) => params,
            Err(Error::Numeric(reason)) => {
                log::warn!("shadow ({k}, {r}) at p = {:?} skipped: {reason}", p.as_slice());
                return Ok(Outcome::Skipped(SkippedTraining {
                    point: k,
                    replica: r,
                    p: p.clone(),
                    reason,
                }));
            }
            Err(e) => return Err(e),
        };
        let a = compute_accuracy_vector(&params, arch, aux, epsilon)?;
        let true_p = if plan.oversample {
            LabelDistribution::from_counts(&largest_remainder(p, plan.samples_per_set))?
        } else {
            crate::dataset::compute_label_distribution(&data)?
        };
        Ok(Outcome::Record(ShadowRecord {
            p: true_p,
            a,
            theta: params.flatten(),
            seed: plan.record_seed(k, r),
            point: k,
            replica: r,
            arch: arch.clone(),
        }))
    });

    let mut run = ShadowRun {
        records: Vec::with_capacity(jobs.len()),
        skipped: Vec::new(),
    };
    for outcome in outcomes {
        match outcome? {
            Outcome::Record(r) => run.records.push(r),
            Outcome::Skipped(s) => run.skipped.push(s),
        }
    }
    Ok(run)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    plan: Option<ShadowPlan>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecordFile {
    pub plan: Option<ShadowPlan>,
    pub records: Vec<ShadowRecord>,
}

/// Writes a header line followed by one JSON record per line.
pub fn save_records(path: impl AsRef<Path>, records: &[ShadowRecord], plan: Option<&ShadowPlan>) -> Result<()> {
    let path = path.as_ref();
    let io = |e| Error::io(path, e);
    let mut out = BufWriter::new(File::create(path).map_err(io)?);
    let header = Header {
        format: RECORD_FORMAT.into(),
        version: RECORD_VERSION,
        plan: plan.cloned(),
    };
    writeln!(out, "{}", to_line(&header)).map_err(io)?;
    for r in records {
        writeln!(out, "{}", to_line(r)).map_err(io)?;
    }
    out.flush().map_err(io)
}

fn to_line<T: Serialize>(value: &T) -> String {
    serde_json::to_string(value).expect("records serialize to JSON")
}

/// Reads a record file, optionally checking every record against `expected_arch`.
pub fn load_records(path: impl AsRef<Path>, expected_arch: Option<&ArchSpec>) -> Result<RecordFile> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let parse_err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut lines = BufReader::new(file).lines().enumerate();
    let header: Header = match lines.next() {
        Some((_, line)) => {
            let line = line.map_err(|e| Error::io(path, e))?;
            serde_json::from_str(&line).map_err(|e| parse_err(1, format!("bad header: {e}")))?
        }
        None => return Err(parse_err(1, "missing header".into())),
    };
    if header.format != RECORD_FORMAT || header.version != RECORD_VERSION {
        return Err(parse_err(
            1,
            format!("unsupported format {} v{}", header.format, header.version),
        ));
    }
    let mut records = Vec::new();
    for (i, line) in lines {
        let line_no = i + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: ShadowRecord = serde_json::from_str(&line).map_err(|e| parse_err(line_no, e.to_string()))?;
        record.validate().map_err(|e| parse_err(line_no, e.to_string()))?;
        if let Some(arch) = expected_arch {
            if &record.arch != arch {
                return Err(Error::ArchMismatch {
                    expected: arch.fingerprint(),
                    found: record.arch.fingerprint(),
                });
            }
        }
        records.push(record);
    }
    Ok(RecordFile {
        plan: header.plan,
        records,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{split_aux, synth_gaussians, GaussianClass};
    use crate::nn::{Activation, OutputActivation};
    use ndarray::array;

    fn arch() -> ArchSpec {
        ArchSpec::new(2, vec![4, 2], Activation::Relu, OutputActivation::Softmax).unwrap()
    }

    fn pool() -> LabeledDataset {
        let classes = [
            GaussianClass::isotropic(vec![2.0, 2.0]),
            GaussianClass::isotropic(vec![-2.0, -2.0]),
        ];
        synth_gaussians(&classes, &[400, 400], 1).unwrap()
    }

    fn plan(step: f64, replicas: usize) -> ShadowPlan {
        ShadowPlan {
            scheme: SamplingScheme::uniform(step),
            replicas,
            train_replicas: replicas,
            samples_per_set: 60,
            base_seed: 5,
            oversample: false,
        }
    }

    fn quick() -> TrainConfig {
        TrainConfig {
            epochs: 3,
            batch_size: 16,
            learning_rate: 0.05,
            ..TrainConfig::default()
        }
    }

    /// Aux set from explicit rows; one feature, whose value is the score the
    /// stub network below assigns to class 0.
    fn aux_from(rows: &[(f64, usize)]) -> AuxDataset {
        let x = ndarray::Array2::from_shape_fn((rows.len(), 1), |(i, _)| rows[i].0);
        let y = rows.iter().map(|r| r.1).collect();
        AuxDataset::from_dataset(&LabeledDataset::new(x, y, 2).unwrap()).unwrap()
    }

    /// One-layer net whose class-0 probability equals the input, for inputs in (0, 1).
    fn identity_net() -> (ArchSpec, MlpParams) {
        let arch = ArchSpec::new(1, vec![1], Activation::Relu, OutputActivation::Sigmoid).unwrap();
        (
            arch,
            MlpParams {
                weights: vec![array![[1.0]]],
                biases: vec![array![0.0]],
            },
        )
    }

    fn logit(s: f64) -> f64 {
        (s / (1.0 - s)).ln()
    }

    #[test]
    fn accuracy_counts_scores_within_epsilon() {
        let (arch, params) = identity_net();
        let rows: Vec<(f64, usize)> = [0.9, 0.6, 0.4, 0.2]
            .iter()
            .map(|&s| (logit(s), 0))
            .chain([0.1, 0.1, 0.1, 0.1].iter().map(|&s| (logit(s), 1)))
            .collect();
        let a = compute_accuracy_vector(&params, &arch, &aux_from(&rows), 0.5).unwrap();
        assert_eq!(a[0], 0.5);
        assert_eq!(a[1], 1.0);
    }

    #[test]
    fn constant_classifier_accuracy() {
        // zero weights with a huge negative bias: always (0, 1)
        let (arch, mut params) = identity_net();
        params.weights[0][[0, 0]] = 0.0;
        params.biases[0][0] = -800.0;
        let aux = aux_from(&[(0.0, 0), (1.0, 0), (0.0, 1), (1.0, 1)]);
        assert_eq!(
            compute_accuracy_vector(&params, &arch, &aux, 0.5).unwrap(),
            vec![0.0, 1.0]
        );
        params.biases[0][0] = 800.0;
        assert_eq!(
            compute_accuracy_vector(&params, &arch, &aux, 0.5).unwrap(),
            vec![1.0, 0.0]
        );
        assert!(compute_accuracy_vector(&params, &arch, &aux, 0.0).is_err());
        assert!(compute_accuracy_vector(&params, &arch, &aux_from(&[]), 0.5).is_err());
    }

    #[test]
    fn generates_one_record_per_point_and_replica() {
        let (aux, rest) = split_aux(&pool(), 20, 0).unwrap();
        let run = generate_shadow_records(&rest, &aux, &arch(), &quick(), &plan(0.5, 1), 0.5).unwrap();
        assert_eq!(run.records.len(), 3);
        assert!(run.skipped.is_empty());
        let ps: Vec<f64> = run.records.iter().map(|r| r.p[0]).collect();
        assert_eq!(ps, vec![0.0, 0.5, 1.0]);
    }

    #[test]
    fn records_are_reproducible_and_order_independent() {
        let (aux, rest) = split_aux(&pool(), 20, 0).unwrap();
        let plan = plan(0.25, 2);
        let a =
            generate_shadow_records_with(&rest, &aux, &arch(), &quick(), &plan, 0.5, Parallelism::Parallel).unwrap();
        let b =
            generate_shadow_records_with(&rest, &aux, &arch(), &quick(), &plan, 0.5, Parallelism::Sequential).unwrap();
        assert_eq!(a, b);
        // regenerate a single pair directly and compare
        let rec = &a.records[5];
        let p = &plan.points(2).unwrap()[rec.point];
        let (data, params) = train_shadow(&rest, &arch(), &quick(), &plan, rec.point, rec.replica, p).unwrap();
        assert_eq!(params.unwrap().flatten(), rec.theta);
        assert_eq!(crate::dataset::compute_label_distribution(&data).unwrap(), rec.p);
        let recomputed = compute_accuracy_vector(&rec.params().unwrap(), &arch(), &aux, 0.5).unwrap();
        assert_eq!(recomputed, rec.a);
    }

    #[test]
    fn pool_exhaustion_names_the_point() {
        let (aux, rest) = split_aux(&pool(), 20, 0).unwrap();
        let mut plan = plan(0.5, 1);
        plan.samples_per_set = 500;
        let err = generate_shadow_records(&rest, &aux, &arch(), &quick(), &plan, 0.5).unwrap_err();
        match err {
            Error::PoolExhausted { point, .. } => assert_eq!(point, vec![0.0, 1.0]),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn diverging_trainings_are_skipped() {
        let (aux, rest) = split_aux(&pool(), 20, 0).unwrap();
        let wild = TrainConfig {
            learning_rate: 1e300,
            optimizer: crate::nn::OptimizerKind::Sgd,
            ..quick()
        };
        let run = generate_shadow_records(&rest, &aux, &arch(), &wild, &plan(0.5, 1), 0.5).unwrap();
        assert_eq!(run.records.len() + run.skipped.len(), 3);
        assert!(!run.skipped.is_empty());
    }

    #[test]
    fn oversampled_plans_keep_original_labels() {
        let (aux, rest) = split_aux(&pool(), 20, 0).unwrap();
        let mut plan = plan(0.25, 1);
        plan.oversample = true;
        let run = generate_shadow_records(&rest, &aux, &arch(), &quick(), &plan, 0.5).unwrap();
        let ps: Vec<f64> = run.records.iter().map(|r| r.p[0]).collect();
        assert_eq!(ps, vec![0.25, 0.5, 0.75]);
    }

    #[test]
    fn save_load_round_trip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let (aux, rest) = split_aux(&pool(), 20, 0).unwrap();
        let plan = plan(0.1, 1);
        let mut records = generate_shadow_records(&rest, &aux, &arch(), &quick(), &plan, 0.5)
            .unwrap()
            .records;
        while records.len() < 100 {
            let mut r = records[records.len() % 11].clone();
            r.replica += records.len();
            records.push(r);
        }
        let path = dir.path().join("records.jsonl");
        save_records(&path, &records, Some(&plan)).unwrap();
        let loaded = load_records(&path, Some(&arch())).unwrap();
        assert_eq!(loaded.records, records);
        assert_eq!(loaded.plan, Some(plan));

        let other = ArchSpec::new(2, vec![3, 2], Activation::Relu, OutputActivation::Softmax).unwrap();
        assert!(matches!(
            load_records(&path, Some(&other)),
            Err(Error::ArchMismatch { .. })
        ));

        let text = std::fs::read_to_string(&path).unwrap();
        let cut = &text[..text.len() - 40];
        std::fs::write(&path, cut).unwrap();
        match load_records(&path, None) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 101),
            other => panic!("unexpected {other:?}"),
        }
    }
}
