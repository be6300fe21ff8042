use std::collections::BTreeMap;
use std::time::Instant;

use super::report::{
    BoxStats, Heatmap, HeatmapCell, OversampleCase, OversampleReport, Report, ReportRow, Scatter, SeedLog,
};
use super::{DataSource, ExperimentConfig};
use crate::dataset::{load_idx, load_tabular, split_aux, synth_gaussians, AuxDataset, LabeledDataset};
use crate::error::{Error, Result};
use crate::meta::{train_meta_with, MetaModel, MetaVariant};
use crate::nn::ArchSpec;
use crate::par::{self, Parallelism};
use crate::rng::derive_seed;
use crate::shadow::{generate_shadow_records_with, load_records, ShadowPlan, ShadowRecord, ShadowRun};
use crate::simplex::{grid_resolution, kl_divergence, mse, LabelDistribution};

const DATA_STREAM: u64 = 1;
const AUX_STREAM: u64 = 2;
const SHADOW_STREAM: u64 = 3;
const META_STREAM: u64 = 4;
const OVERSAMPLED_STREAM: u64 = 5;
const AWARE_META_STREAM: u64 = 6;

/// Auxiliary data, the remaining shadow pool and the resolved classifier shape.
pub struct Prepared {
    pub pool: LabeledDataset,
    pub aux: AuxDataset,
    pub arch: ArchSpec,
}

pub fn prepare(config: &ExperimentConfig) -> Result<Prepared> {
    let master = config.seed;
    let data = match &config.data {
        DataSource::Synthetic { classes, per_class } => synth_gaussians(
            classes,
            &vec![*per_class; classes.len()],
            derive_seed(master, &[DATA_STREAM]),
        )?,
        DataSource::Idx {
            images,
            labels,
            classes,
        } => load_idx(images, labels, classes)?,
        DataSource::Tabular { path, schema } => load_tabular(path, schema)?,
    };
    let arch = config.arch.resolve(data.dim())?;
    if arch.num_classes() != data.num_classes() {
        return Err(Error::Config(format!(
            "architecture {} predicts {} classes but the data has {}",
            arch.fingerprint(),
            arch.num_classes(),
            data.num_classes()
        )));
    }
    let (aux, pool) = split_aux(&data, config.aux_per_class, derive_seed(master, &[AUX_STREAM]))?;
    Ok(Prepared { pool, aux, arch })
}

pub fn shadow_plan(config: &ExperimentConfig, oversample: bool) -> ShadowPlan {
    let stream = if oversample { OVERSAMPLED_STREAM } else { SHADOW_STREAM };
    ShadowPlan {
        scheme: config.generation_scheme(),
        replicas: config.shadows.replicas,
        train_replicas: config.shadows.train_replicas,
        samples_per_set: config.shadows.samples_per_set,
        base_seed: derive_seed(config.seed, &[stream]),
        oversample,
    }
}

/// Loads the configured record file, or trains the shadows of `plan`.
pub fn shadows(
    config: &ExperimentConfig,
    prepared: &Prepared,
    plan: &ShadowPlan,
    mode: Parallelism,
) -> Result<ShadowRun> {
    if let (Some(path), false) = (&config.shadows.records, plan.oversample) {
        let file = load_records(path, Some(&prepared.arch))?;
        if file.plan.as_ref() != Some(plan) {
            return Err(Error::Config(format!(
                "{} was generated with a different shadow plan",
                path.display()
            )));
        }
        return Ok(ShadowRun {
            records: file.records,
            skipped: Vec::new(),
        });
    }
    log::info!(
        "training {} shadows{}",
        plan.points(prepared.arch.num_classes())?.len() * plan.replicas,
        if plan.oversample { " on oversampled sets" } else { "" }
    );
    generate_shadow_records_with(
        &prepared.pool,
        &prepared.aux,
        &prepared.arch,
        &config.train,
        plan,
        config.epsilon,
        mode,
    )
}

fn meta_seed(master: u64, step_index: usize, variant: MetaVariant) -> u64 {
    let v = match variant {
        MetaVariant::Proposed => 0,
        MetaVariant::Baseline => 1,
    };
    derive_seed(master, &[META_STREAM, step_index as u64, v])
}

fn nominal_points(plan: &ShadowPlan, classes: usize) -> Result<Vec<LabelDistribution>> {
    plan.points(classes)
}

/// Training records whose grid point lies on the `step` grid and in the training scheme.
///
/// Fails when a selected grid point has no surviving training record.
pub fn select_training(
    config: &ExperimentConfig,
    plan: &ShadowPlan,
    points: &[LabelDistribution],
    records: &[ShadowRecord],
    step: f64,
) -> Result<Vec<ShadowRecord>> {
    let resolution = grid_resolution(step)?;
    let scheme = config.training_scheme(step);
    let wanted: Vec<bool> = points
        .iter()
        .map(|p| p.grid_counts(resolution).is_some() && scheme.contains(p))
        .collect();
    let mut seen = vec![false; points.len()];
    let selected: Vec<ShadowRecord> = records
        .iter()
        .filter(|r| plan.is_train(r) && wanted[r.point])
        .inspect(|r| seen[r.point] = true)
        .cloned()
        .collect();
    if let Some(k) = (0..points.len()).find(|&k| wanted[k] && !seen[k]) {
        return Err(Error::MissingRecords(points[k].as_slice().to_vec()));
    }
    Ok(selected)
}

struct Evaluation {
    row: ReportRow,
    scatter: Scatter,
    kl: Vec<f64>,
}

fn evaluate(
    model: &MetaModel,
    test: &[ShadowRecord],
    step: f64,
    n_train: usize,
    mode: Parallelism,
    started: Instant,
) -> Result<Evaluation> {
    let estimates = par::map(test, mode, |r| model.predict_record(r));
    let mut kl = Vec::with_capacity(test.len());
    let mut total_mse = 0.0;
    let mut scatter = Scatter {
        step_size: step,
        variant: model.variant(),
        true_p: Vec::with_capacity(test.len()),
        est_p: Vec::with_capacity(test.len()),
    };
    for (r, est) in test.iter().zip(estimates) {
        let est = est?;
        kl.push(kl_divergence(&r.p, &est)?);
        total_mse += mse(&r.p, &est)?;
        scatter.true_p.push(r.p.as_slice().to_vec());
        scatter.est_p.push(est.into_vec());
    }
    let row = ReportRow {
        step_size: step,
        variant: model.variant(),
        avg_mse: total_mse / test.len() as f64,
        kl: BoxStats::from_values(&kl).ok_or(Error::EmptyDataset)?,
        n_train,
        n_test: test.len(),
        rel_improvement: 0.0,
        wall_time_secs: started.elapsed().as_secs_f64(),
    };
    Ok(Evaluation { row, scatter, kl })
}

fn heatmap(test: &[ShadowRecord], kl: &[f64], step: f64, variant: MetaVariant) -> Heatmap {
    let mut cells: BTreeMap<(i64, i64), (f64, f64, f64, usize)> = BTreeMap::new();
    for (r, &k) in test.iter().zip(kl) {
        let (p1, p2) = (r.p[0], r.p[1]);
        let key = ((p1 * 1e9).round() as i64, (p2 * 1e9).round() as i64);
        let cell = cells.entry(key).or_insert((p1, p2, 0.0, 0));
        cell.2 += k;
        cell.3 += 1;
    }
    Heatmap {
        step_size: step,
        variant,
        cells: cells
            .into_values()
            .map(|(p1, p2, sum, n)| HeatmapCell {
                p1,
                p2,
                mean_kl: sum / n as f64,
                n,
            })
            .collect(),
    }
}

fn new_report(experiment: &str, config: &ExperimentConfig, prepared: &Prepared, plan: &ShadowPlan) -> Report {
    Report {
        experiment: experiment.into(),
        version: env!("CARGO_PKG_VERSION").into(),
        config: config.clone(),
        arch: prepared.arch.fingerprint(),
        seeds: SeedLog {
            master: config.seed,
            data: derive_seed(config.seed, &[DATA_STREAM]),
            aux: derive_seed(config.seed, &[AUX_STREAM]),
            shadows: plan.base_seed,
            oversampled_shadows: None,
            metas: Vec::new(),
        },
        rows: Vec::new(),
        scatter: Vec::new(),
        heatmaps: Vec::new(),
        oversample: None,
        skipped: Vec::new(),
        wall_time_secs: 0.0,
    }
}

fn run_steps(config: &ExperimentConfig, with_heatmaps: bool, experiment: &str, mode: Parallelism) -> Result<Report> {
    let started = Instant::now();
    let prepared = prepare(config)?;
    let plan = shadow_plan(config, false);
    let run = shadows(config, &prepared, &plan, mode)?;
    let points = nominal_points(&plan, prepared.arch.num_classes())?;
    let test: Vec<ShadowRecord> = run.records.iter().filter(|r| !plan.is_train(r)).cloned().collect();
    if test.is_empty() {
        return Err(Error::MissingRecords(Vec::new()));
    }
    let mut report = new_report(experiment, config, &prepared, &plan);
    report.skipped = run.skipped;

    for (i, step) in config.sweep_steps().into_iter().enumerate() {
        let train = select_training(config, &plan, &points, &run.records, step)?;
        log::info!(
            "step {step}: {} training records, {} test records",
            train.len(),
            test.len()
        );
        let mut pair = Vec::with_capacity(2);
        for variant in [MetaVariant::Proposed, MetaVariant::Baseline] {
            let t0 = Instant::now();
            let seed = meta_seed(config.seed, i, variant);
            let meta_config = match variant {
                MetaVariant::Proposed => &config.meta.proposed,
                MetaVariant::Baseline => &config.meta.baseline,
            };
            let meta_config = crate::meta::MetaTrainConfig {
                seed,
                ..meta_config.clone()
            };
            let model = train_meta_with(&train, variant, config.epsilon, &meta_config, mode)?;
            report.seeds.metas.push((variant, step, seed));
            let eval = evaluate(&model, &test, step, train.len(), mode, t0)?;
            if with_heatmaps {
                report.heatmaps.push(heatmap(&test, &eval.kl, step, variant));
            }
            pair.push(eval);
        }
        let (proposed, baseline) = (pair[0].row.avg_mse, pair[1].row.avg_mse);
        let rel = if baseline > 0.0 {
            (baseline - proposed) / baseline
        } else {
            0.0
        };
        for eval in pair {
            report.rows.push(ReportRow {
                rel_improvement: rel,
                ..eval.row
            });
            report.scatter.push(eval.scatter);
        }
    }
    report.wall_time_secs = started.elapsed().as_secs_f64();
    Ok(report)
}

/// Trains both meta-classifier variants at every sweep step and scores them
/// on the fixed test split of the generation grid.
pub fn run_sweep(config: &ExperimentConfig, mode: Parallelism) -> Result<Report> {
    run_steps(config, false, "sweep", mode)
}

/// Multi-class variant of [`run_sweep`] that also emits per-point KL heatmaps.
pub fn run_multiclass(config: &ExperimentConfig, mode: Parallelism) -> Result<Report> {
    let classes = config.arch.layers.last().copied().unwrap_or(0);
    if !(3..=4).contains(&classes) {
        return Err(Error::Config(format!(
            "multiclass experiments need 3 or 4 classes, the architecture has {classes}"
        )));
    }
    run_steps(config, true, "multiclass", mode)
}

/// Whether a binary label proportion counts as imbalanced: `(0, 0.2] ∪ [0.8, 1)`.
pub fn is_imbalanced(p0: f64) -> bool {
    const TOL: f64 = 1e-9;
    (p0 > TOL && p0 <= 0.2 + TOL) || (0.8 - TOL..1.0 - TOL).contains(&p0)
}

/// Attacks targets trained on randomly oversampled data, comparing a meta
/// trained on ordinary shadows with one trained on oversampled shadows.
pub fn run_oversampling_study(config: &ExperimentConfig, mode: Parallelism) -> Result<Report> {
    let started = Instant::now();
    let prepared = prepare(config)?;
    if prepared.arch.num_classes() != 2 {
        return Err(Error::Config("the oversampling study needs a binary task".into()));
    }
    let plan = shadow_plan(config, false);
    let over_plan = shadow_plan(config, true);
    let mut report = new_report("oversample", config, &prepared, &plan);
    report.seeds.oversampled_shadows = Some(over_plan.base_seed);

    let normal = shadows(config, &prepared, &plan, mode)?;
    let oversampled = shadows(config, &prepared, &over_plan, mode)?;
    let step = config.shadows.step;
    let meta_config = |seed| crate::meta::MetaTrainConfig {
        seed,
        ..config.meta.proposed.clone()
    };

    let points = nominal_points(&plan, 2)?;
    let train = select_training(config, &plan, &points, &normal.records, step)?;
    let seed = meta_seed(config.seed, 0, MetaVariant::Proposed);
    let unaware = train_meta_with(&train, MetaVariant::Proposed, config.epsilon, &meta_config(seed), mode)?;
    report.seeds.metas.push((MetaVariant::Proposed, step, seed));

    let over_points = nominal_points(&over_plan, 2)?;
    let over_train = select_training(config, &over_plan, &over_points, &oversampled.records, step)?;
    let seed = derive_seed(config.seed, &[AWARE_META_STREAM]);
    let aware = train_meta_with(
        &over_train,
        MetaVariant::Proposed,
        config.epsilon,
        &meta_config(seed),
        mode,
    )?;
    report.seeds.metas.push((MetaVariant::Proposed, step, seed));

    let targets: Vec<&ShadowRecord> = oversampled
        .records
        .iter()
        .filter(|r| !over_plan.is_train(r) && is_imbalanced(over_points[r.point][0]))
        .collect();
    if targets.is_empty() {
        return Err(Error::MissingRecords(Vec::new()));
    }
    let balanced = LabelDistribution::uniform(2);
    let cases = par::map(&targets, mode, |r| -> Result<OversampleCase> {
        Ok(OversampleCase {
            p: r.p.as_slice().to_vec(),
            kl_unaware: kl_divergence(&r.p, &unaware.predict_record(r)?)?,
            kl_aware: kl_divergence(&r.p, &aware.predict_record(r)?)?,
            kl_balanced: kl_divergence(&r.p, &balanced)?,
        })
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let stats = |f: fn(&OversampleCase) -> f64| {
        BoxStats::from_values(&cases.iter().map(f).collect::<Vec<_>>()).expect("cases are nonempty")
    };
    report.oversample = Some(OversampleReport {
        unaware: stats(|c| c.kl_unaware),
        aware: stats(|c| c.kl_aware),
        balanced: stats(|c| c.kl_balanced),
        cases,
    });
    report.skipped = normal.skipped;
    report.skipped.extend(oversampled.skipped);
    report.wall_time_secs = started.elapsed().as_secs_f64();
    Ok(report)
}
