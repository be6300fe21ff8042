use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{ArgAction, Args, Parser, Subcommand, ValueEnum};
use labelinfer::dataset::{random_oversample, resample_to_distribution};
use labelinfer::harness::{self, ExperimentConfig, Report};
use labelinfer::meta::{attack, train_meta_with, MetaModel, MetaTrainConfig, MetaVariant};
use labelinfer::nn::{train_classifier, ArchSpec, MlpParams, TrainConfig};
use labelinfer::par::Parallelism;
use labelinfer::rng::derive_seed;
use labelinfer::shadow::{load_records, save_records};
use labelinfer::simplex::{LabelDistribution, SamplingScheme, SchemeKind};
use labelinfer::{Error, ErrorKind, Result};
use serde::{Deserialize, Serialize};

/// Seed streams used by the standalone commands. Experiment runs use their own.
const TARGET_STREAM: u64 = 100;
const META_STREAM: u64 = 101;

#[derive(Parser)]
#[command(
    name = "labelinfer",
    version,
    about = "Infer the training label distribution of a classifier from its weights"
)]
struct Cli {
    /// More log output; repeat for debug level.
    #[arg(short, long, action = ArgAction::Count, global = true)]
    verbose: u8,
    /// Run everything on the calling thread.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Experiment configuration (TOML).
    #[arg(short, long)]
    config: PathBuf,
    /// Override a config field, e.g. `--set train.epochs=10`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Master seed; shorthand for `--set seed=N`.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; shorthand for `--set output_dir=DIR`.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl ConfigArgs {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut overrides = self.overrides.clone();
        if let Some(seed) = self.seed {
            overrides.push(format!("seed={seed}"));
        }
        if let Some(out) = &self.out {
            let quoted = serde_json::to_string(&out.to_string_lossy()).expect("strings serialize");
            overrides.push(format!("output_dir={quoted}"));
        }
        ExperimentConfig::load(&self.config, &overrides)
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum SchemeArg {
    UniformGrid,
    Edges,
    Region,
}

#[derive(Clone, Copy, ValueEnum)]
enum VariantArg {
    Proposed,
    Baseline,
}

impl From<VariantArg> for MetaVariant {
    fn from(v: VariantArg) -> Self {
        match v {
            VariantArg::Proposed => MetaVariant::Proposed,
            VariantArg::Baseline => MetaVariant::Baseline,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Print the label distributions of a sampling scheme as CSV.
    SampleSimplex {
        #[arg(long)]
        classes: usize,
        #[arg(long)]
        step: f64,
        #[arg(long, value_enum, default_value = "uniform-grid")]
        scheme: SchemeArg,
        /// Minimum coordinate for the region scheme.
        #[arg(long, default_value_t = 0.2)]
        tau: f64,
        /// Write to a file instead of stdout.
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Train shadow classifiers over the generation grid and save their records.
    GenShadows {
        #[command(flatten)]
        config: ConfigArgs,
        /// Record file to write.
        #[arg(short, long)]
        output: PathBuf,
        /// Train every shadow on a randomly oversampled copy of its set.
        #[arg(long)]
        oversample: bool,
    },
    /// Train one classifier on a pool sample with the given label distribution.
    TrainTarget {
        #[command(flatten)]
        config: ConfigArgs,
        /// Label distribution, comma separated.
        #[arg(long, value_delimiter = ',', required = true)]
        p: Vec<f64>,
        #[arg(short, long)]
        output: PathBuf,
        #[arg(long)]
        oversample: bool,
    },
    /// Fit a meta-classifier on the training split of a record file.
    TrainMeta {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        records: PathBuf,
        #[arg(long, value_enum, default_value = "proposed")]
        variant: VariantArg,
        /// Sub-sample training records to this grid step.
        #[arg(long)]
        step: Option<f64>,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Estimate the label distribution of a saved target classifier.
    Attack {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        meta: PathBuf,
        #[arg(long)]
        target: PathBuf,
    },
    /// Compare both meta-classifier variants over the configured step sizes.
    Sweep {
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Like `sweep` for 3 or 4 classes, with per-point KL heatmaps.
    Multiclass {
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Attack classifiers trained on oversampled data.
    OversampleStudy {
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Rewrite the CSV files of a finished run and print its summary.
    Report {
        /// A `run.json` file or the directory holding it.
        run: PathBuf,
        /// Directory for the regenerated files; defaults to the run's own.
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
}

/// A trained classifier as written by `train-target`.
#[derive(Serialize, Deserialize)]
struct TargetFile {
    arch: ArchSpec,
    params: MlpParams,
    p: LabelDistribution,
    oversampled: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let mode = if cli.sequential {
        Parallelism::Sequential
    } else {
        Parallelism::Parallel
    };
    match run(cli.command, mode) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(e.kind()))
        }
    }
}

fn exit_code(kind: ErrorKind) -> u8 {
    match kind {
        ErrorKind::Config => 2,
        ErrorKind::Data => 3,
        ErrorKind::Numeric => 4,
    }
}

fn run(command: Command, mode: Parallelism) -> Result<()> {
    match command {
        Command::SampleSimplex {
            classes,
            step,
            scheme,
            tau,
            output,
        } => sample_simplex(classes, step, scheme, tau, output.as_deref()),
        Command::GenShadows {
            config,
            output,
            oversample,
        } => {
            let config = config.load()?;
            let prepared = harness::prepare(&config)?;
            let plan = harness::shadow_plan(&config, oversample);
            let run = labelinfer::shadow::generate_shadow_records_with(
                &prepared.pool,
                &prepared.aux,
                &prepared.arch,
                &config.train,
                &plan,
                config.epsilon,
                mode,
            )?;
            for s in &run.skipped {
                log::warn!("skipped point {} replica {}: {}", s.point, s.replica, s.reason);
            }
            save_records(&output, &run.records, Some(&plan))?;
            println!(
                "{} records ({} skipped) -> {}",
                run.records.len(),
                run.skipped.len(),
                output.display()
            );
            Ok(())
        }
        Command::TrainTarget {
            config,
            p,
            output,
            oversample,
        } => {
            let config = config.load()?;
            let prepared = harness::prepare(&config)?;
            let p = LabelDistribution::new(p)?;
            let seed = derive_seed(config.seed, &[TARGET_STREAM]);
            let data = resample_to_distribution(
                &prepared.pool,
                &p,
                config.shadows.samples_per_set,
                derive_seed(seed, &[0]),
            )?;
            let data = if oversample {
                random_oversample(&data, derive_seed(seed, &[2]))?
            } else {
                data
            };
            let train = TrainConfig {
                seed: derive_seed(seed, &[1]),
                ..config.train.clone()
            };
            let params = train_classifier(&data, &prepared.arch, &train)?;
            let file = TargetFile {
                arch: prepared.arch,
                params,
                p,
                oversampled: oversample,
            };
            write_json(&output, &file)
        }
        Command::TrainMeta {
            config,
            records,
            variant,
            step,
            output,
        } => {
            let config = config.load()?;
            let file = load_records(&records, None)?;
            let variant = MetaVariant::from(variant);
            let train = match &file.plan {
                Some(plan) => {
                    let classes = file.records.first().ok_or(Error::EmptyDataset)?.arch.num_classes();
                    let points = plan.points(classes)?;
                    let step = step.unwrap_or(plan.scheme.step);
                    harness::select_training(&config, plan, &points, &file.records, step)?
                }
                None => file.records,
            };
            let meta_config = MetaTrainConfig {
                seed: derive_seed(config.seed, &[META_STREAM]),
                ..match variant {
                    MetaVariant::Proposed => config.meta.proposed.clone(),
                    MetaVariant::Baseline => config.meta.baseline.clone(),
                }
            };
            let model = train_meta_with(&train, variant, config.epsilon, &meta_config, mode)?;
            model.save(&output)?;
            println!(
                "{} meta trained on {} records -> {}",
                variant.name(),
                train.len(),
                output.display()
            );
            Ok(())
        }
        Command::Attack { config, meta, target } => {
            let config = config.load()?;
            let prepared = harness::prepare(&config)?;
            let model = MetaModel::load(&meta)?;
            let target: TargetFile = read_json(&target)?;
            let estimate = attack(&model, &target.params, &target.arch, &prepared.aux, config.epsilon)?;
            let out = serde_json::json!({
                "variant": model.variant().name(),
                "estimate": estimate.as_slice(),
                "true": target.p.as_slice(),
            });
            println!("{out}");
            Ok(())
        }
        Command::Sweep { config } => experiment(&config.load()?, |c| harness::run_sweep(c, mode)),
        Command::Multiclass { config } => experiment(&config.load()?, |c| harness::run_multiclass(c, mode)),
        Command::OversampleStudy { config } => {
            experiment(&config.load()?, |c| harness::run_oversampling_study(c, mode))
        }
        Command::Report { run, output } => {
            let path = if run.is_dir() { run.join("run.json") } else { run };
            let report = harness::load_report(&path)?;
            let dir = output.unwrap_or_else(|| path.parent().map(Path::to_path_buf).unwrap_or_default());
            harness::emit_report(&report, &dir)?;
            print_summary(&report);
            Ok(())
        }
    }
}

fn experiment(config: &ExperimentConfig, f: impl FnOnce(&ExperimentConfig) -> Result<Report>) -> Result<()> {
    let report = f(config)?;
    let written = harness::emit_report(&report, &config.output_dir)?;
    print_summary(&report);
    for s in &report.skipped {
        log::warn!("skipped point {} replica {}: {}", s.point, s.replica, s.reason);
    }
    println!("wrote {} files to {}", written.len(), config.output_dir.display());
    Ok(())
}

fn print_summary(report: &Report) {
    if !report.rows.is_empty() {
        println!(
            "{:>8} {:>9} {:>10} {:>10} {:>8} {:>8}",
            "step", "variant", "avg_mse", "kl_median", "n_test", "rel_imp"
        );
        for r in &report.rows {
            println!(
                "{:>8} {:>9} {:>10.5} {:>10.5} {:>8} {:>7.1}%",
                r.step_size,
                r.variant.name(),
                r.avg_mse,
                r.kl.median,
                r.n_test,
                100.0 * r.rel_improvement
            );
        }
    }
    if let Some(o) = &report.oversample {
        println!("median KL on {} oversampled targets:", o.cases.len());
        println!("  unaware  {:.5}", o.unaware.median);
        println!("  aware    {:.5}", o.aware.median);
        println!("  p = 0.5  {:.5}", o.balanced.median);
    }
}

fn sample_simplex(classes: usize, step: f64, scheme: SchemeArg, tau: f64, output: Option<&Path>) -> Result<()> {
    let kind = match scheme {
        SchemeArg::UniformGrid => SchemeKind::UniformGrid,
        SchemeArg::Edges => SchemeKind::Edges,
        SchemeArg::Region => SchemeKind::Region { tau },
    };
    let points = SamplingScheme { kind, step }.points(classes)?;
    let mut text = (1..=classes).map(|c| format!("p{c}")).collect::<Vec<_>>().join(",");
    text.push('\n');
    for p in &points {
        let row: Vec<String> = p.as_slice().iter().map(|v| format!("{v}")).collect();
        text.push_str(&row.join(","));
        text.push('\n');
    }
    match output {
        Some(path) => std::fs::write(path, text).map_err(|e| io_error(path, e)),
        None => std::io::stdout()
            .write_all(text.as_bytes())
            .map_err(|e| io_error(Path::new("<stdout>"), e)),
    }
}

fn io_error(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string(value).expect("values serialize");
    std::fs::write(path, text).map_err(|e| io_error(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| io_error(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}
