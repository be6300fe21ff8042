//! Experiment orchestration: data preparation, shadow generation, step-size
//! sweeps over both meta-classifier variants, the oversampling study, and
//! CSV/JSON reports.

mod config;
mod pipeline;
mod report;

pub use config::{ArchConfig, DataSource, ExperimentConfig, MetaConfigs, ShadowConfig};
pub use pipeline::{
    is_imbalanced, prepare, run_multiclass, run_oversampling_study, run_sweep, select_training, shadow_plan, shadows,
    Prepared,
};
pub use report::{
    emit_report, load_report, median, BoxStats, Heatmap, HeatmapCell, OversampleCase, OversampleReport, Report,
    ReportRow, Scatter, SeedLog, SUMMARY_COLUMNS,
};
