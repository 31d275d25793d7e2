//! Metrics, image emission, experiment orchestration and configuration.

pub mod config;
pub mod experiment;
pub mod metrics;
pub mod png;

pub use config::{AttackKind, AttackSpec, CoilSpec, ExperimentConfig, MaskSpec, ReconSpec, SourceSpec};
pub use experiment::{metrics_csv, parse_metrics_csv, render_report, run_experiment, ExperimentReport, ExperimentSummary};
pub use metrics::{nrmse, psnr, MetricsRecord};
pub use png::{emit_png, Window};
