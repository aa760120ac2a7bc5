//! End-to-end orchestration, evaluation and reports.

pub mod config;
pub mod run;

pub use config::PipelineConfig;
pub use run::{
    evaluate, gaussians_path, load_binding, mean_metrics, random_gaussians, run_pipeline, save_binding, tracking_error, FrameMetrics, MeanMetrics,
    MetricsReport, TrackingReport,
};
