//! Experiment driver shared by the CLI and the benchmark tests.

pub mod config;
mod data;
mod models;
mod report;
mod run;

pub use config::{DatasetConfig, DatasetSource, EvalConfig, ExperimentConfig, OodSource, HARNESSES};
pub use data::{load_eval_data, load_train_samples, EvalData, EvalImage, OodData};
pub use models::{prepare_models, ModelSet, Needs};
pub use report::{
    error_png, image_png, ood_metrics_by_method, reconstruction_png, render_report, save_sample, unix_now, EvaluationReport, ReportMeta,
    ERROR_MAP_MAX,
};
pub use run::{depth_metrics_over, eval_sets, run_experiment, score_all, scorer, ExperimentOutput};
