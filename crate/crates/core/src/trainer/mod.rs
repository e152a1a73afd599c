//! Training orchestration: source warm-up, adaptation, evaluation, ablations,
//! the bound audit and the scaling benchmark.

mod ablate;
mod audit;
mod bench;
mod config;
mod eval;
mod gradcheck;
mod model;
mod report;
mod train;

pub use ablate::{ablate, ablate_seed, AblationRow, AblationTable};
pub use audit::{bound_audit, BoundAudit, UNIDENTIFIED_SYMBOLS};
pub use bench::{bench_scaling, linear_fit, BenchConfig, BenchReport, BenchRow};
pub use config::{Ablation, TrainConfig};
pub use eval::{accuracy_report, domain_probe, evaluate, probe_accuracy, EvalReport, ProbeReport};
pub use gradcheck::{composite_gradient_suite, CompositeLoss, ParamCheck};
pub use model::{Forward, Model, ModelSpec};
pub use report::{
    features_csv, metrics_csv, metrics_row, warmup_csv, write_json, write_text, ArtifactWriter,
    METRICS_HEADER,
};
pub use train::{
    adapt, warmup, warmup_epochs, AdaptObserver, AdaptReport, EpochMetrics, LossBreakdown, WarmupEpoch,
    WarmupReport,
};
