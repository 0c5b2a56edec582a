//! Evaluation harness: datasets, simulated feedback, budget sweeps and AUC,
//! the staged incremental-update experiment, and ablations.

mod curve;
mod dataset;
mod experiments;
mod routers;
mod synth;

pub use curve::{auc_trapezoid, budget_grid, AucReport, Curve, CurvePoint, DEFAULT_GRID_POINTS};
pub use dataset::{Dataset, Split, DATASET_FILE, DEFAULT_TRAIN_FRACTION, REGISTRY_FILE};
pub use experiments::{
    ablation, bench, bench_at, build_routers, derive_pairwise, incremental_experiment,
    mean_test_quality, outcome_for, sweep_budgets, top1_accuracy, validate_stages, AblationPoint,
    AblationReport, BenchReport, HarnessConfig, IncrementalConfig, IncrementalReport, RouterKind,
    RouterResult, StageReport, StageRow, DEFAULT_STAGES,
};
pub use routers::{
    choose_by_scores, EagleModel, EagleRouter, ExternalRouter, KnnRouter, OracleRouter,
    RandomRouter, Router,
};
pub use synth::{gen_synthetic, CostPolicy, SyntheticConfig};
