//! Training, evaluation, ablation sweeps, complexity counting and reporting.

pub mod ablate;
pub mod checkpoint;
pub mod complexity;
pub mod evaluate;
pub mod report;
pub mod schedule;
pub mod train;

pub use ablate::{ablate, resolve_plan, AblationRow, AblationVariant, VARIANTS};
pub use complexity::{count_params_flops, Complexity};
pub use evaluate::{evaluate, evaluate_records};
pub use report::{report, Summary};
pub use train::{train, DatasetPreset, OptimizerKind, RunArtifacts, TrainConfig, Trainer};
