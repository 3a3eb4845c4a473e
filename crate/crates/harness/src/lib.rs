//! Experiment harness for uncertainty propagation: desk datasets, the
//! noise-setting sweep with rank statistics, the input-node ablation,
//! report files, SVG figures and the `fgprop` command line.

pub mod cli;
pub mod datasets;
pub mod desk;
pub mod experiment;
pub mod render;
pub mod report;

pub use experiment::{
    run_ablation, run_ablation_on, run_experiment, run_on, AblationPoint, ExperimentConfig, ExperimentReport, LayerSelector,
};
