//! Experiment configuration, batch runs, output files and plots.

pub mod config;
pub mod experiment;
pub mod plot;

pub use config::{preset, ExperimentConfig, PressureCheck};
pub use experiment::{run_experiment, ExperimentOutput, RunSummary};
pub use plot::{emit_plot, PlotSpec, SeriesInput};
