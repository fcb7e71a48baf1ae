//! Seeding, configuration files, result records and plots.

mod config;
pub mod plot;
mod run;
pub mod seeds;
mod selftest;

pub use config::{parse_seeds, ExperimentConfig, ExperimentKind, ModelKind, Precision};
pub use plot::{gaussian_filter, gaussian_kernel, mean_std, svg_plot, Curve, SMOOTHING_SIGMA};
pub use run::{
    aggregate_and_plot, run_experiment, seed_csv_path, summarize_dir, sweep_beta, RunRecord, Summary, SweepRow,
    CONFIG_FILE, DEFAULT_BETAS, PLOT_FILE, SUMMARY_FILE, SUMMARY_HEADER, VERSION,
};
pub use seeds::{streams, SeedStreams};
pub use selftest::{selftest, Check};

#[cfg(test)]
mod tests;
