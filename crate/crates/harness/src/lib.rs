//! Experiment harness: config parsing, sampling runs, grid search, metrics
//! and report emission on top of `scorekit`.

pub mod config;
pub mod error;
pub mod grid;
pub mod metrics;
pub mod order;
pub mod report;
pub mod run;

pub use config::{parse_config, parse_grid, GridSpec, RunConfig};
pub use error::{HarnessError, Result};
pub use grid::{grid_search, GridReport};
pub use metrics::{mode_mass_err, moments, sliced_w2, w2_1d};
pub use order::{measure_order, OrderReport};
pub use report::emit_report;
pub use run::{run_sample, MetricsRow};
