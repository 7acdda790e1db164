//! Synthetic workloads and the experiment driver.
//!
//! - [`family`]: task families with tunable overlap between consecutive plans
//! - [`experiment`]: cold vs memoized runs over a task sequence
//! - [`config`]: run configuration files
//! - [`sweep`]: grids over `lambda`, `tau_margin` and beam width
//! - [`report`]: CSV / JSON tables
//! - [`fixtures`]: hand-built scenarios with known outcomes

pub mod config;
pub mod experiment;
pub mod family;
pub mod fixtures;
pub mod report;
pub mod sweep;

pub use config::RunConfig;
pub use experiment::{reuse_ratios, run_experiment, run_task, summarize, ExperimentSettings, Mode, RunReport, Summary};
pub use family::{generate_family, position_id, Family, FamilyConfig, MeterRanges, ROOT_ID};
pub use report::{parse_rows, render, write_report, ReportFormat};
pub use sweep::{sweep, SweepGrid, SweepRow};
