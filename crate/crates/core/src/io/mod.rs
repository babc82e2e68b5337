//! Run configuration, persistence and report output.

pub mod config;
pub mod diagnostics;
pub mod plot;
pub mod report;
pub mod snapshot;

pub use config::{RunConfig, ScaleFactorSpec, SCHEMA_VERSION};
pub use diagnostics::{read_diagnostics, write_diagnostics, DiagnosticsWriter};
pub use plot::emit_plots;
pub use report::{content_hash, RunReport, Timing, TransitionSummary};
pub use snapshot::{read_snapshots, SnapshotHeader, SnapshotWriter};
