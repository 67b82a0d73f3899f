//! Batch runner around the `gmclab` library: JSON configs, flag overrides,
//! result tables and reproducibility manifests.

pub mod config;
pub mod error;
pub mod phase;
pub mod run;

pub use config::{CommandKind, ExperimentConfig, KernelChoice, Overrides};
pub use error::{CliError, CliResult};
pub use phase::{emit_phase_diagram, PhaseDiagram, PhaseRow};
pub use run::{rerun, run, RerunOutcome, RunManifest, RunOutcome};
