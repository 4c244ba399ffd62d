//! Commands behind the `driftlearn` binary: stream generation, curation,
//! sweep runs, evaluation and comparison tables.

pub mod commands;
pub mod compare;
pub mod config;

pub use commands::{cmd_curate, cmd_evaluate, cmd_generate, cmd_run};
pub use compare::cmd_compare;
pub use config::{ExperimentConfig, Method, StreamSource};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 1;
pub const EXIT_DIVERGED: i32 = 2;

/// 2 for numerical divergence anywhere in the error chain, 1 otherwise.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    let diverged = err.chain().any(|cause| {
        matches!(
            cause.downcast_ref::<driftlearn::Error>(),
            Some(driftlearn::Error::Divergence { .. })
        )
    });
    if diverged {
        EXIT_DIVERGED
    } else {
        EXIT_INPUT
    }
}
