//! Library surface behind the `headscope` binary: run configuration,
//! manifest bookkeeping, and one function per subcommand so tests can
//! drive the full pipeline in-process.

pub mod backend_factory;
pub mod commands;
pub mod config;
pub mod manifest;
pub mod plots;

use headscope::error::Error;

/// Process exit code classes: 2 config, 3 data, 4 backend.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) | Error::Format(_) => 2,
        Error::InvalidInput(_)
        | Error::InvalidDataset(_)
        | Error::PoolExhausted { .. }
        | Error::NoPositiveMass
        | Error::InvalidComparison(_)
        | Error::Io(_)
        | Error::Json(_) => 3,
        Error::ContextOverflow { .. }
        | Error::Capability { .. }
        | Error::SpanLookup(_)
        | Error::SelectionPool { .. }
        | Error::InvalidLayout(_) => 4,
    }
}
