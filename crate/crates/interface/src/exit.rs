//! Process exit codes, one per error class.

use hatemod_core::Error;

pub const OK: u8 = 0;
/// Anything not covered below.
pub const INTERNAL: u8 = 1;
/// Bad command line; clap exits with this code itself.
pub const USAGE: u8 = 2;
pub const CONFIG: u8 = 3;
pub const IO: u8 = 4;
pub const DATA: u8 = 5;
pub const CHECKPOINT: u8 = 6;
pub const BACKEND: u8 = 7;
pub const TRAINING: u8 = 8;

/// Wraps a message as a configuration error so it maps to [`CONFIG`].
pub fn config_error(message: impl std::fmt::Display) -> anyhow::Error {
    Error::Config(message.to_string()).into()
}

fn core_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Spec(_) => CONFIG,
        Error::Io { .. } => IO,
        Error::MissingColumn(..) | Error::Parse { .. } | Error::InvalidData(_) | Error::Json(_) => DATA,
        Error::Checkpoint(_) => CHECKPOINT,
        Error::Backend { .. } | Error::BackendAuth(_) | Error::RewriteFailed { .. } => BACKEND,
        Error::NonFiniteLoss { .. } | Error::Tensor(_) => TRAINING,
    }
}

/// The exit code for the first recognised error in the chain.
pub fn code_for(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<Error>() {
            return core_code(e);
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return IO;
        }
        if cause.downcast_ref::<serde_json::Error>().is_some() {
            return DATA;
        }
    }
    INTERNAL
}
