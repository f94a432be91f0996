//! Operator tooling shared by the `vizmet` binary and its tests.

pub mod demo;

use vizmet_api::ApiError;
use vizmet_core::Error;

/// Exit status for a failed command: 1 for rejected input, 2 for I/O or backend trouble.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    if let Some(e) = err.downcast_ref::<Error>() {
        return core_exit_code(e);
    }
    if let Some(e) = err.downcast_ref::<ApiError>() {
        return match e {
            ApiError::Core(inner) => core_exit_code(inner),
            ApiError::Io(_) | ApiError::Config(_) => 2,
            _ => 1,
        };
    }
    if err.downcast_ref::<vizmet_core::dataset::ExportError>().is_some()
        || err.downcast_ref::<std::io::Error>().is_some()
    {
        return 2;
    }
    1
}

fn core_exit_code(e: &Error) -> i32 {
    match e {
        Error::Io(_)
        | Error::Json(_)
        | Error::Blob(_)
        | Error::Parse(_)
        | Error::ParseExhausted { .. }
        | Error::Gateway { .. } => 2,
        _ => 1,
    }
}
