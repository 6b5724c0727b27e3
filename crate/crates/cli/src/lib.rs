//! Library side of the `cmst` binary, shared with its integration tests.

pub mod commands;
pub mod config;

use cmst_core::Error;

pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_TRAINING: i32 = 4;
pub const EXIT_IO: i32 = 5;

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => EXIT_CONFIG,
        Error::Data(_) | Error::Format { .. } | Error::Shape(_) => EXIT_DATA,
        Error::Training(_) | Error::NonFinite(_) => EXIT_TRAINING,
        Error::Io { .. } => EXIT_IO,
    }
}
