//! Library side of the `hybridgan` command-line tool.

pub mod commands;
pub mod config;
pub mod report;

use hybridgan::Error;

pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

/// 3 for numeric faults, 2 for everything else.
pub fn exit_code(err: &Error) -> i32 {
    if err.is_numeric() {
        EXIT_NUMERIC
    } else {
        EXIT_VALIDATION
    }
}
