//! Command-line pipeline for amodal completion: job specification, the
//! `lift | classify | complete | verify | demo` commands and their file
//! outputs.

pub mod checks;
pub mod commands;
pub mod job;
pub mod output;

pub use commands::{
    cmd_classify, cmd_complete, cmd_demo, cmd_lift, cmd_verify, CliError, EXIT_DEGENERACY,
    EXIT_NO_SOLUTION, EXIT_OK, EXIT_VERIFY,
};
pub use job::{FieldSource, JobSpec};
pub use output::ImageFormat;
