//! The `mvkit` command-line driver.
//!
//! Exit codes: 0 on success, 1 when a property or invariant is violated,
//! 2 for invalid input or arguments.

pub mod commands;
pub mod json;
pub mod parse;
pub mod report;
pub mod scene;
pub mod trace;
pub mod verify;

use clap::Parser;
use std::ffi::OsString;
use std::fmt;

pub const EXIT_OK: i32 = 0;
pub const EXIT_VIOLATION: i32 = 1;
pub const EXIT_INVALID: i32 = 2;

#[derive(Debug)]
pub enum CliError {
    /// Bad arguments or unreadable/malformed input.
    Input(String),
    /// A checked property failed.
    Violation(String),
    Core(mvkit::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => EXIT_INVALID,
            CliError::Violation(_) => EXIT_VIOLATION,
            CliError::Core(e) => match e {
                mvkit::Error::InvalidArgument(_) | mvkit::Error::Unsupported(_) => EXIT_INVALID,
                mvkit::Error::TrainingDiverged { .. } | mvkit::Error::NumericalFailure { .. } => EXIT_VIOLATION,
            },
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Input(m) => write!(f, "{m}"),
            CliError::Violation(m) => write!(f, "violation: {m}"),
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<mvkit::Error> for CliError {
    fn from(e: mvkit::Error) -> Self {
        CliError::Core(e)
    }
}

/// Parse `argv` (program name first) and run the subcommand.
pub fn run_command<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match commands::Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_INVALID } else { EXIT_OK };
        }
    };
    match commands::execute(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("mvkit: {e}");
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn usage_errors_exit_2() {
        assert_eq!(run_command(["mvkit", "frobnicate"]), EXIT_INVALID);
        assert_eq!(run_command(["mvkit"]), EXIT_INVALID);
        assert_eq!(run_command(["mvkit", "synth", "--views", "x"]), EXIT_INVALID);
        assert_eq!(run_command(["mvkit", "--help"]), EXIT_OK);
    }

    #[test]
    fn core_errors_map_to_exit_codes() {
        let code = |e: mvkit::Error| CliError::from(e).exit_code();
        assert_eq!(code(mvkit::Error::InvalidArgument("x".into())), EXIT_INVALID);
        assert_eq!(code(mvkit::Error::Unsupported("x".into())), EXIT_INVALID);
        assert_eq!(
            code(mvkit::Error::TrainingDiverged {
                step: 1,
                loss: f64::NAN
            }),
            EXIT_VIOLATION
        );
        assert_eq!(code(mvkit::Error::NumericalFailure { t: 1, view: 0 }), EXIT_VIOLATION);
        assert_eq!(CliError::Violation("x".into()).exit_code(), EXIT_VIOLATION);
    }
}
