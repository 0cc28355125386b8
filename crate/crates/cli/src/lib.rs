//! Command-line front end: budget planning, verification suites, toy
//! training runs, scheme comparisons and checkpoint I/O.
//!
//! Exit codes: 0 success, 1 failed verification, 2 usage or configuration
//! error, 3 diverged training.

pub mod args;
pub mod checkpoint;
pub mod commands;
pub mod error;
pub mod inputs;
pub mod manifest;

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::Parser;
use serde::Serialize;

pub use args::{Cli, Command, Suite};
pub use checkpoint::{AdapterCheckpoint, WeightsCheckpoint};
pub use error::{CliError, EXIT_DIVERGED, EXIT_OK, EXIT_USAGE, EXIT_VERIFY_FAILED};
pub use manifest::RunManifest;

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "HEADWISE_OUT";
const DEFAULT_OUT_DIR: &str = "headwise-runs";

/// Process-level settings that do not come from flags.
#[derive(Debug, Clone, PartialEq)]
pub struct Context {
    /// Where outputs go when `--out` is absent.
    pub default_out: PathBuf,
    /// Fixed manifest time in Unix seconds; the current time when `None`.
    pub source_date_epoch: Option<i64>,
}

impl Context {
    /// Reads `HEADWISE_OUT` and `SOURCE_DATE_EPOCH`.
    pub fn from_env() -> Self {
        Self {
            default_out: std::env::var_os(OUT_DIR_ENV).map_or_else(|| PathBuf::from(DEFAULT_OUT_DIR), PathBuf::from),
            source_date_epoch: std::env::var("SOURCE_DATE_EPOCH").ok().and_then(|s| s.trim().parse().ok()),
        }
    }

    pub fn timestamp(&self) -> String {
        let t = match self.source_date_epoch {
            Some(secs) => chrono::DateTime::from_timestamp(secs, 0).unwrap_or_default(),
            None => chrono::Utc::now(),
        };
        t.to_rfc3339_opts(chrono::SecondsFormat::Secs, true)
    }
}

/// Pretty JSON with a trailing newline; creates missing parent directories.
pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> error::Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
    }
    let mut text = serde_json::to_string_pretty(value).expect("output serializes");
    text.push('\n');
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

/// Parses `argv` (program name first), runs the command and returns the
/// exit code. Human-readable output goes to `out`, errors to stderr.
pub fn run<I, T>(argv: I, ctx: &Context, out: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let args: Vec<String> = argv.iter().skip(1).map(|a| a.to_string_lossy().into_owned()).collect();
    match commands::dispatch(&cli.command, &args, ctx, out) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
