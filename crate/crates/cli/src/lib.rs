//! Batch front end: parses flags and an optional config file, runs one
//! analysis track on a worker pool and writes its outputs with a manifest.

pub mod config;
pub mod error;
pub mod output;
pub mod tracks;

use std::ffi::OsString;

use clap::Parser;

pub use config::{Cli, RunConfig, Track};
pub use error::{CliError, CliResult, EXIT_DATA, EXIT_FAILURE, EXIT_OK, EXIT_USAGE};
pub use output::Manifest;

/// Result of a completed (or dry) run.
#[derive(Debug)]
pub struct RunSummary {
    pub manifest: Option<Manifest>,
    pub lines: Vec<String>,
}

pub fn run(cfg: &RunConfig) -> CliResult<RunSummary> {
    cfg.validate()?;
    for w in &cfg.warnings {
        eprintln!("warning: {w}");
    }
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(j) = cfg.jobs {
        builder = builder.num_threads(j);
    }
    let pool = builder.build().map_err(|e| CliError::Failed(format!("thread pool: {e}")))?;
    if cfg.dry_run {
        let dir = std::env::temp_dir();
        let mut scratch = output::Outputs::new(&dir)?;
        let r = pool.install(|| tracks::execute(cfg, &mut scratch))?;
        return Ok(RunSummary {
            manifest: None,
            lines: r.lines,
        });
    }
    let mut out = output::Outputs::new(&cfg.out)?;
    let result = pool.install(|| tracks::execute(cfg, &mut out));
    // write the manifest even when validation fails so the report is listed
    let failed_validation = matches!((&cfg.track, &result), (Track::Validate, Err(CliError::Data(_))));
    match result {
        Ok(r) => {
            let manifest = out.finish(cfg.track.name(), cfg.manifest_config())?;
            Ok(RunSummary {
                manifest: Some(manifest),
                lines: r.lines,
            })
        }
        Err(e) => {
            if failed_validation && out.files().next().is_some() {
                out.finish(cfg.track.name(), cfg.manifest_config())?;
            }
            Err(e)
        }
    }
}

/// Parse `args`, run, print the summary and return the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_USAGE,
            };
        }
    };
    let outcome = RunConfig::from_cli(cli).and_then(|cfg| run(&cfg));
    match outcome {
        Ok(s) => {
            for l in &s.lines {
                println!("{l}");
            }
            EXIT_OK
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
