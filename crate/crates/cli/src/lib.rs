//! Command-line driver for the statlap pipeline: reads a JSON run config,
//! builds the manifold, runs the invariant suite and writes artifacts.

pub mod checks;
pub mod config;
pub mod error;
pub mod output;
pub mod pipeline;

use std::path::{Path, PathBuf};

use config::{RunConfig, Task};
use error::CliError;
use pipeline::Outcome;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Run,
    Verify,
}

/// Overrides given on the command line.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub output: Option<PathBuf>,
    pub seed: Option<u64>,
}

/// Result of a completed invocation. `outcome.report.pass` decides the exit code.
pub struct Finished {
    pub outcome: Outcome,
    pub output_dir: Option<PathBuf>,
}

impl Finished {
    pub fn exit_code(&self) -> i32 {
        if self.outcome.report.pass {
            0
        } else {
            3
        }
    }
}

pub fn load_config(path: &Path, overrides: &Overrides) -> Result<RunConfig, CliError> {
    let mut config = RunConfig::load(path)?;
    if let Some(dir) = &overrides.output {
        config.output_dir = Some(dir.clone());
    }
    if let Some(seed) = overrides.seed {
        config.seed = seed;
    }
    Ok(config)
}

/// Runs a command on a loaded config and writes its artifacts.
pub fn execute(command: Command, config: &RunConfig) -> Result<Finished, CliError> {
    if command == Command::Run && config.output_dir.is_none() {
        return Err(CliError::Config("`run` needs an output directory (`output_dir` or --output)".into()));
    }
    let name = match command {
        Command::Run => "run",
        Command::Verify => "verify",
    };
    let mut outcome = pipeline::execute(config, name)?;
    let dir = config.output_dir.clone();
    if let Some(dir) = &dir {
        if command == Command::Run {
            let mut files: Vec<(&str, Vec<u8>)> = Vec::new();
            if pipeline::wants(config, Task::Spectrum) {
                files.push(("spectrum.csv", output::spectrum_csv(&outcome)?));
                files.push(("eigenfields.json", output::eigenfields_json(&outcome)?));
            }
            if pipeline::wants(config, Task::VddMatrix) {
                files.push(("vdd_matrix.csv", output::vdd_csv(&outcome)?));
            }
            if pipeline::wants(config, Task::KernelGram) {
                files.push(("gram.csv", output::gram_csv(&outcome)?));
            }
            outcome.report.artifacts = files.iter().map(|(n, _)| n.to_string()).collect();
            for (n, bytes) in &files {
                output::write_atomic(dir, n, bytes)?;
            }
        }
        output::write_atomic(dir, "report.json", &output::report_json(&outcome)?)?;
    }
    Ok(Finished { outcome, output_dir: dir })
}
