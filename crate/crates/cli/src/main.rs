use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use statlap::error::CliError;
use statlap::{execute, load_config, output, Command, Overrides};

#[derive(Parser)]
#[command(name = "statlap", version, about = "Bochner Laplacian on statistical manifolds with density")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the configured tasks and the invariant suite, writing artifacts.
    Run(Common),
    /// Run only the invariant suite and print the verification table.
    Verify(Common),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; all cores when absent.
    #[arg(long)]
    threads: Option<usize>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (command, common) = match cli.command {
        Cmd::Run(c) => (Command::Run, c),
        Cmd::Verify(c) => (Command::Verify, c),
    };
    let code = match invoke(command, &common) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("statlap: {e}");
            e.exit_code()
        }
    };
    ExitCode::from(code as u8)
}

fn invoke(command: Command, common: &Common) -> Result<i32, CliError> {
    if let Some(n) = common.threads {
        if n == 0 {
            return Err(CliError::Config("--threads must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(e.to_string()))?;
    }
    let overrides = Overrides { output: common.output.clone(), seed: common.seed };
    let config = load_config(&common.config, &overrides)?;
    let done = execute(command, &config)?;
    let report = &done.outcome.report;
    if command == Command::Verify {
        print!("{}", output::table(&report.checks));
    }
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    for c in report.failed() {
        eprintln!("failed: {} (residual {:e}, tolerance {:e})", c.name, c.residual, c.tolerance);
    }
    if let Some(dir) = &done.output_dir {
        eprintln!("wrote {}", dir.display());
    }
    Ok(done.exit_code())
}
