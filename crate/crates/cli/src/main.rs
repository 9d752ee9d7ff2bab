//! `tiercode`: run a project through the agent hierarchy, benchmark against
//! fixtures, build and query knowledge bases, inspect finished runs.

mod commands;
mod settings;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use tracing_subscriber::EnvFilter;

use settings::{CliError, GlobalArgs};

/// Success, or a run that reached `done`.
pub const EXIT_OK: u8 = 0;
/// The work ran but did not succeed: a failed run or benchmark fixture errors.
pub const EXIT_FAILED: u8 = 1;
/// Bad flags, configuration or input files; nothing was executed.
pub const EXIT_USAGE: u8 = 2;
/// An environment problem stopped the work (I/O, sandbox, model endpoint).
pub const EXIT_RUNTIME: u8 = 3;
pub const EXIT_INTERRUPTED: i32 = 130;

#[derive(Debug, Parser)]
#[command(name = "tiercode", version, about = "Hierarchical multi-agent code generation for image-processing projects")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,

    /// More log output on stderr (-v info, -vv debug). RUST_LOG overrides.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a project from a manifest.
    Run(commands::RunArgs),
    /// Generate and score every fixture under a directory.
    Bench(commands::BenchArgs),
    /// Build or query a knowledge-base index.
    Kb {
        #[command(subcommand)]
        command: commands::KbCommand,
    },
    /// List thought-pool records of a finished run.
    Inspect(commands::InspectArgs),
    /// Print the resolved configuration.
    Config,
}

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let filter = EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new(level));
    let _ = tracing_subscriber::fmt().with_env_filter(filter).with_writer(std::io::stderr).try_init();
}

fn install_interrupt_handler() {
    let installed = ctrlc::set_handler(|| {
        let _gate = tiercode::pool::quiesce_journals();
        eprintln!("interrupted; thought-pool journals end on complete records");
        std::process::exit(EXIT_INTERRUPTED);
    });
    if let Err(e) = installed {
        tracing::warn!(error = %e, "no interrupt handler");
    }
}

fn dispatch(cli: Cli) -> Result<u8, CliError> {
    let settings = settings::Settings::from_args(&cli.global)?;
    match cli.command {
        Command::Run(args) => commands::run(&settings, &args),
        Command::Bench(args) => commands::bench(&settings, &args),
        Command::Kb { command } => commands::kb(&settings, &command),
        Command::Inspect(args) => commands::inspect(&args),
        Command::Config => {
            print!("{}", settings.describe());
            Ok(EXIT_OK)
        }
    }
}

fn main() -> ExitCode {
    // a closed stdout (`tiercode ... | head`) ends the process quietly
    #[cfg(unix)]
    unsafe {
        libc::signal(libc::SIGPIPE, libc::SIG_DFL);
    }
    let cli = Cli::parse();
    init_logging(cli.verbose);
    install_interrupt_handler();
    match dispatch(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                CliError::Usage(_) => EXIT_USAGE,
                CliError::Runtime(_) => EXIT_RUNTIME,
            })
        }
    }
}

/// `<parent>/<name>`, or `<parent>/<name>-2`, `-3`, ... if taken.
pub fn fresh_dir(parent: PathBuf, name: &str) -> PathBuf {
    let first = parent.join(name);
    if !first.exists() {
        return first;
    }
    (2..).map(|n| parent.join(format!("{name}-{n}"))).find(|p| !p.exists()).expect("unbounded")
}
