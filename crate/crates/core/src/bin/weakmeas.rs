use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use weakmeas::cli;

/// Run weak-measurement, feedback and paramp experiments from JSON specs.
#[derive(Parser)]
#[command(name = "weakmeas", version = None, disable_version_flag = true)]
struct Args {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute a spec file and write its outputs.
    Run { spec: PathBuf },
    /// List the keys, units and defaults of an experiment kind.
    Describe { kind: String },
    /// Print the version string.
    Version,
}

fn main() -> ExitCode {
    let args = Args::parse();
    if let Some(n) = std::env::var("WEAKMEAS_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        // Only fails if a pool already exists, which cannot happen here.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    match args.command {
        Command::Run { spec } => match cli::run_file(&spec) {
            Ok(m) => {
                for f in &m.files {
                    println!("{}/{} ({} rows)", m.spec["out"].as_str().unwrap_or("."), f.name, f.rows);
                }
                ExitCode::SUCCESS
            }
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::from(e.exit_code() as u8)
            }
        },
        Command::Describe { kind } => match cli::describe(&kind) {
            Ok(text) => {
                print!("{text}");
                ExitCode::SUCCESS
            }
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::from(2)
            }
        },
        Command::Version => {
            println!("weakmeas {}", cli::version());
            ExitCode::SUCCESS
        }
    }
}
