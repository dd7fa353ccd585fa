use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use glset::config::parse_config;
use glset::expr::GRAMMAR;
use glset::runner::{self, EXIT_FAULT, EXIT_OK, EXIT_SELFTEST_FAILED};
use glset::selftest::{run_selftest, CRITERIA};

/// Monte-Carlo surface measures on level sets of Gaussian functionals.
#[derive(Parser)]
#[command(name = "glset", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the jobs of a configuration file.
    Run { config: PathBuf },
    /// Run the acceptance battery and print one line per criterion.
    Selftest {
        /// Restrict to these criteria.
        #[arg(long, value_delimiter = ',')]
        criteria: Vec<u32>,
    },
    /// Print the expression grammar.
    Grammar,
}

fn init_threads() -> Result<(), String> {
    let Ok(raw) = std::env::var("GLSET_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| format!("GLSET_THREADS must be a positive integer, got `{raw}`"))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| e.to_string())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(e) = init_threads() {
        eprintln!("glset: {e}");
        return ExitCode::from(EXIT_FAULT as u8);
    }
    let code = match cli.command {
        Command::Grammar => {
            print!("{GRAMMAR}");
            EXIT_OK
        }
        Command::Selftest { criteria } => {
            let ids = if criteria.is_empty() {
                CRITERIA.to_vec()
            } else {
                criteria
            };
            match run_selftest(&ids) {
                Ok(report) => {
                    for line in report.lines() {
                        println!("{line}");
                    }
                    if report.passed {
                        EXIT_OK
                    } else {
                        EXIT_SELFTEST_FAILED
                    }
                }
                Err(e) => {
                    eprintln!("glset: {e}");
                    EXIT_FAULT
                }
            }
        }
        Command::Run { config } => match std::fs::read_to_string(&config) {
            Err(e) => {
                eprintln!("glset: cannot read {}: {e}", config.display());
                EXIT_FAULT
            }
            Ok(text) => match parse_config(&text).and_then(|c| runner::run(&c, &text)) {
                Ok(outcome) => {
                    for line in &outcome.selftest_lines {
                        println!("{line}");
                    }
                    println!(
                        "wrote {} job(s) to {}",
                        outcome.manifest.jobs.len(),
                        outcome.manifest.output_dir
                    );
                    outcome.exit_code
                }
                Err(e) => {
                    eprintln!("glset: {e}");
                    EXIT_FAULT
                }
            },
        },
    };
    ExitCode::from(code as u8)
}
