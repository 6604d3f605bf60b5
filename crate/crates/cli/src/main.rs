use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use qtensor_cli::compare::{breaches, diff, format_table, read_summary};
use qtensor_cli::config::ExperimentConfig;
use qtensor_cli::export::{export, Format};
use qtensor_cli::run::{execute, RunError};
use qtensor_cli::{configure_threads, EXIT_DIFF, EXIT_OK, EXIT_SOLVER, EXIT_USAGE};

/// Landau-de Gennes Q-tensor experiments.
#[derive(Parser)]
#[command(name = "qtensor", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the continuation and analyses described by a config file.
    Run { config: PathBuf },
    /// Tabulate differences between the summaries of two run directories.
    Compare {
        dir_a: PathBuf,
        dir_b: PathBuf,
        /// Exit with status 1 if a relative delta exceeds this value.
        #[arg(long)]
        tol: Option<f64>,
    },
    /// Convert a field dump to CSV or QFIELD.
    Export {
        dump: PathBuf,
        #[arg(long, value_enum)]
        format: FormatArg,
        /// Output file; standard output if omitted.
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Csv,
    Qfield,
}

fn fail(code: i32, msg: impl std::fmt::Display) -> ExitCode {
    eprintln!("qtensor: {msg}");
    ExitCode::from(code as u8)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(e) = configure_threads() {
        return fail(EXIT_USAGE, e);
    }
    match cli.command {
        Command::Run { config } => {
            let cfg = match ExperimentConfig::load(&config) {
                Ok(c) => c,
                Err(e) => return fail(EXIT_USAGE, format!("{}: {e}", config.display())),
            };
            match execute(&cfg) {
                Ok(dir) => {
                    println!("{}", dir.display());
                    ExitCode::from(EXIT_OK as u8)
                }
                Err(e @ RunError::Setup(_)) => fail(EXIT_USAGE, e),
                Err(e @ RunError::Solver { .. }) => fail(EXIT_SOLVER, e),
            }
        }
        Command::Compare { dir_a, dir_b, tol } => {
            if let Some(t) = tol {
                if !(t >= 0.0) {
                    return fail(EXIT_USAGE, format!("--tol must be non-negative (got {t})"));
                }
            }
            let (a, b) = match (read_summary(&dir_a), read_summary(&dir_b)) {
                (Ok(a), Ok(b)) => (a, b),
                (Err(e), _) | (_, Err(e)) => return fail(EXIT_USAGE, e),
            };
            let rows = diff(&a, &b);
            print!("{}", format_table(&rows));
            match tol {
                Some(t) if breaches(&rows, t) > 0 => {
                    fail(EXIT_DIFF, format!("{} value(s) differ by more than {t}", breaches(&rows, t)))
                }
                _ => ExitCode::from(EXIT_OK as u8),
            }
        }
        Command::Export { dump, format, output } => {
            let format = match format {
                FormatArg::Csv => Format::Csv,
                FormatArg::Qfield => Format::Qfield,
            };
            let result = match &output {
                Some(path) => std::fs::File::create(path)
                    .map_err(|e| format!("{}: {e}", path.display()))
                    .and_then(|f| {
                        let mut w = std::io::BufWriter::new(f);
                        export(&dump, format, &mut w)?;
                        std::io::Write::flush(&mut w).map_err(|e| e.to_string())
                    }),
                None => export(&dump, format, &mut std::io::stdout().lock()),
            };
            match result {
                Ok(()) => ExitCode::from(EXIT_OK as u8),
                Err(e) => fail(EXIT_USAGE, e),
            }
        }
    }
}
