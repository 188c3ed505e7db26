use std::path::PathBuf;
use std::process::ExitCode;

use augkrylov::{compare, run, CliError, OUT_DIR_ENV};
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "augkrylov", version, about = "Augmented flexible Krylov experiment runner")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the solvers of a configuration file.
    Run { config: PathBuf },
    /// Compare final errors of trace files.
    Compare {
        #[arg(required = true)]
        traces: Vec<PathBuf>,
        /// Print CSV instead of an aligned table.
        #[arg(long)]
        csv: bool,
    },
    /// Generate the problem of a configuration file and save it.
    GenProblem {
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn execute(cli: Cli) -> Result<u8, CliError> {
    match cli.command {
        Command::Run { config } => {
            let out = std::env::var_os(OUT_DIR_ENV).map(PathBuf::from);
            let report = run::run(&config, out)?;
            let failed = report.failures();
            eprintln!(
                "{} of {} solvers finished; outputs in {}",
                report.outcomes.len() - failed,
                report.outcomes.len(),
                report.out_dir.display()
            );
            Ok(if failed > 0 { 2 } else { 0 })
        }
        Command::Compare { traces, csv } => {
            compare::compare(&traces, csv, &mut std::io::stdout().lock())?;
            Ok(0)
        }
        Command::GenProblem { config, out } => {
            run::gen_problem(&config, &out)?;
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
