use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use iuzawa_cli::commands::{self, SolveOptions};
use iuzawa_cli::CliError;

#[derive(Parser, Debug)]
#[command(name = "iuzawa", version, about = "Nonsmooth PDE optimal control: classical solvers and iUzawa-Net")]
struct Cli {
    /// Worker threads (defaults to IUZAWA_THREADS, then all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a dataset of random instances with reference solutions.
    Datagen {
        #[arg(long)]
        problem: String,
        #[arg(long)]
        m: usize,
        /// Temporal resolution (parabolic only; defaults to m).
        #[arg(long)]
        mt: Option<usize>,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Solve one dataset instance with a classical method.
    Solve {
        #[arg(long)]
        method: String,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 0)]
        index: usize,
        #[arg(long, default_value_t = 1e-6)]
        rtol: f64,
        /// Stop on the relative error to the stored reference instead of the KKT residual.
        #[arg(long)]
        reference: bool,
        #[arg(long)]
        max_iter: Option<usize>,
        #[arg(long)]
        step_primal: Option<f64>,
        #[arg(long)]
        step_dual: Option<f64>,
    },
    /// Train an iUzawa-Net from a key=value config; trailing --key=value flags override it.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(trailing_var_arg = true, allow_hyphen_values = true)]
        overrides: Vec<String>,
    },
    /// Evaluate a checkpoint on a dataset.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Resample the dataset to this resolution (references are re-solved).
        #[arg(long)]
        resample: Option<usize>,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Time methods on every record of a dataset.
    Bench {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "ssn,uzawa,pd")]
        methods: String,
        #[arg(long, default_value_t = 1e-3)]
        rtol: f64,
        #[arg(long)]
        ckpt: Option<PathBuf>,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Run the quick self-check suite.
    Verify,
}

fn threads(flag: Option<usize>) -> Result<Option<usize>, CliError> {
    if flag.is_some() {
        return Ok(flag);
    }
    match std::env::var("IUZAWA_THREADS") {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| CliError::Usage(format!("IUZAWA_THREADS must be a positive integer, got `{v}`"))),
        Err(_) => Ok(None),
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = threads(cli.threads)? {
        if n == 0 {
            return Err(CliError::Usage("--threads must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Runtime(e.to_string()))?;
    }
    match cli.command {
        Command::Datagen { problem, m, mt, n, seed, out } => commands::datagen(&problem, m, mt, n, seed, &out).map(drop),
        Command::Solve {
            method,
            data,
            index,
            rtol,
            reference,
            max_iter,
            step_primal,
            step_dual,
        } => commands::solve(
            &data,
            &method,
            index,
            rtol,
            reference,
            &SolveOptions { max_iter, step_primal, step_dual },
        ),
        Command::Train { config, overrides } => commands::train(config.as_deref(), &overrides).map(drop),
        Command::Eval { ckpt, data, resample, report } => {
            commands::eval(&ckpt, &data, resample, report.as_deref()).map(drop)
        }
        Command::Bench { data, methods, rtol, ckpt, report } => {
            commands::bench(&data, &methods, rtol, ckpt.as_deref(), report.as_deref()).map(drop)
        }
        Command::Verify => commands::verify(),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
