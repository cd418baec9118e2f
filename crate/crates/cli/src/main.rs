//! Command-line front end: train, unlearn, evaluate, sweep, verify, report.

mod commands;
mod config;
mod layout;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fedexcise::experiment::Method;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0} oracle check(s) failed")]
    VerifyFailed(usize),
}

#[derive(Parser, Debug)]
#[command(name = "fedexcise", version, about = "Federated dual-encoder training and subspace-excision unlearning")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct GlobalArgs {
    /// TOML experiment config; defaults are used when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; repeat to run several. Overrides `seeds` in the config.
    #[arg(long, global = true)]
    seed: Vec<u64>,
    /// Overwrite existing artifacts.
    #[arg(long, global = true)]
    force: bool,
    /// Worker threads for independent seeds and blocks.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    /// Raise log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    /// Override `output_dir`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train the federation and store w_n, the update history and the ledger.
    Train,
    /// Run unlearning methods against a trained federation.
    Unlearn {
        /// Methods to run; defaults to `methods` in the config.
        #[arg(long = "method", value_parser = parse_method)]
        methods: Vec<Method>,
    },
    /// Evaluate stored unlearning results into report.json and summary.csv.
    Eval,
    /// Combine per-seed reports into summary.csv and aggregate.csv.
    Report,
    /// Train, unlearn, evaluate and report in one go.
    Run,
    /// Sweep one axis and record EASE at every grid point.
    Sweep {
        #[arg(long, value_enum)]
        axis: commands::Axis,
        /// Comma-separated grid; a default grid is used when omitted.
        #[arg(long, value_delimiter = ',')]
        values: Vec<f64>,
    },
    /// Run the oracle suite and write verify.json.
    Verify,
}

fn parse_method(s: &str) -> Result<Method, String> {
    s.parse().map_err(|e: fedexcise::Error| e.to_string())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<CliError>() {
            return match e {
                CliError::Usage(_) => 1,
                CliError::VerifyFailed(_) => 3,
            };
        }
        if let Some(e) = cause.downcast_ref::<fedexcise::Error>() {
            return match e {
                fedexcise::Error::Numeric(_) => 2,
                _ => 1,
            };
        }
    }
    1
}

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).parse_default_env().format_timestamp(None).init();
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let g = cli.global;
    if g.jobs == 0 {
        return Err(CliError::Usage("--jobs must be at least 1".into()).into());
    }
    rayon::ThreadPoolBuilder::new().num_threads(g.jobs).build_global()?;
    let mut cfg = config::load(g.config.as_deref(), std::env::vars())?;
    if !g.seed.is_empty() {
        cfg.seeds = g.seed.clone();
    }
    if let Some(out) = &g.out {
        cfg.output_dir = out.display().to_string();
    }
    if let Command::Verify = cli.command {
        let seed = g.seed.first().copied().unwrap_or(0);
        return commands::verify(std::path::Path::new(&cfg.output_dir), seed);
    }
    cfg.validate()?;
    let ctx = commands::Ctx::new(cfg, g.force)?;
    match cli.command {
        Command::Train => ctx.train(),
        Command::Unlearn { methods } => ctx.unlearn(&methods),
        Command::Eval => ctx.eval(),
        Command::Report => ctx.report(),
        Command::Run => ctx.run(),
        Command::Sweep { axis, values } => ctx.sweep(axis, &values),
        Command::Verify => unreachable!("handled above"),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    init_logging(cli.global.verbose);
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
