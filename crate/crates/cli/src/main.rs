use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;

#[derive(Parser, Debug)]
#[command(name = "arwimcf", version, about = "Inverse mean curvature flow in ARW spacetimes")]
struct Cli {
    /// More log output (repeat for debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Scale-factor checks.
    #[command(subcommand)]
    Background(BackgroundCmd),
    /// Perfect-fluid backgrounds.
    #[command(subcommand)]
    Cosmology(CosmologyCmd),
    /// Flow integration.
    #[command(subcommand)]
    Flow(FlowCmd),
    /// Evaluate the convergence claims on a stored run.
    Analyze(AnalyzeArgs),
    /// Follow markers through the rescaled flow and check the transition table.
    Transition(Common),
    /// Rebuild diagnostics, report and plots of a stored run.
    Report(AnalyzeArgs),
}

#[derive(Subcommand, Debug)]
enum BackgroundCmd {
    /// Certify the configured scale factor.
    Check {
        #[command(flatten)]
        common: Common,
        /// Certificate tolerance.
        #[arg(long)]
        tol: Option<f64>,
    },
}

#[derive(Subcommand, Debug)]
enum CosmologyCmd {
    /// Solve the Friedmann constraint and export the scale factor.
    Solve(Common),
}

#[derive(Subcommand, Debug)]
enum FlowCmd {
    /// Run the flow from the initial data.
    Run(RunArgs),
    /// Continue a run from a snapshot file.
    Resume {
        #[command(flatten)]
        run: RunArgs,
        /// Snapshot file to continue from.
        #[arg(long)]
        resume: PathBuf,
    },
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// Run configuration (TOML).
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory; defaults to `out_dir` from the config.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
pub struct RunArgs {
    #[command(flatten)]
    pub common: Common,
    /// Override `flow.t_end`.
    #[arg(long)]
    pub t_end: Option<f64>,
    /// Override `flow.rel_tol`.
    #[arg(long)]
    pub tol: Option<f64>,
    /// Claims to evaluate: all, none, or a comma-separated list.
    #[arg(long, default_value = "all")]
    pub claims: String,
}

#[derive(Args, Debug, Clone)]
pub struct AnalyzeArgs {
    #[command(flatten)]
    pub common: Common,
    /// Claims to evaluate: all, none, or a comma-separated list.
    #[arg(long, default_value = "all")]
    pub claims: String,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();

    if let Err(e) = commands::configure_threads() {
        eprintln!("error: {e}");
        return ExitCode::from(commands::EXIT_CONFIG);
    }
    let result = match cli.command {
        Command::Background(BackgroundCmd::Check { common, tol }) => commands::background_check(&common, tol),
        Command::Cosmology(CosmologyCmd::Solve(common)) => commands::cosmology_solve(&common),
        Command::Flow(FlowCmd::Run(args)) => commands::flow_run(&args, None),
        Command::Flow(FlowCmd::Resume { run, resume }) => commands::flow_run(&run, Some(&resume)),
        Command::Analyze(args) => commands::analyze(&args),
        Command::Transition(common) => commands::transition(&common),
        Command::Report(args) => commands::report(&args),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(commands::EXIT_CHECKS_FAILED),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(commands::exit_code(&e))
        }
    }
}
