//! `difno` command-line driver: dataset generation, training, evaluation, inverse solves,
//! lemma verification and reports, all reproducible from a flat configuration file.

pub mod config;
pub mod error;
pub mod eval;
pub mod gen_data;
pub mod invert;
pub mod output;
pub mod report;
pub mod setup;
pub mod train;
pub mod verify;

use clap::{Parser, Subcommand};
use config::Config;
use error::{CliError, CliResult};
use std::path::PathBuf;

#[derive(Parser, Debug)]
#[command(name = "difno", about = "Derivative-informed Fourier neural operators")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Flat `key = value` configuration; defaults apply to absent keys.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Training checkpoint to continue from.
    #[arg(long, global = true)]
    pub resume: Option<PathBuf>,
}

#[derive(Subcommand, Debug, Clone, PartialEq, Eq)]
pub enum Command {
    GenData,
    Train,
    Eval,
    Invert,
    Verify,
    /// Plot CSV files (given here or in `report.inputs`).
    Report { paths: Vec<String> },
}

pub fn resolve(cli: &Cli) -> CliResult<Config> {
    let mut cfg = match &cli.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    if let Some(s) = cli.seed {
        cfg.set("seed", s.to_string())?;
    }
    if let Some(o) = &cli.out {
        cfg.set("out", o.display().to_string())?;
    }
    Ok(cfg)
}

fn threads() -> CliResult<()> {
    if let Ok(v) = std::env::var("DIFNO_THREADS") {
        let n: usize = v.trim().parse().ok().filter(|&n| n > 0).ok_or_else(|| CliError::config(format!("DIFNO_THREADS = `{v}` is not a positive integer")))?;
        // A pool that already exists (e.g. in-process reruns) keeps its size.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(())
}

pub fn execute(cli: &Cli) -> CliResult<()> {
    threads()?;
    let cfg = resolve(cli)?;
    if cli.resume.is_some() && cli.command != Command::Train {
        return Err(CliError::config("--resume applies to `train` only"));
    }
    match &cli.command {
        Command::GenData => gen_data::run(&cfg),
        Command::Train => train::run(&cfg, cli.resume.as_deref()),
        Command::Eval => eval::run(&cfg),
        Command::Invert => invert::run(&cfg),
        Command::Verify => verify::run(&cfg),
        Command::Report { paths } => report::run(&cfg, paths),
    }
}

/// Parses `args` (program name first), runs the command and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("difno: {e}");
            e.kind.exit_code()
        }
    }
}
