use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::Serialize;
use serde_json::json;

mod config;
mod error;
mod eval;
mod generate;
mod preprocess;
mod serve;

use config::FileConfig;
use error::{CliError, CliResult};

/// Bookended story generation: build training samples, generate stories,
/// score them, or serve the interactive session API.
#[derive(Debug, Parser)]
#[command(name = "bookend", version)]
struct Cli {
    /// TOML file with defaults for any subcommand; flags take precedence.
    #[arg(long, global = true, env = "BOOKEND_CONFIG")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write the four training-sample families for a corpus.
    Preprocess(preprocess::PreprocessArgs),
    /// Generate stories for one or more start sentences.
    Generate(generate::GenerateArgs),
    /// Score story files and print the metrics table.
    Eval(eval::EvalArgs),
    /// Run the session HTTP API.
    Serve(serve::ServeArgs),
}

pub(crate) fn create_parent(path: &Path) -> CliResult<()> {
    match path.parent().filter(|d| !d.as_os_str().is_empty()) {
        Some(dir) => std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e)),
        None => Ok(()),
    }
}

pub(crate) fn write_json(path: &Path, value: &impl Serialize) -> CliResult<()> {
    create_parent(path)?;
    let mut text = serde_json::to_string_pretty(value).expect("json");
    text.push('\n');
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn run(cli: Cli) -> CliResult<()> {
    let file = FileConfig::load(cli.config.as_deref())?;
    match cli.command {
        Command::Preprocess(args) => preprocess::run(args, &file),
        Command::Generate(args) => generate::run(args, &file),
        Command::Eval(args) => eval::run(args, &file),
        Command::Serve(args) => serve::run(args, &file),
    }
}

fn fail(code: &str, message: &str, exit: u8) -> ExitCode {
    eprintln!("{}", json!({ "error": { "code": code, "message": message } }));
    ExitCode::from(exit)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => e.exit(),
        Err(e) => return fail("usage", e.to_string().trim_end(), 2),
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(e.code(), &e.to_string(), 1),
    }
}
