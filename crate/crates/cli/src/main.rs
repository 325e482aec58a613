use std::process::ExitCode;

use clap::Parser;
use tracing_subscriber::EnvFilter;
use tweetsense_cli::{Cli, CliError, Command};

fn print_json(v: serde_json::Value) {
    println!("{}", serde_json::to_string_pretty(&v).expect("report serializes"));
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_env_filter(EnvFilter::try_from_env("SENTIMENT_LOG").unwrap_or_else(|_| EnvFilter::new("info")))
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Train(args) => print_json(serde_json::json!(tweetsense_cli::train(&args)?.report)),
        Command::Evaluate(args) => print_json(serde_json::json!(tweetsense_cli::evaluate(&args)?)),
        Command::Curve(args) => {
            let curve = tweetsense_cli::curve(&args)?;
            tracing::info!(rows = curve.points.len(), out = %args.out.display(), "curve written");
        }
        Command::Serve(args) => runtime()?.block_on(tweetsense_cli::serve(&args))?,
        Command::Predict(args) => print_json(runtime()?.block_on(tweetsense_cli::predict(&args))?),
    }
    Ok(())
}

fn runtime() -> Result<tokio::runtime::Runtime, CliError> {
    tokio::runtime::Runtime::new().map_err(|e| CliError::Training(format!("cannot start async runtime: {e}")))
}
