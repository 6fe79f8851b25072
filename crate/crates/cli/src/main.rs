use std::process::ExitCode;

use clap::Parser;
use tremorkit_cli::{run, Cli};

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("TREMORKIT_LOG", "info")).init();
    let cli = Cli::parse();
    let result = cli.resolve().and_then(|cfg| run(cli.command, &cfg));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let report = serde_json::to_string(&e.report()).unwrap_or_else(|_| format!("{{\"error\":\"{}\"}}", e.kind()));
            eprintln!("{report}");
            ExitCode::FAILURE
        }
    }
}
