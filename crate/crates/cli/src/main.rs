use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use uwsl_cli::Command;

/// Simulate, calibrate, fuse, reconstruct, register and evaluate
/// structured-light scans. Any config key can be overridden with
/// `--section.key value` or `--section.key=value`.
#[derive(Debug, Parser)]
#[command(name = "uwsl", version)]
struct Args {
    command: Command,
    /// TOML scenario file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(trailing_var_arg = true, allow_hyphen_values = true)]
    overrides: Vec<String>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let args = match Args::try_parse() {
        Ok(a) => a,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let seed = std::env::var("UWSL_SEED").ok();
    match uwsl_cli::run(args.command, args.config, &args.overrides, seed.as_deref()) {
        Ok(report) => {
            for m in &report.metrics {
                println!("{}.{} = {} {}", m.stage, m.name, m.value, m.unit);
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
