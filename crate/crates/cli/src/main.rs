use clap::Parser;
use odeflow_cli::{Cli, EXIT_OK, EXIT_USAGE};

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    let command_line = std::iter::once("odeflow".to_string())
        .chain(std::env::args().skip(1))
        .collect::<Vec<_>>()
        .join(" ");
    let code = match odeflow_cli::run(&cli, &command_line) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("odeflow: {e}");
            e.exit_code()
        }
    };
    std::process::exit(code);
}
