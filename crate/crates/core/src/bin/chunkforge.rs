use std::process::ExitCode;

use clap::Parser;

use chunkforge::cli::{run, Cli};

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(err) => {
            eprintln!("error: {err}");
            println!("{}", err.to_json());
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
