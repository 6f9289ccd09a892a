use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::process::ExitCode;

use clap::Parser;
use hka::cli::{run, Cli, Outcome};

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let mut out: Box<dyn Write> = match &cli.global.out {
        Some(path) => match File::create(path) {
            Ok(f) => Box::new(BufWriter::new(f)),
            Err(e) => {
                eprintln!("error: {}: {e}", path.display());
                return ExitCode::from(2);
            }
        },
        None => Box::new(BufWriter::new(io::stdout().lock())),
    };
    let result = run(&cli, out.as_mut());
    let flushed = out.flush();
    match (result, flushed) {
        (Ok(Outcome::Ok), Ok(())) => ExitCode::SUCCESS,
        (Ok(Outcome::ChecksFailed), Ok(())) => {
            eprintln!("error: verification failed");
            ExitCode::from(1)
        }
        (Ok(Outcome::NotConverged), Ok(())) => {
            eprintln!("warning: calibration did not converge");
            ExitCode::from(3)
        }
        (Err(e), _) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        (Ok(_), Err(e)) => {
            eprintln!("error: writing output: {e}");
            ExitCode::from(2)
        }
    }
}
