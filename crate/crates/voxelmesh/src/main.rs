use std::process::ExitCode;

use clap::Parser;
use voxelmesh::cli::{run, Cli};
use voxelmesh::parallel::{init_threads, RayonExecutor};

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_threads();
    match run(&cli, &RayonExecutor) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            eprintln!("voxelmesh: error: {msg}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
