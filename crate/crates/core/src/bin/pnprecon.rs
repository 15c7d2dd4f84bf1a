use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(pnprecon::cli::run_from(std::env::args_os()))
}
