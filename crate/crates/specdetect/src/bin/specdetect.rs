use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(specdetect::cli::run(std::env::args_os()))
}
