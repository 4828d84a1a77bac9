use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(stgcsn::cli::run(std::env::args_os()))
}
