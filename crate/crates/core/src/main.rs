use std::process::ExitCode;

fn main() -> ExitCode {
    crowdtruth::cli::main_with_args(std::env::args_os())
}
