use std::process::ExitCode;

fn main() -> ExitCode {
    unetsr::cli::main_from_args(std::env::args_os())
}
