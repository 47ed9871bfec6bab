use std::process::ExitCode;

fn main() -> ExitCode {
    juncnet::cli::main_with_args(std::env::args_os().collect())
}
