use std::process::ExitCode;

fn main() -> ExitCode {
    hudn::cli::main_with(std::env::args_os())
}
