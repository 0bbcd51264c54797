use std::process::ExitCode;

fn main() -> ExitCode {
    dctmc_cli::cli::run(std::env::args_os())
}
