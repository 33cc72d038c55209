use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(mcmc_robustness::cli::main_with_args(std::env::args_os()))
}
