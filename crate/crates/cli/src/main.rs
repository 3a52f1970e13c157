use std::process::ExitCode;

fn main() -> ExitCode {
    cte_cli::main_with(std::env::args_os())
}
