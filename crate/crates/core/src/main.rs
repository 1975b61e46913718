use std::process::ExitCode;

fn main() -> ExitCode {
    ocu_core::cli::main()
}
