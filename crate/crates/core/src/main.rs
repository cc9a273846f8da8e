use std::process::ExitCode;

fn main() -> ExitCode {
    gbdsde::cli::main()
}
