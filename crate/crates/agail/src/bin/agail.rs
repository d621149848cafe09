use std::process::ExitCode;

fn main() -> ExitCode {
    agail::cli::main()
}
