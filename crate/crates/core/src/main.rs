use std::process::ExitCode;

fn main() -> ExitCode {
    trajgate::cli::main()
}
