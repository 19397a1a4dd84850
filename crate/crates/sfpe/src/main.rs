use std::process::ExitCode;

fn main() -> ExitCode {
    sfpe::cli::run_main()
}
