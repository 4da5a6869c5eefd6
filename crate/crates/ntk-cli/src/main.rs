use std::process::ExitCode;

fn main() -> ExitCode {
    ntk_cli::cli::cli_main()
}
