use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(icmse_service::cli::run(std::env::args_os()) as u8)
}
