use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(loadtensor::cli::run() as u8)
}
