use std::process::ExitCode;

fn main() -> ExitCode {
    env_logger::init();
    ExitCode::from(semmatch_core::cli::run().clamp(0, 255) as u8)
}
