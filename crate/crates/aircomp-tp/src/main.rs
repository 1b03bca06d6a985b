use std::process::ExitCode;

fn main() -> ExitCode {
    env_logger::init();
    ExitCode::from(aircomp_tp::harness::cli(std::env::args()) as u8)
}
