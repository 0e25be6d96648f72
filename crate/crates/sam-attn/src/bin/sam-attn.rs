use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(sam_attn::cli::run())
}
