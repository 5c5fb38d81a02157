use std::process::ExitCode;

fn main() -> ExitCode {
    match coopfuse_cli::run(std::env::args_os()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("coopfuse: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
