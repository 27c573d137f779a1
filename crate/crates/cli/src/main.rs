use std::process::ExitCode;

fn main() -> ExitCode {
    fqln_cli::alloc::retain_freed_memory();
    let argv: Vec<String> = std::env::args().skip(1).collect();
    match fqln_cli::run_args(&argv) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
