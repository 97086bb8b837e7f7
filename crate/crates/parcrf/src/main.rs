use std::io;
use std::process::ExitCode;

fn main() -> ExitCode {
    let out = io::stdout();
    let err = io::stderr();
    let code = parcrf::cli::run(std::env::args_os(), &mut out.lock(), &mut err.lock());
    ExitCode::from(code as u8)
}
