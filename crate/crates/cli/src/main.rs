use std::io::{self, Write};

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let stdout = io::stdout();
    let mut out = stdout.lock();
    let code = mhyper_cli::main_with_args(std::env::args_os(), &mut out);
    let _ = out.flush();
    std::process::exit(code);
}
