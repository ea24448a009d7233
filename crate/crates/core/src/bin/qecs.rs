use std::io::{self, Write};

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let args: Vec<String> = std::env::args().skip(1).collect();
    let stdin = io::stdin();
    let code = qecs::cli::main_with_args(
        &args,
        &mut stdin.lock(),
        &mut io::stdout().lock(),
        &mut io::stderr(),
    );
    let _ = io::stdout().flush();
    std::process::exit(code);
}
