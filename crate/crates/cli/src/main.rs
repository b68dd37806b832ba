use oukl_cli::{parse_args, run, ConfigError, EXIT_CONFIG};
use std::io::Write;

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let config = match parse_args(&args) {
        Ok(c) => c,
        Err(ConfigError::Info(text)) => {
            print!("{text}");
            return;
        }
        Err(e) => {
            eprintln!("config error: {e}");
            std::process::exit(EXIT_CONFIG);
        }
    };
    let stdout = std::io::stdout();
    let stderr = std::io::stderr();
    let code = run(&config, &mut stdout.lock(), &mut stderr.lock());
    let _ = std::io::stdout().flush();
    std::process::exit(code);
}
