use clap::Parser;

use facelift_cli::{execute, exit_code, Cli};

fn main() {
    if let Ok(raw) = std::env::var("FACELIFT_THREADS") {
        match raw.parse::<usize>() {
            Ok(n) if n > 0 => {
                rayon::ThreadPoolBuilder::new()
                    .num_threads(n)
                    .build_global()
                    .expect("global pool is configured once");
            }
            _ => {
                eprintln!("error: FACELIFT_THREADS must be a positive integer, got `{raw}`");
                std::process::exit(facelift_cli::EXIT_VALIDATION);
            }
        }
    }
    let cli = Cli::parse();
    match execute(cli) {
        Ok(manifest) => {
            for name in manifest.outputs.keys() {
                println!("{name}");
            }
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            std::process::exit(exit_code(&e));
        }
    }
}
