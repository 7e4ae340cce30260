use clap::Parser;
use illu_cli::{run, Cli};

fn main() {
    if let Some(n) = std::env::var("ILLU_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("warning: ILLU_THREADS ignored: {e}");
        }
    }
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
