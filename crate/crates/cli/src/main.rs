use clap::Parser;
use nlselect_cli::args::{apply_seed_env, SEED_ENV};
use nlselect_cli::{run, Cli};

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let mut cli = Cli::parse();
    let code = apply_seed_env(&mut cli, std::env::var(SEED_ENV).ok())
        .and_then(|_| run(&cli))
        .unwrap_or_else(|e| {
            eprintln!("error: {e:#}");
            2
        });
    std::process::exit(code);
}
