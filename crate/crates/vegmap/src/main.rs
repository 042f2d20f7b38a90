use clap::Parser;

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn,vegmap=info")).init();
    let cli = vegmap::cli::Cli::parse();
    if let Err(e) = vegmap::cli::run(cli) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
