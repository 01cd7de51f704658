use clap::Parser;

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = euq_cli::Cli::parse();
    match euq_cli::run(&cli) {
        Ok(stats) => log::info!(
            "model evaluations: {}, charged evaluations: {}",
            stats.model_evaluations,
            stats.method_evaluations
        ),
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(e.exit_code());
        }
    }
}
