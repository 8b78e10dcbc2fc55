use clap::Parser;
use lidartwin::app::{run_cli, Cli};

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .target(env_logger::Target::Stderr)
        .init();
    let cli = Cli::parse();
    match run_cli(cli) {
        Ok(manifest) => {
            println!("{}", serde_json::to_string_pretty(&manifest).expect("manifest serializes"));
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            std::process::exit(1);
        }
    }
}
