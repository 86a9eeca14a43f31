use clap::Parser;

use gridrl_cli::{run, Cli};

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(outcome) => {
            println!("{}", serde_json::to_string_pretty(&outcome.summary).expect("summary serializes"));
            eprintln!("wrote {} files to {}", outcome.outputs.len() + 1, outcome.out.display());
        }
        Err(e) => {
            eprintln!("gridrl: {e}");
            std::process::exit(e.exit_code());
        }
    }
}
