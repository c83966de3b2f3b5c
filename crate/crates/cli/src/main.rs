use clap::Parser;
use tracefda_cli::commands::{run, Cli};

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Some(t) = cli.common.threads {
        if t == 0 {
            eprintln!(
                "{}",
                tracefda_cli::CliError::validation("--threads must be positive").to_json()
            );
            std::process::exit(1);
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .expect("thread pool is built once");
    }
    match run(&cli) {
        Ok(outcome) => {
            println!("{}", outcome.summary);
        }
        Err(e) => {
            eprintln!("{}", e.to_json());
            std::process::exit(e.exit_code());
        }
    }
}
