use clap::Parser;
use simplex_score_cli::config::Cli;

fn main() {
    // clap exits with status 2 on malformed arguments
    let cli = Cli::parse();
    if let Err(e) = simplex_score_cli::run(cli) {
        eprintln!("simplex-score: {e}");
        std::process::exit(e.exit_code());
    }
}
