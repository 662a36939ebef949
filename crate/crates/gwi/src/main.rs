use clap::Parser;
use gwi::cli;

fn main() {
    let args = cli::Cli::parse();
    if let Err(err) = cli::execute(&args) {
        eprintln!("error: {err}");
        std::process::exit(cli::exit_code(&err));
    }
}
