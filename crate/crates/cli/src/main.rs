use clap::Parser;

fn main() {
    let cli = idls_cli::Cli::parse();
    if let Err(e) = idls_cli::run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
