use clap::Parser;

fn main() {
    let cli = vqi_cli::Cli::parse();
    if let Err(e) = vqi_cli::run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
