use clap::Parser;

fn main() {
    let cli = herald_cli::Cli::parse();
    if let Err(e) = herald_cli::run(&cli) {
        eprintln!("herald: {e}");
        std::process::exit(e.exit_code());
    }
}
