use clap::Parser;

fn main() {
    let cli = carbonfl_cli::Cli::parse();
    if let Err(e) = carbonfl_cli::run(&cli) {
        eprintln!("error: {e}");
        std::process::exit(e.kind.exit_code());
    }
}
