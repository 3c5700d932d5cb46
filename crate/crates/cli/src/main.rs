use clap::Parser;

fn main() {
    let cli = rwlab_cli::Cli::parse();
    if let Err(e) = rwlab_cli::run(cli) {
        eprintln!("rwlab: {e}");
        std::process::exit(e.code());
    }
}
