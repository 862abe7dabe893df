use clap::Parser;

fn main() {
    let cli = ebm_core::cli::Cli::parse();
    if let Err(e) = ebm_core::cli::run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
