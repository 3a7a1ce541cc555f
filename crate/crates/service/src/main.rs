use clap::Parser;

fn main() {
    let cli = cia_service::cli::Cli::parse();
    std::process::exit(cia_service::cli::run(cli));
}
