use clap::Parser;

fn main() {
    env_logger::init();
    let cli = sigwgan_cli::args::Cli::parse();
    if let Err(err) = sigwgan_cli::args::run(cli) {
        eprintln!("error: {err}");
        std::process::exit(1);
    }
}
