use clap::Parser;

fn main() {
    let cli = conf_tools::cli::Cli::parse();
    if let Err(err) = conf_tools::cli::run(cli) {
        eprintln!("error: {err:#}");
        std::process::exit(1);
    }
}
