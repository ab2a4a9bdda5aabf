use clap::Parser;

use downside_cli::args::Cli;

fn main() {
    let cli = Cli::parse();
    std::process::exit(downside_cli::execute(&cli));
}
