use clap::Parser;

fn main() {
    let cli = hinge_overfit_cli::Cli::parse();
    std::process::exit(hinge_overfit_cli::run(cli));
}
