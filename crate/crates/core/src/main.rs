use clap::Parser;
use hydrotact::cli::{run, Args};

fn main() {
    std::process::exit(run(Args::parse()));
}
