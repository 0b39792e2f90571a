use clap::Parser;

use stochdp::cli::{run, RunConfig};

fn main() {
    let cfg = RunConfig::parse();
    let (code, text) = run(&cfg);
    if code == 0 {
        print!("{text}");
    } else {
        eprint!("{text}");
    }
    std::process::exit(code);
}
