use clap::Parser;

use kage::cli::{execute, Args};

fn main() {
    let args = Args::parse();
    match execute(&args) {
        Ok(code) => std::process::exit(code),
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(2);
        }
    }
}
