//! Binary entry point: parse, dispatch, and exit with the CLI's code.

fn main() {
    std::process::exit(mnat_cli::run(std::env::args_os()));
}
