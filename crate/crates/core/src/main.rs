use std::process::exit;

fn main() {
    exit(depthtune::cli::run(std::env::args_os()));
}
