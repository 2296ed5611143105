fn main() {
    std::process::exit(cfrdd::cli::run_cli(std::env::args()));
}
