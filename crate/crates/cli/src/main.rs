fn main() {
    std::process::exit(travista_cli::cli::run(std::env::args_os()));
}
