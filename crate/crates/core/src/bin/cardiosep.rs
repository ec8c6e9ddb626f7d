fn main() {
    std::process::exit(cardiosep::cli::run(std::env::args_os()));
}
