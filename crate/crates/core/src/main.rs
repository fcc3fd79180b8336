fn main() {
    std::process::exit(dislocore::cli::run(std::env::args_os()));
}
