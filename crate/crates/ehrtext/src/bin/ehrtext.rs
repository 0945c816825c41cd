fn main() {
    ehrtext::cli::init_logging();
    std::process::exit(ehrtext::cli::run(std::env::args()));
}
