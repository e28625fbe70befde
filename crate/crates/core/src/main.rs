fn main() {
    std::process::exit(qdist::cli::run());
}
