fn main() {
    std::process::exit(detfuse::cli::run());
}
