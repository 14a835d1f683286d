fn main() {
    std::process::exit(hiersum::cli::run());
}
