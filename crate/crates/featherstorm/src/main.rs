fn main() {
    std::process::exit(featherstorm::cli::run());
}
