fn main() {
    std::process::exit(gibbs1d::cli::run());
}
