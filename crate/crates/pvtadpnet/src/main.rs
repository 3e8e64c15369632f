fn main() {
    std::process::exit(pvtadpnet::cli::run());
}
