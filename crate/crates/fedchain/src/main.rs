fn main() {
    std::process::exit(fedchain::harness::cli::main());
}
