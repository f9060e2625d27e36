fn main() {
    std::process::exit(vsrf::cli::main());
}
