fn main() {
    std::process::exit(specforge::cli::main());
}
