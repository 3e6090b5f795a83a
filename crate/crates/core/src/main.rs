fn main() {
    std::process::exit(drpm::cli::main());
}
