fn main() {
    std::process::exit(ivep::cli::main());
}
