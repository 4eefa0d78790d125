fn main() {
    std::process::exit(emocolor::cli::main());
}
