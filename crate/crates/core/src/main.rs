fn main() {
    std::process::exit(posco::cli::main_with(std::env::args()));
}
