fn main() {
    std::process::exit(pseudonym_cli::run(std::env::args()));
}
