fn main() {
    std::process::exit(medqa_cli::run());
}
