fn main() {
    std::process::exit(jointrecon_cli::run(std::env::args().collect()));
}
