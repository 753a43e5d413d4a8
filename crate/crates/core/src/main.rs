fn main() {
    std::process::exit(pailab::cli::run(std::env::args_os()));
}
