fn main() {
    std::process::exit(fairstitch::cli::run_from(std::env::args_os()));
}
