fn main() {
    std::process::exit(lls::cli::run(std::env::args_os()));
}
