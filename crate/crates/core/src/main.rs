fn main() {
    std::process::exit(freekummer::cli::run(std::env::args_os()));
}
