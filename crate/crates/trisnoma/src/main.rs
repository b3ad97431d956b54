fn main() {
    std::process::exit(trisnoma::cli::run(std::env::args_os()));
}
