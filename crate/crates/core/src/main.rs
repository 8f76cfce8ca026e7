fn main() {
    std::process::exit(fvk::cli::run(std::env::args_os()));
}
