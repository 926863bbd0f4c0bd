fn main() {
    std::process::exit(tuni::cli::run(std::env::args_os()));
}
