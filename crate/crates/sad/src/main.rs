fn main() {
    std::process::exit(sad::cli::run(std::env::args_os()));
}
