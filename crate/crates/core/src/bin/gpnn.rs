fn main() {
    std::process::exit(gpnn::cli::run(std::env::args_os()));
}
