fn main() {
    std::process::exit(se3reg::cli::run(std::env::args_os()));
}
