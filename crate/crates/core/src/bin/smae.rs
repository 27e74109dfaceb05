fn main() {
    std::process::exit(smae::cli::run(std::env::args_os()));
}
