fn main() {
    std::process::exit(fairens::cli::run(std::env::args_os()));
}
