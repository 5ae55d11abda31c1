fn main() {
    std::process::exit(paul::cli::run(std::env::args_os()));
}
