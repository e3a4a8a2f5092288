fn main() {
    std::process::exit(gaflow::cli::run(std::env::args_os()));
}
