fn main() {
    std::process::exit(morphkit::cli::run(std::env::args_os()));
}
