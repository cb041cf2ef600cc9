fn main() {
    std::process::exit(taglab::cli::run(std::env::args_os()));
}
