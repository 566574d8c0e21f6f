fn main() {
    std::process::exit(scribe::cli::run(std::env::args_os()));
}
