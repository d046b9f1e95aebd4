fn main() {
    std::process::exit(mvr::cli::run(std::env::args_os()));
}
