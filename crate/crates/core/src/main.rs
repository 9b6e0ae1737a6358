fn main() {
    std::process::exit(geodl::cli::run(std::env::args_os()));
}
