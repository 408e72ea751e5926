fn main() {
    std::process::exit(fgreward_core::cli::run(std::env::args_os()));
}
