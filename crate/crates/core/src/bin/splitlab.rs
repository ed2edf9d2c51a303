fn main() {
    std::process::exit(splitlab::cli::main_with(std::env::args_os()));
}
