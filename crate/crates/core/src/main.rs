fn main() {
    std::process::exit(liforge::cli::main_with_args(std::env::args_os()));
}
