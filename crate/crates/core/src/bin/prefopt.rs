fn main() {
    std::process::exit(prefopt::cli::main_with_args(std::env::args_os()));
}
